// capgov: run experiments, calibrate, emit tables, replay audit logs, serve the operator console.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime abort or failed check, 4 bind failure.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "capgov/console.hpp"
#include "capgov/harness.hpp"
#include "capgov/runtime.hpp"
#include "capgov/tables.hpp"

using namespace capgov;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeAbort = 3;
constexpr int kBindFailure = 4;

std::atomic<bool> g_shutdown{false};

void on_signal(int) { g_shutdown = true; }

std::string default_config() {
  if (const char* env = std::getenv("CAPGOV_CONFIG")) return env;
  return std::string(CAPGOV_DATA_DIR) + "/run.yaml";
}

// Set by --registry; overrides the registry named in the run config.
std::string g_registry_override;

struct Loaded {
  RunConfig cfg;
  Registry reg;
};

// Config and registry errors exit 2 before any artifact is written.
Loaded load(const std::string& config_path, const std::vector<std::string>& variants,
            const std::vector<std::uint64_t>& seeds) {
  Loaded l{RunConfig::load(config_path), {}};
  if (!g_registry_override.empty()) l.cfg.registry_path = g_registry_override;
  if (l.cfg.registry_path.empty()) l.cfg.registry_path = std::filesystem::path(CAPGOV_DATA_DIR) / "default_registry.yaml";
  l.reg = Registry::load_file(l.cfg.registry_path);
  if (!variants.empty()) {
    l.cfg.variants.clear();
    for (const auto& v : variants) {
      auto parsed = try_parse<Variant>(v);
      if (!parsed) throw ConfigError("unknown variant '" + v + "'");
      l.cfg.variants.push_back(*parsed);
    }
  }
  if (!seeds.empty()) l.cfg.seeds = seeds;
  return l;
}

json experiment_json(const ExperimentResult& r, const RunConfig& cfg) {
  json cells = json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"variant", to_string(c.variant)},
                     {"seed", c.seed},
                     {"metrics", to_json(c.metrics)},
                     {"latency", to_json(c.latency)}});
  return {{"config", cfg.to_json()}, {"cells", cells}};
}

int cmd_run(const std::string& config, const std::vector<std::string>& variants, const std::vector<std::uint64_t>& seeds,
            const std::string& audit_out, const std::string& out_dir, bool profile_latency) {
  Loaded l;
  try {
    l = load(config, variants, seeds);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    std::optional<std::filesystem::path> audit;
    if (!audit_out.empty()) audit = audit_out;
    auto r = run_experiment(l.reg, l.cfg, audit);
    std::filesystem::create_directories(out_dir);
    std::ofstream(std::filesystem::path(out_dir) / "results.json") << experiment_json(r, l.cfg).dump(2) << "\n";
    auto tables = all_tables(r);
    write_tables(tables, out_dir);
    for (const auto& t : tables) {
      if (t.id == "latency" && !profile_latency) continue;
      std::cout << t.to_markdown(t.id == "ttests" ? 6 : 3) << "\n";
    }
    std::cout << "wrote " << r.cells.size() << " cells to " << out_dir << "\n";
  } catch (const std::exception& e) {
    std::cerr << "run aborted: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kOk;
}

int cmd_calibrate(const std::string& config, const std::string& write_path) {
  Loaded l;
  try {
    l = load(config, {}, {});
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  auto report_out = [](const CalibrationReport& rep) {
    std::cout << "fitted: " << to_json(rep.fitted).dump() << "\n";
    std::cout << "objective (max |dev|/tol): " << rep.objective << " over " << rep.evaluations << " evaluations\n";
    for (const auto& [t, x] : rep.achieved)
      std::cout << "  " << t.name << " = " << x << " (target " << t.target << " ± " << t.tolerance << ")\n";
  };
  try {
    auto rep = calibrate(l.reg, l.cfg);
    report_out(rep);
    if (!write_path.empty()) {
      RunConfig out = l.cfg;
      out.calibration = rep.fitted;
      out.variants.clear();
      std::ofstream f(write_path);
      f << "# Calibrated by `capgov calibrate`.\n" << out.serialize();
      if (!f) throw std::runtime_error("cannot write " + write_path);
      std::cout << "wrote " << write_path << "\n";
    }
  } catch (const CalibrationInfeasible& e) {
    report_out(e.report);
    std::cerr << e.what() << "\n";
    return kRuntimeAbort;
  } catch (const std::exception& e) {
    std::cerr << "calibration aborted: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kOk;
}

int cmd_tables(const std::string& results, const std::string& out_dir) {
  try {
    std::ifstream in(results);
    if (!in) throw ConfigError("cannot open " + results);
    auto j = json::parse(in);
    ExperimentResult r;
    for (const auto& c : j.at("cells")) {
      CellResult cell;
      cell.variant = parse_enum<Variant>(c.at("variant").get<std::string>());
      cell.seed = c.at("seed").get<std::uint64_t>();
      cell.metrics = metrics_from_json(c.at("metrics"));
      r.cells.push_back(std::move(cell));
    }
    auto tables = all_tables(r);
    // Latency needs per-trial samples, which results.json does not carry.
    std::erase_if(tables, [](const Table& t) { return t.id == "latency"; });
    write_tables(tables, out_dir);
    for (const auto& t : tables) std::cout << t.to_markdown(t.id == "ttests" ? 6 : 3) << "\n";
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "tables failed: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kOk;
}

int cmd_replay(const std::string& audit, bool show_states) {
  try {
    auto log = read_log_file(audit);
    auto r = replay(log);
    std::cout << "variant " << to_string(r.variant) << ", seed " << r.seed << ", " << r.records.size() << " sessions\n";
    if (show_states)
      for (const auto& [sid, seq] : r.state_sequences) {
        std::cout << "  session " << sid << ": RUNNING";
        for (const auto& s : seq) std::cout << " -> " << s;
        std::cout << "\n";
      }
    std::cout << "recomputed: " << to_json(r.metrics).dump() << "\n";
    const auto& c = r.metrics.confusion;
    std::cout << "confusion TP " << c.tp << " FP " << c.fp << " FN " << c.fn << " TN " << c.tn << "\n";
    if (!r.matches()) {
      std::cout << "recorded:   " << to_json(r.recorded).dump() << "\n";
      std::cerr << "replay mismatch: recomputed metrics differ from the recorded summary\n";
      return kRuntimeAbort;
    }
    std::cout << "replay matches recorded metrics\n";
  } catch (const CorruptLog& e) {
    std::cerr << e.what() << "\n";
    return kRuntimeAbort;
  } catch (const std::exception& e) {
    std::cerr << "replay failed: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kOk;
}

int cmd_validate(const std::string& path) {
  try {
    auto reg = Registry::load_file(path);
    reg.validate();
    std::cout << path << ": " << reg.capabilities().size() << " capabilities, " << reg.profile_ids().size()
              << " profiles, valid\n";
  } catch (const std::exception& e) {
    std::cerr << path << ": " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}

int cmd_serve(const std::string& config, const std::string& variant, const std::vector<std::uint64_t>& seeds,
              bool live_override, const std::string& bind, double ticket_timeout_s, int tick_ms, int trials,
              const std::string& audit_out) {
  Loaded l;
  try {
    l = load(config, {variant}, seeds);
    if (trials > 0) l.cfg.trials_per_seed = trials;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  OverrideGateway gateway;
  CommandRouter router(gateway);
  ConsoleServer server(router);
  if (live_override) {
    try {
      server.start(bind);
    } catch (const std::exception& e) {
      std::cerr << "BindFailure: " << e.what() << "\n";
      return kBindFailure;
    }
    std::cout << "console protocol v" << kProtocolVersion << " listening on port " << server.port() << std::endl;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  RuntimeHooks hooks;
  hooks.live = live_override;
  hooks.ticket_timeout = std::chrono::milliseconds(static_cast<long>(ticket_timeout_s * 1000));
  hooks.shutdown = &g_shutdown;
  hooks.on_tick = [tick_ms] { std::this_thread::sleep_for(std::chrono::milliseconds(tick_ms)); };
  if (live_override) {
    hooks.poll_command = [&](std::uint64_t sid) { return router.poll(sid); };
    hooks.on_launch = [&](std::uint64_t sid, const std::string& cap, AuthorityMode a) { router.on_launch(sid, cap, a); };
    hooks.on_state = [&](std::uint64_t sid, const std::string& cap, SessionState s, const std::string& cause) {
      server.publish_state(sid, cap, s, cause);
    };
  }
  // Pending tickets block their session; on shutdown they expire so every session can fail closed.
  std::atomic<bool> done{false};
  std::thread watchdog([&] {
    while (!done) {
      if (g_shutdown) gateway.expire_all_pending();
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  });
  int rc = kOk;
  try {
    std::filesystem::create_directories(audit_out);
    for (auto seed : l.cfg.seeds) {
      AuditLog log(std::make_shared<FileSink>(std::filesystem::path(audit_out) / cell_log_name(l.cfg.variants[0], seed)));
      auto cell = run_cell(l.reg, l.cfg, l.cfg.variants[0], seed, &log, &hooks, &gateway);
      std::cout << "seed " << seed << ": " << to_json(cell.metrics).dump() << std::endl;
      if (g_shutdown) break;
    }
  } catch (const std::exception& e) {
    std::cerr << "serve aborted: " << e.what() << "\n";
    rc = kRuntimeAbort;
  }
  done = true;
  watchdog.join();
  server.stop();
  if (g_shutdown) std::cout << "shut down; open sessions stopped" << std::endl;
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runtime governance for embodied-agent capability execution"};
  app.require_subcommand(1);

  std::string config = default_config();
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  std::string audit_out, out_dir = "results";
  bool profile_latency = false;

  auto* run = app.add_subcommand("run", "Run the experiment grid");
  run->add_option("--config", config, "Run config (default $CAPGOV_CONFIG or data/run.yaml)");
  run->add_option("--variants", variants, "Variants to run")->delimiter(',');
  run->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');
  run->add_option("--audit-out", audit_out, "Directory for one audit log per cell");
  run->add_option("--registry", g_registry_override, "Registry YAML (overrides the config)");
  run->add_option("--out,--emit-tables", out_dir, "Directory for results.json and tables");
  run->add_flag("--profile-latency", profile_latency, "Print the latency table");

  std::string write_path;
  auto* cal = app.add_subcommand("calibrate", "Fit the free constants to the reference targets");
  cal->add_option("--config", config, "Run config");
  cal->add_option("--registry", g_registry_override, "Registry YAML (overrides the config)");
  cal->add_option("--write", write_path, "Write the calibrated run config here");

  std::string results;
  auto* tab = app.add_subcommand("tables", "Render tables from a results.json");
  tab->add_option("--results", results, "results.json from a run")->required();
  tab->add_option("--out", out_dir, "Directory for tables");

  std::string audit;
  bool show_states = false;
  auto* rep = app.add_subcommand("replay", "Recompute metrics from an audit log");
  rep->add_option("--audit", audit, "Audit log")->required();
  rep->add_flag("--states", show_states, "Print each session's state sequence");

  std::string registry_path;
  auto* val = app.add_subcommand("validate-registry", "Parse and validate a registry file");
  val->add_option("registry", registry_path, "Registry YAML")->required();

  bool live = false;
  std::string bind = "127.0.0.1:7421", variant = "proposed", serve_audit = "serve_audit";
  double ticket_timeout = 300.0;
  int tick_ms = 50, trials = 0;
  auto* srv = app.add_subcommand("serve", "Run governed sessions and serve the operator console");
  srv->add_option("--config", config, "Run config");
  srv->add_option("--registry", g_registry_override, "Registry YAML (overrides the config)");
  srv->add_flag("--live-override", live, "Resolve tickets from the console instead of the simulated approver");
  srv->add_option("--override-bind", bind, "host:port for the console protocol");
  srv->add_option("--ticket-timeout", ticket_timeout, "Seconds before a pending ticket expires");
  srv->add_option("--variant", variant, "Variant to serve");
  srv->add_option("--seeds", seeds, "Seeds")->delimiter(',');
  srv->add_option("--tick-ms", tick_ms, "Wall-clock milliseconds per tick");
  srv->add_option("--trials", trials, "Trials per seed (default from config)");
  srv->add_option("--audit-out", serve_audit, "Directory for audit logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  if (*run) return cmd_run(config, variants, seeds, audit_out, out_dir, profile_latency);
  if (*cal) return cmd_calibrate(config, write_path);
  if (*tab) return cmd_tables(results, out_dir);
  if (*rep) return cmd_replay(audit, show_states);
  if (*val) return cmd_validate(registry_path);
  if (*srv) return cmd_serve(config, variant, seeds, live, bind, ticket_timeout, tick_ms, trials, serve_audit);
  return kConfigError;
}
