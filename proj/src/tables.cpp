#include "capgov/tables.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace capgov {

namespace {

std::string fixed(double v, int decimals) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

std::string shortest(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("bad number '" + s + "' in table csv");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::optional<TableCell> exact(double v) { return TableCell{v, std::nullopt}; }

struct Column {
  std::string label;
  std::string metric;
};

Table variant_table(const ExperimentResult& r, std::string id, std::string title, const std::vector<Variant>& rows,
                    const std::vector<Column>& cols) {
  Table t;
  t.id = std::move(id);
  t.title = std::move(title);
  for (const auto& c : cols) t.columns.push_back(c.label);
  for (auto v : rows) {
    if (r.of(v).empty()) continue;
    t.rows.emplace_back(variant_label(v));
    std::vector<std::optional<TableCell>> line;
    for (const auto& c : cols) line.push_back(seed_summary(r, v, c.metric));
    t.cells.push_back(std::move(line));
  }
  return t;
}

}  // namespace

const std::optional<TableCell>& Table::at(const std::string& row, const std::string& column) const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] != row) continue;
    for (std::size_t j = 0; j < columns.size(); ++j)
      if (columns[j] == column) return cells[i][j];
  }
  throw std::out_of_range("table " + id + " has no cell (" + row + ", " + column + ")");
}

std::string Table::to_markdown(int decimals) const {
  std::ostringstream os;
  os << "### " << title << "\n\n| |";
  for (const auto& c : columns) os << ' ' << c << " |";
  os << "\n|---|";
  for (std::size_t j = 0; j < columns.size(); ++j) os << "---|";
  os << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << "| " << rows[i] << " |";
    for (const auto& c : cells[i]) {
      if (!c) os << " -- |";
      else if (c->std) os << ' ' << fixed(c->mean, decimals) << "±" << fixed(*c->std, decimals) << " |";
      else os << ' ' << fixed(c->mean, decimals) << " |";
    }
    os << '\n';
  }
  return os.str();
}

std::string Table::to_csv() const {
  std::ostringstream os;
  os << "row";
  for (const auto& c : columns) os << ',' << c << "_mean," << c << "_std";
  os << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << rows[i];
    for (const auto& c : cells[i]) {
      os << ',';
      if (c) os << shortest(c->mean);
      os << ',';
      if (c && c->std) os << shortest(*c->std);
    }
    os << '\n';
  }
  return os.str();
}

Table Table::from_csv(const std::string& id, const std::string& text) {
  Table t;
  t.id = id;
  t.title = id;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty table csv");
  auto head = split(line, ',');
  if (head.empty() || head[0] != "row" || head.size() % 2 != 1) throw std::invalid_argument("bad table csv header");
  for (std::size_t j = 1; j < head.size(); j += 2) {
    const auto& m = head[j];
    if (m.size() < 5 || m.substr(m.size() - 5) != "_mean") throw std::invalid_argument("bad column '" + m + "'");
    t.columns.push_back(m.substr(0, m.size() - 5));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != head.size()) throw std::invalid_argument("table csv row width mismatch");
    t.rows.push_back(f[0]);
    std::vector<std::optional<TableCell>> cells;
    for (std::size_t j = 1; j < f.size(); j += 2) {
      if (f[j].empty()) {
        cells.emplace_back();
        continue;
      }
      TableCell c{parse_double(f[j]), std::nullopt};
      if (!f[j + 1].empty()) c.std = parse_double(f[j + 1]);
      cells.push_back(c);
    }
    t.cells.push_back(std::move(cells));
  }
  return t;
}

std::optional<TableCell> seed_summary(const ExperimentResult& r, Variant v, const std::string& metric) {
  std::vector<double> xs;
  for (const auto* c : r.of(v))
    if (auto x = metric_value(c->metrics, metric)) xs.push_back(*x);
  if (xs.empty()) return std::nullopt;
  auto ms = mean_std(xs);
  return TableCell{ms.mean, ms.std};
}

namespace {
const std::vector<Variant> kMethods{Variant::direct_execution, Variant::static_rule, Variant::capability_internal,
                                    Variant::proposed};
}

Table detection_table(const ExperimentResult& r) {
  return variant_table(r, "admission", "Unauthorized action interception", kMethods,
                       {{"UAIR", "uair"}, {"FRR", "frr"}, {"ADL (us)", "adl_us"}});
}

Table runtime_table(const ExperimentResult& r) {
  return variant_table(r, "runtime", "Runtime violation handling", kMethods,
                       {{"RVDR", "rvdr"}, {"DL (ticks)", "dl_ticks"}, {"CEF", "cef"}, {"UCR", "ucr"}});
}

Table recovery_table(const ExperimentResult& r) {
  return variant_table(r, "recovery", "Failure recovery", kMethods,
                       {{"RSR", "rsr"}, {"RBSR", "rbsr"}, {"MRT (s)", "mrt_s"}, {"RPC", "rpc"}});
}

Table per_type_table(const ExperimentResult& r) {
  Table t;
  t.id = "per_type";
  t.title = "Detection rate per violation type";
  t.columns = {"Detection"};
  if (r.of(Variant::proposed).empty()) return t;
  for (auto v : all_values<ViolationType>()) {
    t.rows.emplace_back(to_string(v));
    t.cells.push_back({seed_summary(r, Variant::proposed, "detect_" + std::string(to_string(v)))});
  }
  return t;
}

Table ablation_table(const ExperimentResult& r) {
  auto t = variant_table(r, "ablation", "Component ablations",
                         {Variant::proposed, Variant::ablate_admit, Variant::ablate_policy, Variant::ablate_watch,
                          Variant::ablate_recov, Variant::ablate_human},
                         {{"UAIR", "uair"}, {"RVDR", "rvdr"}, {"UCR", "ucr"}, {"RSR", "rsr"}, {"RPC", "rpc"}});
  for (auto& row : t.rows)
    if (row == variant_label(Variant::proposed)) row = "Full";
  return t;
}

Table override_table(const ExperimentResult& r) {
  return variant_table(r, "override", "Human override gate", {Variant::override_on, Variant::override_off},
                       {{"Block rate", "block_rate"}, {"Incorrect allow", "incorrect_allow"}});
}

Table confusion_table(const ExperimentResult& r) {
  Table t;
  t.id = "confusion";
  t.title = "Admission decisions of the full framework, pooled over seeds";
  t.columns = {"Blocked", "Allowed"};
  auto cells = r.of(Variant::proposed);
  if (cells.empty()) return t;
  Confusion sum;
  for (const auto* c : cells) {
    sum.tp += c->metrics.confusion.tp;
    sum.fp += c->metrics.confusion.fp;
    sum.fn += c->metrics.confusion.fn;
    sum.tn += c->metrics.confusion.tn;
  }
  t.rows = {"Unauthorized", "Authorized"};
  t.cells = {{exact(sum.tp), exact(sum.fn)}, {exact(sum.fp), exact(sum.tn)}};
  return t;
}

Table latency_table(const ExperimentResult& r) {
  Table t;
  t.id = "latency";
  t.title = "Governance latency per component (us)";
  t.columns = {"Mean", "Std", "P50", "P99", "Samples"};
  auto cells = r.of(Variant::proposed);
  if (cells.empty()) return t;
  std::vector<TrialRecord> all;
  for (const auto* c : cells) all.insert(all.end(), c->records.begin(), c->records.end());
  auto p = latency_profile(all);
  auto row = [&](const std::string& label, const LatencyStats& s) {
    t.rows.push_back(label);
    t.cells.push_back({exact(s.mean_us), exact(s.std_us), exact(s.p50_us), exact(s.p99_us),
                       exact(static_cast<double>(s.samples))});
  };
  row("Admission", p.admission);
  row("Policy guard", p.policy_guard);
  row("Watcher step", p.watcher_step);
  row("Recovery", p.recovery);
  row("Total pre-exec", p.total_pre_exec);
  return t;
}

std::vector<std::string> ttest_metrics() { return {"uair", "rvdr", "ucr", "rsr", "rpc"}; }

std::vector<PairedTestResult> paired_tests(const ExperimentResult& r, Variant a, Variant b,
                                           const std::vector<std::string>& metrics) {
  std::vector<PairedTestResult> out;
  for (const auto& m : metrics) {
    std::vector<double> xa, xb;
    for (const auto* ca : r.of(a)) {
      const auto* cb = r.find(b, ca->seed);
      if (!cb) continue;
      auto va = metric_value(ca->metrics, m);
      auto vb = metric_value(cb->metrics, m);
      if (!va || !vb) continue;
      xa.push_back(*va);
      xb.push_back(*vb);
    }
    out.push_back(paired_t_test(m, xa, xb));
  }
  return out;
}

Table ttest_table(const std::vector<PairedTestResult>& tests) {
  Table t;
  t.id = "ttests";
  t.title = "Paired t-tests, full framework vs capability-internal safety";
  t.columns = {"Mean diff", "t", "p", "Seeds"};
  for (const auto& x : tests) {
    t.rows.push_back(x.metric);
    t.cells.push_back({exact(x.mean_diff), exact(x.t), exact(x.p), exact(x.seeds)});
  }
  return t;
}

std::vector<Table> all_tables(const ExperimentResult& r) {
  std::vector<Table> out{detection_table(r), runtime_table(r), recovery_table(r), per_type_table(r),
                         ablation_table(r),  override_table(r), confusion_table(r), latency_table(r)};
  if (!r.of(Variant::proposed).empty() && r.of(Variant::capability_internal).size() >= 2)
    out.push_back(ttest_table(paired_tests(r, Variant::proposed, Variant::capability_internal, ttest_metrics())));
  std::erase_if(out, [](const Table& t) { return t.rows.empty(); });
  return out;
}

void write_tables(const std::vector<Table>& tables, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream all(dir / "tables.md");
  for (const auto& t : tables) {
    std::ofstream(dir / (t.id + ".csv")) << t.to_csv();
    // p-values span many orders of magnitude; the t-test table keeps more digits.
    auto md = t.to_markdown(t.id == "ttests" ? 6 : 3);
    std::ofstream(dir / (t.id + ".md")) << md;
    all << md << '\n';
  }
  if (!all) throw std::runtime_error("cannot write tables to " + dir.string());
}

}  // namespace capgov
