#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "capgov/harness.hpp"
#include "capgov/stats.hpp"

namespace capgov {

struct TableCell {
  double mean = 0.0;
  std::optional<double> std;  // absent for counts and single-valued entries
  bool operator==(const TableCell&) const = default;
};

// A results table: row labels, column names, and mean (± std) cells; n/a cells are empty.
struct Table {
  std::string id;
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::vector<std::vector<std::optional<TableCell>>> cells;  // [row][column]

  const std::optional<TableCell>& at(const std::string& row, const std::string& column) const;

  std::string to_markdown(int decimals = 3) const;
  // One line per row: label, then <column>_mean and <column>_std for every column.
  std::string to_csv() const;
  static Table from_csv(const std::string& id, const std::string& text);
  bool operator==(const Table&) const = default;
};

// Mean and sample std across seeds of one metric for one variant.
std::optional<TableCell> seed_summary(const ExperimentResult& r, Variant v, const std::string& metric);

Table detection_table(const ExperimentResult& r);     // admission metrics, baselines vs proposed
Table runtime_table(const ExperimentResult& r);       // runtime violation metrics
Table recovery_table(const ExperimentResult& r);      // recovery metrics
Table per_type_table(const ExperimentResult& r);      // proposed detection per violation type
Table ablation_table(const ExperimentResult& r);      // component ablations
Table override_table(const ExperimentResult& r);      // human override gate
Table confusion_table(const ExperimentResult& r);     // proposed admission confusion counts, pooled over seeds
Table latency_table(const ExperimentResult& r);       // per-component latency, pooled over proposed seeds
Table ttest_table(const std::vector<PairedTestResult>& tests);

// Paired t-tests of variant a against b over matched seeds.
std::vector<PairedTestResult> paired_tests(const ExperimentResult& r, Variant a, Variant b,
                                           const std::vector<std::string>& metrics);

std::vector<std::string> ttest_metrics();

// Every table the variants in r support; tables whose rows are all missing are skipped.
std::vector<Table> all_tables(const ExperimentResult& r);

// Writes <id>.csv and <id>.md per table plus tables.md with all of them.
void write_tables(const std::vector<Table>& tables, const std::filesystem::path& dir);

}  // namespace capgov
