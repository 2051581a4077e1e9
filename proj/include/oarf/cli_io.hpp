#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oarf/dataset.hpp"
#include "oarf/estimators.hpp"
#include "oarf/simlab.hpp"

namespace oarf {

struct CsvOptions {
  double missing_threshold = 0.5;  // covariate columns above this missing fraction are dropped
};

struct CategoryMapping {
  std::string column;
  std::vector<std::string> levels;  // code = first-appearance index
};

struct IngestReport {
  int rows_read = 0;
  int rows_dropped = 0;  // complete-case removals
  std::vector<std::string> columns_dropped;
  std::vector<ColumnInfo> inferred;
  std::vector<CategoryMapping> category_mappings;
};

// Headered CSV in, complete-case Dataset out. String categoricals become
// ordinal codes in first-appearance order; the treatment column must be
// numeric {0,1} or a two-level categorical.
std::pair<Dataset, IngestReport> load_csv(const std::string& path, const std::string& outcome_col,
                                          const std::string& treatment_col, const CsvOptions& opts);

// Inverse of load_csv for fully numeric data; %.17g formatting so a
// round-trip reproduces identical matrices.
void write_csv(const Dataset& data, const std::string& path, const std::string& outcome_col = "outcome",
               const std::string& treatment_col = "treatment");

// Everything a command needs; mirrors the CLI flags one to one (a JSON
// config file fills the same fields).
struct RunConfig {
  std::string command;  // simulate | estimate | tune | mse-curve

  // simulate / mse-curve
  int setting = 1;
  int n = 500;
  int p = 20;
  double theta = 0.5;
  double rho = -1.0;
  int reps = 100;
  std::vector<std::string> methods = {"oarf"};
  bool with_ci = false;
  std::vector<int> n_grid;

  // estimate / tune
  std::string input_path;
  std::string outcome_col;
  std::string treatment_col;
  std::string method = "oarf";
  int bootstrap = 0;
  double missing_threshold = 0.5;
  std::vector<TuneGridPoint> tune_grid;

  // shared
  int n_boot = 200;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  bool seed_set = false;  // seeds are mandatory; no wall-clock fallback
  std::string output_prefix = "oarf_out";
  EstimatorOptions est;

  void validate() const;
};

// FNV-1a over the canonical JSON form; stamped into every output file so a
// report can be regenerated from its own header.
std::string config_hash(const RunConfig& config);

std::string config_to_json(const RunConfig& config);
void apply_json_config(RunConfig& config, const std::string& json_text);

// Dispatches to the simulation lab or the estimators, writes the JSON
// summary and CSV detail files, prints a short human summary. Returns a
// process exit status; failures also leave <prefix>.error.json behind.
int run(const RunConfig& config);

}  // namespace oarf
