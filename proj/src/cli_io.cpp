#include "oarf/cli_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace oarf {

namespace {

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

bool is_missing_token(const std::string& raw) {
  std::string s;
  for (char c : raw)
    if (!std::isspace(static_cast<unsigned char>(c))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s.empty() || s == "na" || s == "n/a" || s == "null" || s == "nan" || s == "none" || s == ".";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(field);
  return fields;
}

bool parse_number(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(end[-1]))) --end;
  if (begin == end) return false;
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::pair<Dataset, IngestReport> load_csv(const std::string& path, const std::string& outcome_col,
                                          const std::string& treatment_col, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);

  int outcome_idx = -1, treatment_idx = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == outcome_col) outcome_idx = static_cast<int>(j);
    if (header[j] == treatment_col) treatment_idx = static_cast<int>(j);
  }
  if (outcome_idx < 0) throw std::runtime_error(path + ": no column named '" + outcome_col + "'");
  if (treatment_idx < 0) throw std::runtime_error(path + ": no column named '" + treatment_col + "'");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error(path + ": row " + std::to_string(rows.size() + 1) + " has " +
                               std::to_string(fields.size()) + " fields, expected " + std::to_string(header.size()));
    rows.push_back(std::move(fields));
  }

  IngestReport report;
  report.rows_read = static_cast<int>(rows.size());
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  // Covariates: everything except outcome and treatment. Columns whose
  // missing fraction exceeds the threshold are dropped before the
  // complete-case pass.
  std::vector<int> covariate_cols;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const int ji = static_cast<int>(j);
    if (ji == outcome_idx || ji == treatment_idx) continue;
    int missing = 0;
    for (const auto& r : rows)
      if (is_missing_token(r[j])) ++missing;
    if (static_cast<double>(missing) / static_cast<double>(rows.size()) > opts.missing_threshold)
      report.columns_dropped.push_back(header[j]);
    else
      covariate_cols.push_back(ji);
  }

  std::vector<int> kept_rows;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    bool complete = !is_missing_token(rows[i][static_cast<std::size_t>(outcome_idx)]) &&
                    !is_missing_token(rows[i][static_cast<std::size_t>(treatment_idx)]);
    for (int j : covariate_cols)
      if (complete && is_missing_token(rows[i][static_cast<std::size_t>(j)])) complete = false;
    if (complete) kept_rows.push_back(static_cast<int>(i));
  }
  report.rows_dropped = report.rows_read - static_cast<int>(kept_rows.size());
  if (kept_rows.empty()) throw std::runtime_error(path + ": no complete rows after ingestion");

  const int n = static_cast<int>(kept_rows.size());
  Dataset data;
  data.x = Matrix(n, static_cast<int>(covariate_cols.size()));
  data.y.resize(static_cast<std::size_t>(n));
  data.d.resize(static_cast<std::size_t>(n));

  // Outcome must be numeric.
  for (int i = 0; i < n; ++i) {
    const std::string& tok = rows[static_cast<std::size_t>(kept_rows[static_cast<std::size_t>(i)])]
                                 [static_cast<std::size_t>(outcome_idx)];
    if (!parse_number(tok, data.y[static_cast<std::size_t>(i)]))
      throw std::runtime_error(path + ": outcome value '" + tok + "' is not numeric (row " +
                               std::to_string(kept_rows[static_cast<std::size_t>(i)] + 1) + ")");
  }

  // Treatment: numeric {0,1}, or a two-level categorical encoded in
  // first-appearance order.
  {
    bool numeric = true;
    for (int i = 0; i < n && numeric; ++i) {
      double v;
      numeric = parse_number(
          rows[static_cast<std::size_t>(kept_rows[static_cast<std::size_t>(i)])][static_cast<std::size_t>(treatment_idx)],
          v);
    }
    if (numeric) {
      for (int i = 0; i < n; ++i) {
        double v = 0.0;
        const int raw_row = kept_rows[static_cast<std::size_t>(i)];
        parse_number(rows[static_cast<std::size_t>(raw_row)][static_cast<std::size_t>(treatment_idx)], v);
        if (v != 0.0 && v != 1.0)
          throw std::runtime_error(path + ": treatment value " + std::to_string(v) + " at data row " +
                                   std::to_string(raw_row + 1) + " is not in {0,1}");
        data.d[static_cast<std::size_t>(i)] = static_cast<int>(v);
      }
    } else {
      std::vector<std::string> levels;
      for (int i = 0; i < n; ++i) {
        const int raw_row = kept_rows[static_cast<std::size_t>(i)];
        const std::string& tok = rows[static_cast<std::size_t>(raw_row)][static_cast<std::size_t>(treatment_idx)];
        auto it = std::find(levels.begin(), levels.end(), tok);
        if (it == levels.end()) {
          levels.push_back(tok);
          it = std::prev(levels.end());
        }
        const int code = static_cast<int>(it - levels.begin());
        if (code > 1)
          throw std::runtime_error(path + ": treatment column has more than two levels ('" + tok + "' at data row " +
                                   std::to_string(raw_row + 1) + ")");
        data.d[static_cast<std::size_t>(i)] = code;
      }
      report.category_mappings.push_back({treatment_col, levels});
    }
  }

  // Covariates: numeric pass-through or first-appearance ordinal coding.
  for (std::size_t c = 0; c < covariate_cols.size(); ++c) {
    const int j = covariate_cols[c];
    bool numeric = true;
    for (int i = 0; i < n && numeric; ++i) {
      double v;
      numeric = parse_number(rows[static_cast<std::size_t>(kept_rows[static_cast<std::size_t>(i)])]
                                 [static_cast<std::size_t>(j)],
                             v);
    }
    if (numeric) {
      for (int i = 0; i < n; ++i) {
        double v = 0.0;
        parse_number(rows[static_cast<std::size_t>(kept_rows[static_cast<std::size_t>(i)])][static_cast<std::size_t>(j)],
                     v);
        data.x(i, static_cast<int>(c)) = v;
      }
    } else {
      std::vector<std::string> levels;
      for (int i = 0; i < n; ++i) {
        const std::string& tok =
            rows[static_cast<std::size_t>(kept_rows[static_cast<std::size_t>(i)])][static_cast<std::size_t>(j)];
        auto it = std::find(levels.begin(), levels.end(), tok);
        if (it == levels.end()) {
          levels.push_back(tok);
          it = std::prev(levels.end());
        }
        data.x(i, static_cast<int>(c)) = static_cast<double>(it - levels.begin());
      }
      report.category_mappings.push_back({header[static_cast<std::size_t>(j)], levels});
    }
    ColumnInfo info;
    info.name = header[static_cast<std::size_t>(j)];
    info.kind = infer_kind(data.x.col(static_cast<int>(c)));
    data.col_meta.push_back(info);
  }

  report.inferred = data.col_meta;
  data.validate();
  return {std::move(data), std::move(report)};
}

void write_csv(const Dataset& data, const std::string& path, const std::string& outcome_col,
               const std::string& treatment_col) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[32];
  for (int j = 0; j < data.p(); ++j) out << quote_csv(data.col_meta[static_cast<std::size_t>(j)].name) << ',';
  out << quote_csv(outcome_col) << ',' << quote_csv(treatment_col) << "\n";
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.p(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", data.x(i, j));
      out << buf << ',';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", data.y[static_cast<std::size_t>(i)]);
    out << buf << ',' << data.d[static_cast<std::size_t>(i)] << "\n";
  }
}

// ---------------------------------------------------------------------------
// RunConfig serialization and hashing
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  static const std::set<std::string> commands = {"simulate", "estimate", "tune", "mse-curve"};
  if (!commands.count(command)) throw std::invalid_argument("config: unknown command '" + command + "'");
  if (!seed_set) throw std::invalid_argument("config: seed is mandatory");
  if (command == "estimate" || command == "tune") {
    if (input_path.empty()) throw std::invalid_argument("config: input path required");
    std::ifstream probe(input_path);
    if (!probe) throw std::invalid_argument("config: input path does not exist: " + input_path);
    if (outcome_col.empty() || treatment_col.empty())
      throw std::invalid_argument("config: outcome and treatment columns required");
  }
  if (command == "mse-curve" && n_grid.empty()) throw std::invalid_argument("config: mse-curve needs an n grid");
}

namespace {

nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json j;
  j["command"] = c.command;
  j["setting"] = c.setting;
  j["n"] = c.n;
  j["p"] = c.p;
  j["theta"] = c.theta;
  j["rho"] = c.rho;
  j["reps"] = c.reps;
  j["methods"] = c.methods;
  j["with_ci"] = c.with_ci;
  j["n_grid"] = c.n_grid;
  j["input"] = c.input_path;
  j["outcome"] = c.outcome_col;
  j["treatment"] = c.treatment_col;
  j["method"] = c.method;
  j["bootstrap"] = c.bootstrap;
  j["missing_threshold"] = c.missing_threshold;
  j["n_boot"] = c.n_boot;
  j["alpha"] = c.alpha;
  j["seed"] = c.seed;
  j["output_prefix"] = c.output_prefix;
  j["trees"] = c.est.fc_prop.num_trees;
  j["outcome_trees"] = c.est.fc_outcome.num_trees;
  j["mtry"] = c.est.fc_prop.mtry;
  j["min_node_size"] = c.est.fc_prop.min_node_size;
  j["max_depth"] = c.est.fc_prop.max_depth;
  j["threads"] = c.est.fc_prop.num_threads;
  j["crossfit_k"] = c.est.crossfit_k;
  j["gamma"] = c.est.oarf.penalty.gamma;
  j["lambda0"] = c.est.oarf.penalty.lambda0;
  j["depth_penalty"] = c.est.oarf.penalty.depth_penalty;
  j["entry_rule"] = static_cast<int>(c.est.oarf.rule);
  j["full_sample_importance"] = c.est.full_sample_importance;
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& g : c.tune_grid) grid.push_back({{"mtry", g.mtry}, {"min_node_size", g.min_node_size}, {"num_trees", g.num_trees}});
  j["tune_grid"] = grid;
  return j;
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string config_to_json(const RunConfig& config) { return config_json(config).dump(2); }

void apply_json_config(RunConfig& config, const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  maybe_get(j, "command", config.command);
  maybe_get(j, "setting", config.setting);
  maybe_get(j, "n", config.n);
  maybe_get(j, "p", config.p);
  maybe_get(j, "theta", config.theta);
  maybe_get(j, "rho", config.rho);
  maybe_get(j, "reps", config.reps);
  maybe_get(j, "methods", config.methods);
  maybe_get(j, "with_ci", config.with_ci);
  maybe_get(j, "n_grid", config.n_grid);
  maybe_get(j, "input", config.input_path);
  maybe_get(j, "outcome", config.outcome_col);
  maybe_get(j, "treatment", config.treatment_col);
  maybe_get(j, "method", config.method);
  maybe_get(j, "bootstrap", config.bootstrap);
  maybe_get(j, "missing_threshold", config.missing_threshold);
  maybe_get(j, "n_boot", config.n_boot);
  maybe_get(j, "alpha", config.alpha);
  if (j.contains("seed")) {
    config.seed = j.at("seed").get<std::uint64_t>();
    config.seed_set = true;
  }
  maybe_get(j, "output_prefix", config.output_prefix);
  maybe_get(j, "trees", config.est.fc_prop.num_trees);
  maybe_get(j, "outcome_trees", config.est.fc_outcome.num_trees);
  maybe_get(j, "mtry", config.est.fc_prop.mtry);
  maybe_get(j, "min_node_size", config.est.fc_prop.min_node_size);
  maybe_get(j, "max_depth", config.est.fc_prop.max_depth);
  if (j.contains("threads")) {
    config.est.fc_prop.num_threads = j.at("threads").get<int>();
    config.est.fc_outcome.num_threads = config.est.fc_prop.num_threads;
  }
  maybe_get(j, "crossfit_k", config.est.crossfit_k);
  maybe_get(j, "gamma", config.est.oarf.penalty.gamma);
  maybe_get(j, "lambda0", config.est.oarf.penalty.lambda0);
  maybe_get(j, "depth_penalty", config.est.oarf.penalty.depth_penalty);
  if (j.contains("entry_rule")) config.est.oarf.rule = static_cast<EntryRule>(j.at("entry_rule").get<int>());
  maybe_get(j, "full_sample_importance", config.est.full_sample_importance);
  if (j.contains("tune_grid")) {
    config.tune_grid.clear();
    for (const auto& g : j.at("tune_grid"))
      config.tune_grid.push_back({g.at("mtry").get<int>(), g.at("min_node_size").get<int>(), g.at("num_trees").get<int>()});
  }
}

std::string config_hash(const RunConfig& config) {
  const std::string dump = config_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Command dispatch
// ---------------------------------------------------------------------------

namespace {

DgpSpec spec_from_config(const RunConfig& c) {
  DgpSpec spec = DgpSpec::for_setting(c.setting, c.n, c.p);
  spec.theta = c.theta;
  spec.rho = c.rho;
  return spec;
}

McOptions mc_options(const RunConfig& c) {
  McOptions opt;
  opt.reps = c.reps;
  opt.methods = c.methods;
  opt.with_ci = c.with_ci;
  opt.n_boot = c.n_boot;
  opt.alpha = c.alpha;
  opt.seed = c.seed;
  opt.est = c.est;
  return opt;
}

void print_mc_summary(const std::vector<McReport>& reports) {
  std::printf("%-8s %6s %6s %-10s %10s %10s %10s %9s %8s %8s\n", "setting", "n", "reps", "method", "bias", "var",
              "mse", "coverage", "width", "fail");
  for (const McReport& rep : reports) {
    for (const MethodReplicates& m : rep.methods) {
      const McSummary s = rep.summarize(m.method);
      std::printf("%-8d %6d %6d %-10s %10.4f %10.4f %10.4f", rep.spec.setting, rep.spec.n, rep.reps,
                  s.method.c_str(), s.bias, s.variance, s.mse);
      if (std::isfinite(s.coverage))
        std::printf(" %9.3f %8.3f", s.coverage, s.mean_width);
      else
        std::printf(" %9s %8s", "-", "-");
      std::printf(" %8d\n", s.failures);
    }
  }
}

int run_simulate(const RunConfig& config) {
  const DgpSpec spec = spec_from_config(config);
  const McOptions opt = mc_options(config);
  std::vector<McReport> reports;
  if (config.command == "mse-curve") {
    reports = mse_vs_n(spec, config.n_grid, opt);
  } else {
    reports.push_back(run_monte_carlo(spec, opt));
  }
  const std::string hash = config_hash(config);
  const std::string comment = "config_hash=" + hash + " seed=" + std::to_string(config.seed);
  write_mc_csv(reports, config.output_prefix + ".csv", comment);
  write_mc_json(reports, config.output_prefix + ".json",
                {{"config_hash", hash}, {"seed", std::to_string(config.seed)}, {"config", config_to_json(config)}});
  print_mc_summary(reports);
  std::printf("wrote %s.csv and %s.json\n", config.output_prefix.c_str(), config.output_prefix.c_str());
  return 0;
}

int run_estimate(const RunConfig& config) {
  CsvOptions copts;
  copts.missing_threshold = config.missing_threshold;
  auto [data, ingest] = load_csv(config.input_path, config.outcome_col, config.treatment_col, copts);
  std::printf("ingested %d rows (%d dropped), %d covariates (%zu dropped for missingness)\n",
              data.n(), ingest.rows_dropped, data.p(), ingest.columns_dropped.size());

  EstimatorOptions est = config.est;
  const AteEstimate point = estimate_ate(data, config.method, est, config.seed);

  std::vector<double> selection(point.diagnostics.selected.begin(), point.diagnostics.selected.end());
  double ci_lo = kNaN, ci_hi = kNaN;
  if (config.bootstrap > 0) {
    const BootstrapResult boot =
        bootstrap_ci(data, config.method, est, config.bootstrap, config.alpha, mix_seed(config.seed, 0xc1));
    ci_lo = boot.lower;
    ci_hi = boot.upper;
    if (!boot.selection_proportion.empty()) selection = boot.selection_proportion;
  }

  nlohmann::json out;
  out["method"] = config.method;
  out["theta"] = point.theta;
  out["ci"] = {ci_lo, ci_hi};
  out["n"] = data.n();
  out["p_used"] = data.p();
  nlohmann::json sel = nlohmann::json::array();
  for (std::size_t j = 0; j < selection.size(); ++j)
    sel.push_back({{"name", data.col_meta[j].name}, {"proportion", selection[j]}});
  out["selected"] = sel;
  out["diagnostics"] = {{"wamd", point.diagnostics.wamd},
                        {"clip_rate", point.diagnostics.clip_rate},
                        {"seed", config.seed},
                        {"config_hash", config_hash(config)}};
  out["ingest"] = {{"rows_read", ingest.rows_read},
                   {"rows_dropped", ingest.rows_dropped},
                   {"columns_dropped", ingest.columns_dropped}};
  const std::string json_path = config.output_prefix + ".json";
  std::ofstream(json_path) << out.dump(2) << "\n";

  std::printf("method=%s theta=%.6g", config.method.c_str(), point.theta);
  if (std::isfinite(ci_lo)) std::printf(" ci=[%.6g, %.6g] (%d bootstrap draws)", ci_lo, ci_hi, config.bootstrap);
  std::printf("\nwamd=%.4g clip_rate=%.4g seed=%llu\n", point.diagnostics.wamd, point.diagnostics.clip_rate,
              static_cast<unsigned long long>(config.seed));
  int shown = 0;
  std::printf("selected (proportion >= 0.5):");
  for (std::size_t j = 0; j < selection.size(); ++j) {
    if (selection[j] >= 0.5) {
      std::printf(" %s", data.col_meta[j].name.c_str());
      ++shown;
    }
  }
  if (shown == 0) std::printf(" (none)");
  std::printf("\nwrote %s\n", json_path.c_str());
  return 0;
}

int run_tune(const RunConfig& config) {
  CsvOptions copts;
  copts.missing_threshold = config.missing_threshold;
  auto [data, ingest] = load_csv(config.input_path, config.outcome_col, config.treatment_col, copts);
  (void)ingest;

  std::vector<TuneGridPoint> grid = config.tune_grid;
  if (grid.empty()) {
    // Default 18-combination layout: mtry x node size x trees.
    for (int mtry : {2, 4, 8})
      for (int node : {10, 20, 50})
        for (int trees : {250, 500}) grid.push_back({mtry, node, trees});
  }
  const TuneResult result = tune_oarf(data, grid, config.est, config.seed);

  nlohmann::json out;
  out["best"] = {{"mtry", result.best.mtry},
                 {"min_node_size", result.best.min_node_size},
                 {"num_trees", result.best.num_trees},
                 {"wamd", result.best_wamd}};
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [gp, w] : result.table)
    table.push_back(
        {{"mtry", gp.mtry}, {"min_node_size", gp.min_node_size}, {"num_trees", gp.num_trees}, {"wamd", w}});
  out["table"] = table;
  out["diagnostics"] = {{"seed", config.seed}, {"config_hash", config_hash(config)}};
  const std::string json_path = config.output_prefix + ".json";
  std::ofstream(json_path) << out.dump(2) << "\n";

  std::printf("best: mtry=%d min_node_size=%d num_trees=%d (wAMD %.6g)\nwrote %s\n", result.best.mtry,
              result.best.min_node_size, result.best.num_trees, result.best_wamd, json_path.c_str());
  return 0;
}

}  // namespace

int run(const RunConfig& config) {
  try {
    config.validate();
    if (config.command == "simulate" || config.command == "mse-curve") return run_simulate(config);
    if (config.command == "estimate") return run_estimate(config);
    if (config.command == "tune") return run_tune(config);
    throw std::invalid_argument("unknown command: " + config.command);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    err["command"] = config.command;
    std::ofstream(config.output_prefix + ".error.json") << err.dump(2) << "\n";
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace oarf
