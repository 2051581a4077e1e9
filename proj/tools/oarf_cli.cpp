#define CPPHTTPLIB_OPENSSL_SUPPORT

#include <openssl/evp.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "httplib.h"
#include "oarf/cli_io.hpp"

namespace {

struct FetchTarget {
  const char* name;
  const char* url;
  const char* sha256;  // empty: record-only mode
  const char* note;
};

// The two empirical studies. Checksums are recorded on first successful
// download; pass --sha256 to enforce a specific digest.
const FetchTarget kTargets[] = {
    {"rhc", "https://hbiostat.org/data/repo/rhc.csv", "", "SUPPORT right heart catheterization study"},
    {"birthweight", "http://www.stata-press.com/data/r13/cattaneo2.dta", "",
     "maternal smoking / birth weight study (Stata .dta; convert to CSV before `estimate`)"},
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

int do_fetch(const std::string& name, const std::string& dest_dir, const std::string& expected_sha) {
  const FetchTarget* target = nullptr;
  for (const auto& t : kTargets)
    if (name == t.name) target = &t;
  if (!target) {
    std::fprintf(stderr, "unknown dataset '%s' (known: rhc, birthweight)\n", name.c_str());
    return 1;
  }

  const std::string url = target->url;
  const auto scheme_end = url.find("://");
  const std::string scheme = url.substr(0, scheme_end);
  const auto host_start = scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  const std::string host = url.substr(host_start, path_start - host_start);
  const std::string path = url.substr(path_start);

  std::printf("fetching %s from %s ...\n", name.c_str(), url.c_str());
  httplib::Result res = [&] {
    if (scheme == "https") {
      httplib::SSLClient cli(host);
      cli.set_follow_location(true);
      cli.set_connection_timeout(30);
      cli.set_read_timeout(120);
      return cli.Get(path);
    }
    httplib::Client cli(host);
    cli.set_follow_location(true);
    cli.set_connection_timeout(30);
    cli.set_read_timeout(120);
    return cli.Get(path);
  }();
  if (!res || res->status != 200) {
    std::fprintf(stderr, "download failed (%s)\n", res ? std::to_string(res->status).c_str() : "no response");
    return 1;
  }

  std::filesystem::create_directories(dest_dir);
  const std::string filename = url.substr(url.rfind('/') + 1);
  const std::string dest = (std::filesystem::path(dest_dir) / filename).string();
  std::ofstream(dest, std::ios::binary) << res->body;

  const std::string digest = sha256_hex(res->body);
  std::printf("saved %s (%zu bytes)\nsha256: %s\n", dest.c_str(), res->body.size(), digest.c_str());
  const std::string expected = !expected_sha.empty() ? expected_sha : target->sha256;
  if (!expected.empty() && expected != digest) {
    std::fprintf(stderr, "checksum mismatch: expected %s\n", expected.c_str());
    return 1;
  }
  if (expected.empty()) std::printf("no recorded checksum; record the digest above to pin this file\n");
  if (target->note[0]) std::printf("note: %s\n", target->note);
  return 0;
}

std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") return argv[i + 1];
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  oarf::RunConfig config;

  // A JSON config file seeds the defaults; explicit flags override it.
  const std::string config_path = find_config_arg(argc, argv);
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::fprintf(stderr, "cannot open config file %s\n", config_path.c_str());
      return 1;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      oarf::apply_json_config(config, ss.str());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "bad config file: %s\n", e.what());
      return 1;
    }
  }

  CLI::App app{"outcome-adaptive random forest toolkit"};
  app.require_subcommand(1);
  std::string config_file;
  app.add_option("--config", config_file, "JSON config file mirroring all flags");

  std::string fetch_name, fetch_dest = "data", fetch_sha;
  int entry_rule = static_cast<int>(config.est.oarf.rule);

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", config.seed, "base RNG seed (mandatory)");
    cmd->add_option("--out", config.output_prefix, "output file prefix");
    cmd->add_option("--trees", config.est.fc_prop.num_trees, "propensity forest size");
    cmd->add_option("--outcome-trees", config.est.fc_outcome.num_trees, "importance forest size");
    cmd->add_option("--mtry", config.est.fc_prop.mtry, "candidate features per split (0 = sqrt(p))");
    cmd->add_option("--min-node-size", config.est.fc_prop.min_node_size, "minimum rows to attempt a split");
    cmd->add_option("--max-depth", config.est.fc_prop.max_depth, "depth cap (0 = unlimited)");
    cmd->add_option("--threads", config.est.fc_prop.num_threads, "thread cap (0 = all, see OARF_THREADS)");
    cmd->add_option("--crossfit-k", config.est.crossfit_k, "cross-fitting folds for forest methods");
    cmd->add_option("--penalty-gamma", config.est.oarf.penalty.gamma, "penalty weight gamma");
    cmd->add_option("--penalty-lambda0", config.est.oarf.penalty.lambda0, "base penalty lambda0");
    cmd->add_flag("--depth-penalty,!--no-depth-penalty", config.est.oarf.penalty.depth_penalty,
                  "penalize outside features by lambda^depth (default on)");
    cmd->add_option("--entry-rule", entry_rule,
                    "outside-feature entry rule: 0=positive gain, 1=beat in-set gain, 2=beat parent gain")
        ->check(CLI::Range(0, 2));
    cmd->add_flag("--full-sample-importance,!--no-full-sample-importance", config.est.full_sample_importance,
                  "step-1 importance on the full sample (default) or auxiliary folds only");
  };

  CLI::App* sim = app.add_subcommand("simulate", "Monte Carlo study on one simulation setting");
  sim->add_option("--setting", config.setting, "DGP setting 1..15")->check(CLI::Range(1, 15));
  sim->add_option("--n", config.n, "sample size");
  sim->add_option("--p", config.p, "covariate count");
  sim->add_option("--theta", config.theta, "true treatment effect");
  sim->add_option("--rho", config.rho, "equicorrelation override");
  sim->add_option("--reps", config.reps, "Monte Carlo replications");
  sim->add_option("--methods", config.methods, "comma-separated method list")->delimiter(',');
  sim->add_flag("--with-ci", config.with_ci, "bootstrap a CI per replicate");
  sim->add_option("--n-boot", config.n_boot, "bootstrap draws per CI");
  sim->add_option("--alpha", config.alpha, "CI level (two-sided)");
  add_common(sim);

  CLI::App* curve = app.add_subcommand("mse-curve", "MSE against sample size");
  curve->add_option("--setting", config.setting, "DGP setting 1..15")->check(CLI::Range(1, 15));
  curve->add_option("--p", config.p, "covariate count");
  curve->add_option("--theta", config.theta, "true treatment effect");
  curve->add_option("--rho", config.rho, "equicorrelation override");
  curve->add_option("--reps", config.reps, "Monte Carlo replications per n");
  curve->add_option("--n-grid", config.n_grid, "comma-separated sample sizes (ascending)")->delimiter(',');
  curve->add_option("--methods", config.methods, "comma-separated method list")->delimiter(',');
  add_common(curve);

  CLI::App* est = app.add_subcommand("estimate", "ATE on a CSV dataset");
  est->add_option("--data", config.input_path, "input CSV path");
  est->add_option("--outcome", config.outcome_col, "outcome column name");
  est->add_option("--treatment", config.treatment_col, "treatment column name");
  est->add_option("--method", config.method, "estimation method");
  est->add_option("--bootstrap", config.bootstrap, "bootstrap draws for the CI (0 = point only)");
  est->add_option("--alpha", config.alpha, "CI level (two-sided)");
  est->add_option("--missing-threshold", config.missing_threshold, "drop covariates above this missing fraction");
  add_common(est);

  CLI::App* tune = app.add_subcommand("tune", "wAMD tuning of the propensity forest");
  tune->add_option("--data", config.input_path, "input CSV path");
  tune->add_option("--outcome", config.outcome_col, "outcome column name");
  tune->add_option("--treatment", config.treatment_col, "treatment column name");
  tune->add_option("--missing-threshold", config.missing_threshold, "drop covariates above this missing fraction");
  add_common(tune);

  CLI::App* fetch = app.add_subcommand("fetch", "download an empirical dataset");
  fetch->add_option("--name", fetch_name, "rhc | birthweight")->required();
  fetch->add_option("--dest", fetch_dest, "destination directory");
  fetch->add_option("--sha256", fetch_sha, "expected content digest");

  CLI11_PARSE(app, argc, argv);

  if (fetch->parsed()) return do_fetch(fetch_name, fetch_dest, fetch_sha);

  for (CLI::App* cmd : {sim, curve, est, tune}) {
    if (cmd->parsed()) {
      config.command = cmd->get_name();
      if (cmd->count("--seed") > 0) config.seed_set = true;
      break;
    }
  }
  config.est.oarf.rule = static_cast<oarf::EntryRule>(entry_rule);
  config.est.fc_outcome.num_threads = config.est.fc_prop.num_threads;
  config.est.fc_outcome.seed = config.seed;
  config.est.fc_prop.seed = config.seed;
  return oarf::run(config);
}
