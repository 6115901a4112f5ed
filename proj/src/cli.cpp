#include "geemvc/cli.hpp"

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace geemvc {

namespace {

WorkingCorr parse_working_corr(const std::string& text) {
  WorkingCorr wc;
  if (text == "identity" || text.empty()) return wc;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (colon == std::string::npos)
    throw ConfigError("working correlation '" + text + "' needs a parameter, e.g. cs:0.3");
  try {
    wc.u = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("cannot parse working correlation parameter in '" + text + "'");
  }
  if (kind == "cs") wc.kind = CorrKind::CS;
  else if (kind == "ar1") wc.kind = CorrKind::AR1;
  else throw ConfigError("unknown working correlation '" + kind + "' (identity, cs, ar1)");
  if (wc.u <= -1.0 || wc.u >= 1.0)
    throw ConfigError("working correlation parameter must be in (-1, 1)");
  return wc;
}

SelectionStrategy strategy_from_name(const std::string& name) {
  if (name == "lic-joint") return SelectionStrategy::LicJoint;
  if (name == "lic-marginal") return SelectionStrategy::LicMarginal;
  if (name == "qic-yf") return SelectionStrategy::QicYF;
  if (name == "qic-lp") return SelectionStrategy::QicLP;
  throw ConfigError("unknown criterion '" + name +
                    "' (lic-joint, lic-marginal, qic-yf, qic-lp)");
}

PenaltyScale penalty_from_name(const std::string& name) {
  if (name == "bic" || name == "log-n") return PenaltyScale::LogN;
  if (name == "aic" || name == "2") return PenaltyScale::Two;
  throw ConfigError("unknown penalty '" + name + "' (bic, aic)");
}

struct RawArgs {
  std::string data_path, pairs_path, pairgen;
  std::string mean_formula, scale_formula, corr_formula;
  std::string g1 = "identity", g2 = "log", g3 = "identity";
  std::string vf = "constant-one";
  std::string r2 = "identity", r3 = "identity", v3_mode = "delta-scaled";
  int max_iter = 100;
  double tol = 1e-8;
  std::string criterion = "lic-marginal", penalty = "bic";
  bool symmetrize = false;
  std::string scenario = "est-I";
  int replicates = -1;
  int n_clusters = -1;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string methods = "lic-joint,lic-marginal,qic-yf,qic-lp";
  std::string penalties = "bic,aic";
  std::string emit_data, study;
  std::string out, format = "json";
};

void fill_dataset_spec(const RawArgs& raw, RunConfig& cfg) {
  if (raw.data_path.empty()) throw ConfigError("data path required");
  if (raw.mean_formula.empty()) throw ConfigError("--mean formula required");
  if (raw.scale_formula.empty()) throw ConfigError("--scale formula required");
  if (raw.corr_formula.empty()) throw ConfigError("--corr formula required");
  cfg.data.data_path = raw.data_path;
  if (!raw.pairs_path.empty()) cfg.data.pairs_path = raw.pairs_path;
  cfg.data.pairgen = pairgen_from_name(raw.pairgen);
  if (cfg.data.pairgen == PairGen::None && !cfg.data.pairs_path)
    throw ConfigError("pair covariates required: give --pairs or --pairgen");
  if (cfg.data.pairgen != PairGen::None && cfg.data.pairs_path)
    throw ConfigError("--pairs and --pairgen conflict; give only one");
  cfg.data.mean = parse_formula(raw.mean_formula, /*needs_response=*/true);
  cfg.data.scale = parse_formula(raw.scale_formula, false);
  cfg.data.corr = parse_formula(raw.corr_formula, false);
  if (cfg.data.pairgen == PairGen::InterceptOnly && cfg.data.corr.terms.empty())
    cfg.data.corr.terms.push_back("const");
  cfg.links.g1 = link_from_name(raw.g1);
  cfg.links.g2 = link_from_name(raw.g2);
  cfg.links.g3 = link_from_name(raw.g3);
  cfg.links.validate();
  cfg.vf = variance_from_name(raw.vf);
  cfg.working.r2 = parse_working_corr(raw.r2);
  cfg.working.r3 = parse_working_corr(raw.r3);
  if (raw.v3_mode == "delta-scaled") cfg.working.v3_mode = V3Mode::DeltaScaled;
  else if (raw.v3_mode == "plain-identity") cfg.working.v3_mode = V3Mode::PlainIdentity;
  else throw ConfigError("unknown --v3-mode '" + raw.v3_mode +
                         "' (delta-scaled, plain-identity)");
  if (raw.max_iter < 1) throw ConfigError("--max-iter must be >= 1");
  if (raw.tol <= 0) throw ConfigError("--tol must be > 0");
  cfg.fit_opts.max_iter = raw.max_iter;
  cfg.fit_opts.tol = raw.tol;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*parse)(const std::string&)) {
  std::vector<T> out;
  std::string cur;
  for (char ch : text + ",") {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(parse(cur));
      cur.clear();
    } else if (ch != ' ') {
      cur += ch;
    }
  }
  return out;
}

}  // namespace

RunConfig parse_config(const std::vector<std::string>& args) {
  CLI::App app{"geemvc: joint mean-scale-correlation GEE fitting, variance "
               "estimation and model selection"};
  app.require_subcommand(1);
  app.set_config("--config");

  RawArgs raw;

  auto add_model_flags = [&](CLI::App* sub, bool with_seedless_fit = true) {
    (void)with_seedless_fit;
    sub->add_option("--data", raw.data_path, "long-format unit CSV");
    sub->add_option("--pairs", raw.pairs_path, "pair-level covariate CSV");
    sub->add_option("--pairgen", raw.pairgen,
                    "built-in pair covariates: toeplitz-lags|intercept-only");
    sub->add_option("--mean", raw.mean_formula, "mean formula, e.g. y~x1+x2");
    sub->add_option("--scale", raw.scale_formula, "scale formula, e.g. ~z1+z2");
    sub->add_option("--corr", raw.corr_formula, "correlation formula, e.g. ~lag1+lag2");
    sub->add_option("--g1", raw.g1, "mean link: identity|log");
    sub->add_option("--g2", raw.g2, "scale link: log|identity");
    sub->add_option("--g3", raw.g3, "correlation link: identity|fisher-z");
    sub->add_option("--vf", raw.vf, "variance function: constant-one|tanh-shift");
    sub->add_option("--r2", raw.r2, "working correlation for V2: identity|cs:U|ar1:U");
    sub->add_option("--r3", raw.r3, "working correlation for V3: identity|cs:U|ar1:U");
    sub->add_option("--v3-mode", raw.v3_mode, "delta-scaled|plain-identity");
    sub->add_option("--max-iter", raw.max_iter, "maximum fitting sweeps");
    sub->add_option("--tol", raw.tol, "convergence tolerance on the update max-norm");
  };
  auto add_output_flags = [&](CLI::App* sub) {
    sub->add_option("--out", raw.out, "output path (stdout when omitted)");
    sub->add_option("--format", raw.format, "csv|json");
  };

  CLI::App* fit_cmd = app.add_subcommand("fit", "fit a model to user data");
  add_model_flags(fit_cmd);
  add_output_flags(fit_cmd);

  CLI::App* sim_cmd = app.add_subcommand("simulate", "run a scenario study");
  sim_cmd->add_option("--scenario", raw.scenario,
                      "est-I|est-II|sel-I|sel-II|sel-III|lp-replica|custom");
  sim_cmd->add_option("--replicates", raw.replicates, "number of replicates");
  sim_cmd->add_option("--n", raw.n_clusters, "clusters per replicate");
  sim_cmd->add_option("--seed", raw.seed, "RNG seed");
  sim_cmd->add_option("--study", raw.study, "est|sel (defaults by scenario)");
  sim_cmd->add_option("--methods", raw.methods,
                      "selection methods, comma separated");
  sim_cmd->add_option("--penalties", raw.penalties, "bic,aic");
  sim_cmd->add_option("--emit-data", raw.emit_data,
                      "write replicate 0 as <prefix>_units.csv/_pairs.csv");
  add_output_flags(sim_cmd);

  CLI::App* sel_cmd = app.add_subcommand("select", "best-subset model selection");
  add_model_flags(sel_cmd);
  sel_cmd->add_option("--criterion", raw.criterion,
                      "lic-joint|lic-marginal|qic-yf|qic-lp");
  sel_cmd->add_option("--penalty", raw.penalty, "bic|aic");
  sel_cmd->add_flag("--lic-symmetrize", raw.symmetrize,
                    "symmetrize the slope matrix inside the LIC");
  add_output_flags(sel_cmd);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  RunConfig cfg;
  cfg.out_path = raw.out;
  cfg.format = raw.format;
  if (cfg.format != "csv" && cfg.format != "json")
    throw ConfigError("unknown --format '" + cfg.format + "' (csv, json)");

  if (fit_cmd->parsed()) {
    cfg.command = RunConfig::Command::Fit;
    fill_dataset_spec(raw, cfg);
  } else if (sel_cmd->parsed()) {
    cfg.command = RunConfig::Command::Select;
    fill_dataset_spec(raw, cfg);
    cfg.strategy = strategy_from_name(raw.criterion);
    cfg.penalty = penalty_from_name(raw.penalty);
    cfg.symmetrize_slope = raw.symmetrize;
  } else {
    cfg.command = RunConfig::Command::Simulate;
    cfg.scenario = ScenarioConfig::from_name(raw.scenario);
    if (raw.replicates > 0) cfg.scenario.replicates = raw.replicates;
    if (raw.n_clusters > 0) cfg.scenario.n_clusters = raw.n_clusters;
    if (sim_cmd->count("--seed") > 0) cfg.scenario.seed = raw.seed;
    cfg.methods = parse_list<SelectionStrategy>(raw.methods, strategy_from_name);
    cfg.penalties = parse_list<PenaltyScale>(raw.penalties, penalty_from_name);
    cfg.emit_data_prefix = raw.emit_data;
    cfg.study = raw.study;
    if (cfg.study.empty()) {
      const bool sel = cfg.scenario.scenario == Scenario::SelI ||
                       cfg.scenario.scenario == Scenario::SelII ||
                       cfg.scenario.scenario == Scenario::SelIII;
      cfg.study = sel ? "sel" : "est";
    }
    if (cfg.study != "est" && cfg.study != "sel")
      throw ConfigError("unknown --study '" + cfg.study + "' (est, sel)");
  }
  return cfg;
}

namespace {

void emit(const RunConfig& cfg, const std::string& text) {
  if (cfg.out_path.empty())
    std::cout << text;
  else
    write_text_file(cfg.out_path, text);
}

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("GEEMVC_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) omp_set_num_threads(t);
  }
#endif
}

DatasetNames names_from_spec(const DatasetSpec& spec) {
  DatasetNames names;
  names.response = spec.mean.response;
  names.mean_terms = spec.mean.terms;
  names.scale_terms = spec.scale.terms;
  names.corr_terms = spec.corr.terms;
  return names;
}

int run_impl(const RunConfig& cfg) {
  apply_thread_cap();
  switch (cfg.command) {
    case RunConfig::Command::Fit: {
      const ClusterDataset ds = read_dataset(cfg.data);
      FitReport report;
      report.names = names_from_spec(cfg.data);
      report.fit = fit(ds, cfg.links, cfg.vf, cfg.working, cfg.fit_opts);
      report.sand = sandwich(ds, report.fit.theta, cfg.links, cfg.vf, cfg.working);
      report.diag = block_diagnostics(ds, report.fit.theta, cfg.links, cfg.vf,
                                      cfg.working);
      emit(cfg, cfg.format == "json" ? fit_report_json(report)
                                     : fit_report_csv(report));
      return 0;
    }
    case RunConfig::Command::Select: {
      const ClusterDataset ds = read_dataset(cfg.data);
      SelectionOptions opts;
      opts.fit_opts = cfg.fit_opts;
      opts.penalty = cfg.penalty;
      opts.symmetrize_slope = cfg.symmetrize_slope;
      const SelectionResult res =
          select(ds, cfg.links, cfg.vf, cfg.working, cfg.strategy, opts);
      const DatasetNames names = names_from_spec(cfg.data);
      emit(cfg, cfg.format == "json" ? selection_result_json(res, names)
                                     : selection_result_csv(res, names));
      return 0;
    }
    case RunConfig::Command::Simulate: {
      if (!cfg.emit_data_prefix.empty()) {
        const ClusterDataset ds = generate_dataset(cfg.scenario, 0);
        write_dataset(ds, scenario_names(cfg.scenario),
                      cfg.emit_data_prefix + "_units.csv",
                      cfg.emit_data_prefix + "_pairs.csv");
      }
      ReplicateSummary summary;
      if (cfg.study == "est") {
        summary = run_estimation_study(cfg.scenario);
        emit(cfg, cfg.format == "json" ? estimation_summary_json(summary)
                                       : estimation_summary_csv(summary));
      } else {
        summary = run_selection_study(cfg.scenario, cfg.methods, cfg.penalties);
        emit(cfg, cfg.format == "json" ? selection_summary_json(summary)
                                       : selection_summary_csv(summary));
      }
      return 0;
    }
  }
  return 2;
}

}  // namespace

int run(const RunConfig& config) {
  try {
    return run_impl(config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  RunConfig cfg;
  try {
    cfg = parse_config(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  return run(cfg);
}

}  // namespace geemvc
