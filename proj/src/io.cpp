#include "geemvc/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace geemvc {

namespace {

using nlohmann::json;

std::string fmt(double x, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

std::string fmt6(double x) { return fmt(x, "%.6g"); }
std::string fmt17(double x) { return fmt(x, "%.17g"); }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name, const std::string& where) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw ConfigError("unknown column '" + name + "' in " + where +
                        " (available: " + join_header() + ")");
    return static_cast<int>(it - header.begin());
  }

  std::string join_header() const {
    std::string s;
    for (size_t i = 0; i < header.size(); ++i) {
      if (i) s += ", ";
      s += header[i];
    }
    return s;
  }
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  table.header = split(line, ',');
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != table.header.size())
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(table.header.size()) + " fields, got " +
                    std::to_string(cells.size()));
    std::vector<double> row(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
      char* end = nullptr;
      row[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0')
        throw IoError(path + ":" + std::to_string(lineno) + ": field '" +
                      table.header[i] + "' is not numeric: '" + cells[i] + "'");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace

// ---------------------------------------------------------------------------
// Formulas
// ---------------------------------------------------------------------------

Formula parse_formula(const std::string& text, bool needs_response) {
  const auto tilde = text.find('~');
  if (tilde == std::string::npos)
    throw ConfigError("formula '" + text + "' is missing '~'");
  Formula f;
  f.response = text.substr(0, tilde);
  // strip spaces
  auto strip = [](std::string s) {
    s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == ' '; }),
            s.end());
    return s;
  };
  f.response = strip(f.response);
  if (needs_response && f.response.empty())
    throw ConfigError("formula '" + text + "' needs a response before '~'");
  if (!needs_response && !f.response.empty())
    throw ConfigError("formula '" + text + "' must not have a response");
  const std::string rhs = strip(text.substr(tilde + 1));
  if (!rhs.empty()) {
    for (const auto& term : split(rhs, '+')) {
      if (term.empty() || term == "1") continue;
      f.terms.push_back(term);
    }
  }
  return f;
}

PairGen pairgen_from_name(const std::string& name) {
  if (name.empty() || name == "none") return PairGen::None;
  if (name == "toeplitz-lags") return PairGen::ToeplitzLags;
  if (name == "intercept-only") return PairGen::InterceptOnly;
  throw ConfigError("unknown pair generator '" + name +
                    "' (toeplitz-lags, intercept-only)");
}

// ---------------------------------------------------------------------------
// Dataset reading
// ---------------------------------------------------------------------------

namespace {

int toeplitz_lag_of(const std::string& term) {
  if (term.rfind("lag", 0) != 0)
    throw ConfigError("toeplitz-lags generator expects terms named lag1, lag2, "
                      "... but got '" + term + "'");
  try {
    const int lag = std::stoi(term.substr(3));
    if (lag < 1) throw std::invalid_argument("");
    return lag;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse lag index from term '" + term + "'");
  }
}

}  // namespace

ClusterDataset read_dataset(const DatasetSpec& spec) {
  if (spec.data_path.empty()) throw ConfigError("data path required");
  const CsvTable units = read_csv(spec.data_path);

  const int col_cluster = units.column("cluster_id", spec.data_path);
  const int col_unit = units.column("unit_index", spec.data_path);
  const int col_y = units.column(spec.mean.response, spec.data_path);
  std::vector<int> mean_cols, scale_cols;
  for (const auto& t : spec.mean.terms) mean_cols.push_back(units.column(t, "--mean"));
  for (const auto& t : spec.scale.terms) scale_cols.push_back(units.column(t, "--scale"));

  // Group unit rows by cluster, ordered by unit_index.
  std::map<std::int64_t, std::vector<const std::vector<double>*>> grouped;
  for (const auto& row : units.rows)
    grouped[static_cast<std::int64_t>(std::llround(row[col_cluster]))].push_back(&row);
  for (auto& [id, rows] : grouped)
    std::sort(rows.begin(), rows.end(),
              [&](const auto* a, const auto* b) { return (*a)[col_unit] < (*b)[col_unit]; });

  // Pair covariates: from a pairs CSV or a generator.
  std::map<std::int64_t, std::vector<const std::vector<double>*>> pair_rows;
  CsvTable pairs;
  std::vector<int> corr_cols;
  int col_pc = -1, col_pj = -1, col_pk = -1;
  if (spec.pairgen == PairGen::None) {
    if (!spec.pairs_path)
      throw ConfigError("pair covariates required: give --pairs or --pairgen");
    pairs = read_csv(*spec.pairs_path);
    col_pc = pairs.column("cluster_id", *spec.pairs_path);
    col_pj = pairs.column("j", *spec.pairs_path);
    col_pk = pairs.column("k", *spec.pairs_path);
    for (const auto& t : spec.corr.terms) corr_cols.push_back(pairs.column(t, "--corr"));
    for (const auto& row : pairs.rows)
      pair_rows[static_cast<std::int64_t>(std::llround(row[col_pc]))].push_back(&row);
  }
  if (spec.corr.terms.empty())
    throw ConfigError("the correlation model needs at least one column");

  const int p = static_cast<int>(spec.mean.terms.size()) + 1;
  const int r = static_cast<int>(spec.scale.terms.size()) + 1;
  const int q = static_cast<int>(spec.corr.terms.size());

  std::vector<Cluster> clusters;
  clusters.reserve(grouped.size());
  for (const auto& [id, rows] : grouped) {
    const int m = static_cast<int>(rows.size());
    Cluster c;
    c.id = id;
    c.y.resize(m);
    c.X1.resize(m, p);
    c.X2.resize(m, r);
    c.X3.resize(c.pairs() * 0 + m * (m - 1) / 2, q);
    for (int j = 0; j < m; ++j) {
      const auto& row = *rows[j];
      c.y[j] = row[col_y];
      c.X1(j, 0) = 1.0;
      for (size_t t = 0; t < mean_cols.size(); ++t) c.X1(j, t + 1) = row[mean_cols[t]];
      c.X2(j, 0) = 1.0;
      for (size_t t = 0; t < scale_cols.size(); ++t) c.X2(j, t + 1) = row[scale_cols[t]];
    }

    const int np = m * (m - 1) / 2;
    switch (spec.pairgen) {
      case PairGen::ToeplitzLags: {
        c.X3.setZero();
        for (int j = 0; j < m; ++j)
          for (int k = j + 1; k < m; ++k)
            for (int t = 0; t < q; ++t)
              if (k - j == toeplitz_lag_of(spec.corr.terms[t]))
                c.X3(Cluster::pair_row(j, k, m), t) = 1.0;
        break;
      }
      case PairGen::InterceptOnly: {
        if (q != 1)
          throw ConfigError("intercept-only pair generator supports exactly one "
                            "correlation column");
        c.X3.setOnes();
        break;
      }
      case PairGen::None: {
        const auto it = pair_rows.find(id);
        const int have = it == pair_rows.end() ? 0 : static_cast<int>(it->second.size());
        if (have != np)
          throw ConfigError("cluster " + std::to_string(id) + ": expected " +
                            std::to_string(np) + " pair rows, found " +
                            std::to_string(have));
        std::vector<bool> seen(np, false);
        for (const auto* row : it->second) {
          const int j = static_cast<int>(std::llround((*row)[col_pj]));
          const int k = static_cast<int>(std::llround((*row)[col_pk]));
          if (j < 1 || k <= j || k > m)
            throw ConfigError("cluster " + std::to_string(id) + ": bad pair (" +
                              std::to_string(j) + "," + std::to_string(k) + ")");
          const int t = Cluster::pair_row(j - 1, k - 1, m);
          if (seen[t])
            throw ConfigError("cluster " + std::to_string(id) + ": duplicate pair (" +
                              std::to_string(j) + "," + std::to_string(k) + ")");
          seen[t] = true;
          for (int u = 0; u < q; ++u) c.X3(t, u) = (*row)[corr_cols[u]];
        }
        break;
      }
    }
    clusters.push_back(std::move(c));
  }
  return ClusterDataset(std::move(clusters), p, r, q);
}

// ---------------------------------------------------------------------------
// Dataset writing
// ---------------------------------------------------------------------------

DatasetNames scenario_names(const ScenarioConfig& scenario) {
  DatasetNames names;
  names.response = "y";
  names.mean_terms = {"x1", "x2"};
  names.scale_terms = {"z1", "z2"};
  names.corr_terms.clear();
  const int q = static_cast<int>(scenario.true_theta.gamma.size());
  for (int t = 1; t <= q; ++t) {
    if (scenario.corr_design == CorrDesign::ToeplitzLags)
      names.corr_terms.push_back("lag" + std::to_string(t));
    else
      names.corr_terms.push_back("h" + std::to_string(t));
  }
  return names;
}

void write_dataset(const ClusterDataset& ds, const DatasetNames& names,
                   const std::string& unit_csv_path, const std::string& pair_csv_path) {
  if (static_cast<int>(names.mean_terms.size()) + 1 != ds.p ||
      static_cast<int>(names.scale_terms.size()) + 1 != ds.r ||
      static_cast<int>(names.corr_terms.size()) != ds.q)
    throw ConfigError("dataset names do not match dataset dimensions");

  std::ostringstream unit;
  unit << "cluster_id,unit_index," << names.response;
  for (const auto& t : names.mean_terms) unit << ',' << t;
  for (const auto& t : names.scale_terms) unit << ',' << t;
  unit << '\n';
  for (const auto& c : ds.clusters) {
    for (int j = 0; j < c.size(); ++j) {
      unit << c.id << ',' << (j + 1) << ',' << fmt17(c.y[j]);
      for (int t = 1; t < ds.p; ++t) unit << ',' << fmt17(c.X1(j, t));
      for (int t = 1; t < ds.r; ++t) unit << ',' << fmt17(c.X2(j, t));
      unit << '\n';
    }
  }
  write_text_file(unit_csv_path, unit.str());

  std::ostringstream pair;
  pair << "cluster_id,j,k";
  for (const auto& t : names.corr_terms) pair << ',' << t;
  pair << '\n';
  for (const auto& c : ds.clusters) {
    for (int j = 0; j < c.size(); ++j)
      for (int k = j + 1; k < c.size(); ++k) {
        pair << c.id << ',' << (j + 1) << ',' << (k + 1);
        const int t = Cluster::pair_row(j, k, c.size());
        for (int u = 0; u < ds.q; ++u) pair << ',' << fmt17(c.X3(t, u));
        pair << '\n';
      }
  }
  write_text_file(pair_csv_path, pair.str());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> coefficient_names(const DatasetNames& names, Component comp) {
  std::vector<std::string> out;
  switch (comp) {
    case Component::Mean:
      out.push_back("(Intercept)");
      out.insert(out.end(), names.mean_terms.begin(), names.mean_terms.end());
      break;
    case Component::Scale:
      out.push_back("(Intercept)");
      out.insert(out.end(), names.scale_terms.begin(), names.scale_terms.end());
      break;
    case Component::Corr:
      out = names.corr_terms;
      break;
  }
  return out;
}

json coefficients_json(const FitReport& rep) {
  const Vec est = rep.fit.theta.stacked();
  json out;
  Eigen::Index off = 0;
  const std::array<std::pair<const char*, Component>, 3> comps = {
      std::make_pair("mean", Component::Mean), std::make_pair("scale", Component::Scale),
      std::make_pair("corr", Component::Corr)};
  for (const auto& [key, comp] : comps) {
    json arr = json::array();
    const auto names = coefficient_names(rep.names, comp);
    for (size_t t = 0; t < names.size(); ++t) {
      const Eigen::Index k = off + static_cast<Eigen::Index>(t);
      arr.push_back({{"name", names[t]},
                     {"est", est[k]},
                     {"se_yf", rep.sand.se_yf[k]},
                     {"se_lp", rep.sand.se_lp[k]}});
    }
    out[key] = std::move(arr);
    off += static_cast<Eigen::Index>(names.size());
  }
  return out;
}

json diagnostics_json(const BlockDiagnostics& diag) {
  return json{{"norm_b_scaled", diag.norm_b},
              {"norm_d_scaled", diag.norm_d},
              {"norm_e_scaled", diag.norm_e},
              {"rho_mean", diag.rho_mean},
              {"rho_histogram",
               {{"breaks", BlockDiagnostics::histogram_breaks()},
                {"counts", diag.rho_histogram}}}};
}

json support_json(const CandidateSupport& s, const DatasetNames& names) {
  auto active = [](const std::vector<bool>& mask, const std::vector<std::string>& nm) {
    json arr = json::array();
    for (size_t t = 0; t < mask.size(); ++t)
      if (mask[t]) arr.push_back(nm[t]);
    return arr;
  };
  return json{{"mean", active(s.mean_mask, coefficient_names(names, Component::Mean))},
              {"scale", active(s.scale_mask, coefficient_names(names, Component::Scale))},
              {"corr", active(s.corr_mask, coefficient_names(names, Component::Corr))}};
}

}  // namespace

std::string fit_report_json(const FitReport& rep) {
  json out{{"command", "fit"},
           {"converged", rep.fit.converged},
           {"iterations", rep.fit.iterations},
           {"clamp_count", rep.fit.clamp_count},
           {"pd_repair_count", rep.fit.pd_repair_count},
           {"clamped_at_solution", rep.fit.clamped_at_solution},
           {"u_norms", rep.fit.u_norms},
           {"coefficients", coefficients_json(rep)},
           {"diagnostics", diagnostics_json(rep.diag)}};
  return out.dump(2) + "\n";
}

std::string fit_report_csv(const FitReport& rep) {
  std::ostringstream out;
  out << "component,name,est,se_yf,se_lp\n";
  const Vec est = rep.fit.theta.stacked();
  Eigen::Index off = 0;
  const std::array<std::pair<const char*, Component>, 3> comps = {
      std::make_pair("mean", Component::Mean), std::make_pair("scale", Component::Scale),
      std::make_pair("corr", Component::Corr)};
  for (const auto& [key, comp] : comps) {
    const auto names = coefficient_names(rep.names, comp);
    for (size_t t = 0; t < names.size(); ++t) {
      const Eigen::Index k = off + static_cast<Eigen::Index>(t);
      out << key << ',' << names[t] << ',' << fmt6(est[k]) << ','
          << fmt6(rep.sand.se_yf[k]) << ',' << fmt6(rep.sand.se_lp[k]) << '\n';
    }
    off += static_cast<Eigen::Index>(names.size());
  }
  return out.str();
}

std::string estimation_summary_json(const ReplicateSummary& s) {
  json params = json::array();
  for (size_t k = 0; k < s.param_names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    json row{{"name", s.param_names[k]}, {"truth", s.truth[i]},
             {"est", s.est_mean[i]},     {"ese", s.ese[i]},
             {"ase_yf", s.ase_yf[i]},    {"cp_yf", s.cp_yf[i]},
             {"ase_lp", s.ase_lp[i]},    {"cp_lp", s.cp_lp[i]}};
    if (s.has_lp_comparator) {
      row["lp_est"] = s.lp_est_mean[i];
      row["lp_ese"] = s.lp_ese[i];
      row["lp_ase"] = s.lp_ase[i];
      row["lp_cp"] = s.lp_cp[i];
    }
    params.push_back(std::move(row));
  }
  json out{{"command", "simulate"},
           {"study", "estimation"},
           {"scenario", s.scenario_name},
           {"replicates", s.replicates},
           {"n_clusters", s.n_clusters},
           {"seed", s.seed},
           {"convergence_rate", s.convergence_rate},
           {"parameters", std::move(params)},
           {"diagnostics",
            {{"mean_norm_b", s.mean_norm_b},
             {"mean_norm_d", s.mean_norm_d},
             {"mean_norm_e", s.mean_norm_e},
             {"mean_rho_mean", s.mean_rho_mean},
             {"rho_histogram",
              {{"breaks", BlockDiagnostics::histogram_breaks()},
               {"counts", s.rho_hist}}}}}};
  return out.dump(2) + "\n";
}

std::string estimation_summary_csv(const ReplicateSummary& s) {
  std::ostringstream out;
  out << "parameter,truth,est,ese,ase_yf,cp_yf,ase_lp,cp_lp,lp_est,lp_ese,lp_ase,lp_cp\n";
  for (size_t k = 0; k < s.param_names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out << s.param_names[k] << ',' << fmt6(s.truth[i]) << ',' << fmt6(s.est_mean[i])
        << ',' << fmt6(s.ese[i]) << ',' << fmt6(s.ase_yf[i]) << ',' << fmt6(s.cp_yf[i])
        << ',' << fmt6(s.ase_lp[i]) << ',' << fmt6(s.cp_lp[i]);
    if (s.has_lp_comparator) {
      out << ',' << fmt6(s.lp_est_mean[i]) << ',' << fmt6(s.lp_ese[i]) << ','
          << fmt6(s.lp_ase[i]) << ',' << fmt6(s.lp_cp[i]);
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
  return out.str();
}

std::string selection_summary_json(const ReplicateSummary& s) {
  json cells = json::array();
  for (const auto& cell : s.selection) {
    cells.push_back({{"method", strategy_name(cell.strategy)},
                     {"penalty", penalty_name(cell.penalty)},
                     {"n_used", cell.n_used},
                     {"beta", cell.percent[0]},
                     {"lambda", cell.percent[1]},
                     {"gamma", cell.percent[2]},
                     {"beta_lambda", cell.percent[3]},
                     {"beta_gamma", cell.percent[4]},
                     {"lambda_gamma", cell.percent[5]},
                     {"joint", cell.percent[6]}});
  }
  json out{{"command", "simulate"},
           {"study", "selection"},
           {"scenario", s.scenario_name},
           {"replicates", s.replicates},
           {"n_clusters", s.n_clusters},
           {"seed", s.seed},
           {"convergence_rate", s.convergence_rate},
           {"cells", std::move(cells)}};
  return out.dump(2) + "\n";
}

std::string selection_summary_csv(const ReplicateSummary& s) {
  std::ostringstream out;
  out << "scenario,method,penalty,n_used,beta,lambda,gamma,beta_lambda,beta_gamma,"
         "lambda_gamma,joint\n";
  for (const auto& cell : s.selection) {
    out << s.scenario_name << ',' << strategy_name(cell.strategy) << ','
        << penalty_name(cell.penalty) << ',' << cell.n_used;
    for (int k = 0; k < 7; ++k) out << ',' << fmt6(cell.percent[k]);
    out << '\n';
  }
  return out.str();
}

std::string selection_result_json(const SelectionResult& res, const DatasetNames& names) {
  json cands = json::array();
  for (const auto& cv : res.candidates) {
    cands.push_back({{"support", support_json(cv.support, names)},
                     {"loss", cv.loss},
                     {"penalty", cv.penalty},
                     {"total", cv.total},
                     {"feasible", cv.feasible},
                     {"note", cv.note}});
  }
  json out{{"command", "select"},
           {"strategy", strategy_name(res.strategy)},
           {"penalty", penalty_name(res.penalty)},
           {"chosen", support_json(res.chosen, names)},
           {"refit_converged", res.refit.converged},
           {"theta", std::vector<double>(res.theta_padded.stacked().data(),
                                         res.theta_padded.stacked().data() +
                                             res.theta_padded.size())},
           {"infeasible_count", res.infeasible_count},
           {"candidates", std::move(cands)}};
  return out.dump(2) + "\n";
}

std::string selection_result_csv(const SelectionResult& res, const DatasetNames& names) {
  std::ostringstream out;
  out << "component,name,selected,est\n";
  const Vec est = res.theta_padded.stacked();
  Eigen::Index off = 0;
  const std::array<std::pair<const char*, Component>, 3> comps = {
      std::make_pair("mean", Component::Mean), std::make_pair("scale", Component::Scale),
      std::make_pair("corr", Component::Corr)};
  for (const auto& [key, comp] : comps) {
    const auto coef_names = coefficient_names(names, comp);
    const auto& mask = comp == Component::Mean ? res.chosen.mean_mask
                       : comp == Component::Scale ? res.chosen.scale_mask
                                                  : res.chosen.corr_mask;
    for (size_t t = 0; t < coef_names.size(); ++t) {
      const Eigen::Index k = off + static_cast<Eigen::Index>(t);
      out << key << ',' << coef_names[t] << ',' << (mask[t] ? 1 : 0) << ','
          << fmt6(est[k]) << '\n';
    }
    off += static_cast<Eigen::Index>(coef_names.size());
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace geemvc
