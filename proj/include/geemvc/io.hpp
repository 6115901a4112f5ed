#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geemvc/model.hpp"
#include "geemvc/selection.hpp"
#include "geemvc/simulate.hpp"
#include "geemvc/variance.hpp"

namespace geemvc {

// ---------------------------------------------------------------------------
// Model formulas
// ---------------------------------------------------------------------------

// "y~x1+x2" (mean; response required) or "~z1" (scale / correlation).
// Mean and scale formulas get an intercept automatically; the correlation
// formula uses exactly the listed pair-level columns.
struct Formula {
  std::string response;
  std::vector<std::string> terms;
};

Formula parse_formula(const std::string& text, bool needs_response);

enum class PairGen { None, ToeplitzLags, InterceptOnly };

PairGen pairgen_from_name(const std::string& name);

struct DatasetSpec {
  std::string data_path;
  std::optional<std::string> pairs_path;
  PairGen pairgen = PairGen::None;
  Formula mean;   // with response
  Formula scale;  // no response
  Formula corr;   // no response, no auto intercept
};

// Long-format unit CSV (cluster_id, unit_index, response, covariates...) plus
// either a pair-level CSV keyed by (cluster_id, j, k) or a built-in pair
// covariate generator.
ClusterDataset read_dataset(const DatasetSpec& spec);

// Column names used when materializing a dataset to CSV.
struct DatasetNames {
  std::string response = "y";
  std::vector<std::string> mean_terms;   // excluding intercept
  std::vector<std::string> scale_terms;  // excluding intercept
  std::vector<std::string> corr_terms;   // all corr columns
};

DatasetNames scenario_names(const ScenarioConfig& scenario);

// Writes unit and pair CSVs with full (17 significant digit) precision so a
// re-read reproduces the fit bit for bit.
void write_dataset(const ClusterDataset& ds, const DatasetNames& names,
                   const std::string& unit_csv_path, const std::string& pair_csv_path);

// ---------------------------------------------------------------------------
// Result reports
// ---------------------------------------------------------------------------

struct FitReport {
  DatasetNames names;
  FitResult fit;
  SandwichResult sand;
  BlockDiagnostics diag;
};

std::string fit_report_json(const FitReport& report);
std::string fit_report_csv(const FitReport& report);

std::string estimation_summary_json(const ReplicateSummary& summary);
std::string estimation_summary_csv(const ReplicateSummary& summary);
std::string selection_summary_json(const ReplicateSummary& summary);
std::string selection_summary_csv(const ReplicateSummary& summary);

std::string selection_result_json(const SelectionResult& result, const DatasetNames& names);
std::string selection_result_csv(const SelectionResult& result, const DatasetNames& names);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace geemvc
