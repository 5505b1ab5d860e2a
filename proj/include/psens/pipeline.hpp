#pragma once

#include "psens/common.hpp"
#include "psens/dist.hpp"
#include "psens/eig.hpp"
#include "psens/estimator.hpp"
#include "psens/fisher.hpp"
#include "psens/model.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace psens {

using Json = nlohmann::ordered_json;

enum class AnalysisKind { UtilityEigen, Fisher, GeneralizedFailureVsFisher };

struct ModelConfig {
    std::string name;
    Index dim = 0;                          // identity, roos_arnold
    Matrix coeffs;                          // linear
    Vector noise_std;                       // linear
    CantileverBeam::Config cantilever;      // cantilever
    std::string executable;                 // external
    std::vector<std::string> output_names;  // external
};

struct RunConfig {
    ModelConfig model;
    std::vector<Marginal> marginals;
    std::vector<UtilitySpec> utilities;
    AnalysisKind analysis = AnalysisKind::Fisher;
    Index n = 10000;
    std::uint64_t seed = 1;
    int repetitions = 1;
    Normalization normalization = Normalization::Raw;
    KdeConfig kde;
    bool centered_gradients = true;
    bool rescale_outputs = false; // divide each output column by its ensemble max
    std::vector<Index> convergence_ns;
    std::string out_dir = "out";

    /// Canonical echo of the effective configuration (conversions applied).
    Json echo() const;
};

/// Eigen analysis results aggregated across repetitions.
struct AnalysisResult {
    EigenReport report;  // decomposition of the repetition-averaged matrix
    Matrix moment;       // the averaged matrix itself
    Matrix eigvec_std;   // per-entry std across repetitions (zero when R = 1)
    Vector eigval_std;
    Vector summary_std;
};

struct UtilityStats {
    std::string label;
    double value = 0.0;
    double value_std = 0.0; // across repetitions
    double se = 0.0;        // within-run standard error (first repetition)
};

struct RunReport {
    Json config_echo;
    std::string config_hash;
    AnalysisKind analysis = AnalysisKind::Fisher;
    Index n = 0;
    std::uint64_t seed = 0;
    int repetitions = 1;
    std::vector<std::string> param_labels;
    AnalysisResult primary;
    std::optional<AnalysisResult> constrained; // generalized analysis (W = Fisher)
    double constrained_cosine = 0.0;           // first-eigenvector alignment, |cos|
    std::vector<UtilityStats> utilities;
    std::vector<std::pair<Index, Vector>> spectra; // convergence ladder
    Index kde_excluded = 0;
    Vector kde_bandwidths;

    Json to_json() const;
};

RunConfig parse_config(const Json& j);
RunConfig parse_config_file(const std::string& path);

/// Execute the configured pipeline: R independent repetitions
/// (sample -> estimate -> assemble), average, eigensolve, aggregate.
RunReport run(const RunConfig& config);

/// Write report.json, eigvecs.csv, spectrum.csv, summary.csv into dir.
void emit(const RunReport& report, const std::string& dir);

/// FNV-1a 64-bit hash of the canonical JSON dump, as hex.
std::string config_hash(const Json& j);

} // namespace psens
