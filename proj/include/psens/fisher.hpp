#pragma once

#include "psens/common.hpp"
#include "psens/estimator.hpp"

#include <vector>

namespace psens {

/// Kernel density configuration for the output-score estimator. The Dirac
/// utilities are smoothed with a Gaussian product kernel; bandwidths follow
/// the robust Silverman rule 0.9 * min(sd, IQR/1.34) * n^(-1/(D+4)) unless
/// fixed per dimension.
struct KdeConfig {
    enum class Bandwidth { Silverman, Fixed };
    /// Exact is the O(n^2) pairwise sum (the reference kernel); Binned is the
    /// linear-binning + grid-convolution evaluation of the same estimator.
    /// Auto picks Binned for up to two output dimensions.
    enum class Method { Auto, Exact, Binned };

    Bandwidth bandwidth_rule = Bandwidth::Silverman;
    Vector fixed_bandwidth;
    Method method = Method::Auto;
    double floor_rel = 1e-12;   // density floor relative to the max sample density
    std::vector<Index> outputs; // output subset (empty = all); at most 3 dims
    bool leave_one_out = false;
};

/// Per-sample estimates of d log p(y_i)/db, plus the density values used for
/// the floor diagnostics.
struct OutputScores {
    RowMatrix scores; // n x P
    Vector density;   // n
    Vector bandwidths;
    std::vector<Index> excluded; // rows with density below the floor
};

struct FisherMatrix {
    Matrix F; // P x P, symmetric PSD
    Index n_used = 0;
    Index n_excluded = 0;
    Vector bandwidths;
    KdeConfig config;
};

OutputScores output_score(const SampleBatch& batch, const KdeConfig& cfg = {},
                          Exec exec = Exec::Parallel);

/// F = average over kept samples of s_i s_i^T, symmetrized and clamped to the
/// PSD cone (eigenvalues below -1e-10*lambda_max are an error).
FisherMatrix fisher_matrix(const SampleBatch& batch, const KdeConfig& cfg = {},
                           Exec exec = Exec::Parallel);

/// Second-order Kullback-Leibler approximation 0.5 * db^T F db.
double kl_quadratic(const FisherMatrix& fim, const Vector& db);

} // namespace psens
