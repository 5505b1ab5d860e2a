#pragma once

#include "psens/common.hpp"
#include "psens/fisher.hpp"
#include "psens/model.hpp"

#include <cstdint>

namespace psens {

/// Derivatives of one natural frequency with respect to the physical
/// parameters of a K(b), M(b) system, from the mass-normalized mode shape.
struct FreqSensitivity {
    Index mode = 0;
    double omega = 0.0;
    Vector domega_db; // dw/db_j
    Vector normalized; // (dw/db_j) * b_j / w
};

/// dw/db_j = (1/2w) phi^T (dK/db_j - w^2 dM/db_j) phi. Matrix derivatives use
/// the spec's derivative builders when present, otherwise central finite
/// differences with step 1e-6 * max(|b_j|, 1). Requires a simple eigenvalue
/// (relative gap to neighbours > 1e-6).
FreqSensitivity freq_sensitivity(const EigenSystemSpec& spec, const Vector& b, Index mode);

struct DeltaLimitResult {
    double cosine = 0.0;   // dominant FIM eigenvector (mean block) vs analytic direction
    bool sign_match = false;
    Vector fim_direction;      // sign-fixed, unit norm, mean-parameter block
    Vector analytic_direction; // sign-fixed, unit norm
    double sigma_block_share = 0.0; // eigenvector mass outside the mean block
    Vector eigenvalues;
};

/// Full-pipeline check of the delta-approximation: DeltaApprox inputs centred
/// at b with the given CoV, model = selected natural frequency, Fisher matrix
/// under proportional normalization; compares the dominant eigenvector's
/// mean-parameter block against the normalized analytic sensitivities.
DeltaLimitResult delta_limit_check(const EigenSystemSpec& spec, const Vector& b, Index mode,
                                   double cov, Index n, std::uint64_t seed,
                                   const KdeConfig& kde = {});

} // namespace psens
