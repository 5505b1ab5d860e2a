#pragma once

#include "psens/common.hpp"
#include "psens/dist.hpp"
#include "psens/estimator.hpp"

#include <string>
#include <vector>

namespace psens {

enum class Normalization { Raw, Proportional };

/// Matrix of normalized utility derivatives r_jk = (1/U_k) dU_k/db_j,
/// one column per utility.
struct SensitivityMatrix {
    Matrix r; // P x K
    std::vector<std::string> utility_labels;
    std::vector<std::string> param_labels;
    Normalization normalization = Normalization::Raw;
};

enum class ConstraintKind { Identity, Fisher, Custom };

/// Result of an eigen analysis of a second-moment (or Fisher) matrix.
/// Eigenvalues are descending; eigenvectors are columns, orthonormal with
/// respect to the constraint matrix, with the sign convention that the
/// largest-magnitude entry of each vector is positive (ties broken by the
/// lowest index).
struct EigenReport {
    Vector eigenvalues;
    Matrix eigenvectors;
    Vector summary; // s2_j = sum_i lambda_i q_ji^2; standard constraint only
    ConstraintKind constraint = ConstraintKind::Identity;
    std::string constraint_note;
    std::vector<std::string> param_labels;
};

/// r_jk = (dU_k/db_j)/U_k; Proportional multiplies row j by the nominal
/// value of parameter j. Optional per-utility weights scale the columns.
SensitivityMatrix build_r(const std::vector<UtilityEstimate>& estimates, Normalization norm,
                          const ParamVector& params, const Vector& weights = Vector());

/// Average of r r^T over realizations (threshold draws / repetitions),
/// symmetrized.
Matrix second_moment(const std::vector<SensitivityMatrix>& realizations);

EigenReport solve_standard(const Matrix& m);

/// A q = lambda W q via Cholesky whitening; W is ridge-regularized on
/// decomposition failure (delta*trace(W)/P, escalating x10 up to 1e-6).
EigenReport solve_generalized(const Matrix& a, const Matrix& w,
                              ConstraintKind kind = ConstraintKind::Custom);

/// s2_j = sum_i lambda_i q_ji^2 (equals the diagonal of the decomposed matrix).
Vector summary_index(const EigenReport& report);

/// J^T M J for a change of parameters b = phi(theta).
Matrix reparameterize(const Matrix& m, const Matrix& jacobian);

/// Apply the deterministic sign convention to a vector.
Vector fix_sign(Vector v);

} // namespace psens
