#include "psens/eig.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace psens {

namespace {

void check_symmetric(const Matrix& m, const char* what) {
    if (m.rows() != m.cols()) throw ConfigError(std::string(what) + ": matrix must be square");
    const double scale = std::max(1e-300, m.cwiseAbs().maxCoeff());
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * std::max(1.0, scale))
        throw ConfigError(std::string(what) + ": matrix asymmetry " + std::to_string(asym) +
                          " exceeds tolerance");
}

/// Descending sort + sign convention applied to an ascending-ordered
/// eigendecomposition.
EigenReport order_and_sign(const Vector& lambda_asc, const Matrix& vec_asc) {
    const Index p = lambda_asc.size();
    EigenReport report;
    report.eigenvalues.resize(p);
    report.eigenvectors.resize(p, p);
    for (Index i = 0; i < p; ++i) {
        report.eigenvalues[i] = lambda_asc[p - 1 - i];
        report.eigenvectors.col(i) = fix_sign(vec_asc.col(p - 1 - i));
    }
    return report;
}

} // namespace

Vector fix_sign(Vector v) {
    Index arg = 0;
    double best = -1.0;
    for (Index j = 0; j < v.size(); ++j) {
        const double a = std::abs(v[j]);
        if (a > best) {
            best = a;
            arg = j;
        }
    }
    if (v.size() > 0 && v[arg] < 0.0) v = -v;
    return v;
}

SensitivityMatrix build_r(const std::vector<UtilityEstimate>& estimates, Normalization norm,
                          const ParamVector& params, const Vector& weights) {
    if (estimates.empty()) throw ConfigError("build_r: no utility estimates");
    const Index p = static_cast<Index>(params.size());
    const Index k = static_cast<Index>(estimates.size());
    if (weights.size() != 0 && weights.size() != k)
        throw ConfigError("build_r: weight count must match utility count");

    SensitivityMatrix sm;
    sm.normalization = norm;
    sm.r.resize(p, k);
    for (Index c = 0; c < k; ++c) {
        const auto& est = estimates[static_cast<size_t>(c)];
        if (est.gradient.size() != p)
            throw ConfigError("build_r: gradient length mismatch for utility '" + est.label + "'");
        if (!(std::abs(est.value) >= 1e-300))
            throw NumericError("build_r: utility '" + est.label + "' (column " +
                               std::to_string(c) + ") is degenerate (U = " +
                               std::to_string(est.value) + ")");
        const double w = weights.size() ? weights[c] : 1.0;
        sm.r.col(c) = w / est.value * est.gradient;
        sm.utility_labels.push_back(est.label);
    }
    for (const auto& entry : params) {
        if (norm == Normalization::Proportional && entry.nominal == 0.0)
            throw ConfigError("build_r: proportional normalization requires nonzero nominal for " +
                              entry.label());
        sm.param_labels.push_back(entry.label());
    }
    if (norm == Normalization::Proportional)
        for (Index j = 0; j < p; ++j) sm.r.row(j) *= params[static_cast<size_t>(j)].nominal;
    return sm;
}

Matrix second_moment(const std::vector<SensitivityMatrix>& realizations) {
    if (realizations.empty()) throw ConfigError("second_moment: no realizations");
    const Index p = realizations.front().r.rows();
    Matrix acc = Matrix::Zero(p, p);
    for (const auto& sm : realizations) {
        if (sm.r.rows() != p)
            throw ConfigError("second_moment: inconsistent parameter dimension across realizations");
        acc += sm.r * sm.r.transpose();
    }
    acc /= static_cast<double>(realizations.size());
    return 0.5 * (acc + acc.transpose());
}

EigenReport solve_standard(const Matrix& m) {
    check_symmetric(m, "solve_standard");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (m + m.transpose()));
    if (solver.info() != Eigen::Success) throw NumericError("solve_standard: decomposition failed");
    EigenReport report = order_and_sign(solver.eigenvalues(), solver.eigenvectors());
    report.constraint = ConstraintKind::Identity;
    report.summary = summary_index(report);
    return report;
}

EigenReport solve_generalized(const Matrix& a, const Matrix& w, ConstraintKind kind) {
    check_symmetric(a, "solve_generalized (A)");
    check_symmetric(w, "solve_generalized (W)");
    if (a.rows() != w.rows()) throw ConfigError("solve_generalized: A and W sizes differ");
    const Index p = a.rows();

    // Cholesky with escalating ridge: W is PSD in exact arithmetic but the
    // KDE-estimated Fisher matrix can be numerically singular.
    Matrix wreg = 0.5 * (w + w.transpose());
    const double base = wreg.trace() / static_cast<double>(p);
    Eigen::LLT<Matrix> llt(wreg);
    double delta = 1e-10;
    std::string note;
    while (llt.info() != Eigen::Success && delta <= 1e-6) {
        wreg = 0.5 * (w + w.transpose()) + delta * std::max(base, 1e-300) *
                                               Matrix::Identity(p, p);
        llt.compute(wreg);
        note = "ridge " + std::to_string(delta);
        delta *= 10.0;
    }
    if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Matrix> probe(0.5 * (w + w.transpose()));
        throw NumericError("solve_generalized: constraint matrix not positive definite "
                           "(smallest eigenvalue " +
                           std::to_string(probe.eigenvalues().minCoeff()) + ")");
    }

    const Matrix l = llt.matrixL();
    // B = L^-1 A L^-T, symmetric; eigenvectors map back through L^-T.
    Matrix x = l.triangularView<Eigen::Lower>().solve(0.5 * (a + a.transpose()));
    Matrix b = l.triangularView<Eigen::Lower>().solve(x.transpose()).transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (b + b.transpose()));
    if (solver.info() != Eigen::Success)
        throw NumericError("solve_generalized: whitened decomposition failed");

    Matrix back = l.transpose().triangularView<Eigen::Upper>().solve(solver.eigenvectors());
    EigenReport report = order_and_sign(solver.eigenvalues(), back);
    report.constraint = kind;
    report.constraint_note = note;
    return report;
}

Vector summary_index(const EigenReport& report) {
    const Index p = report.eigenvalues.size();
    Vector s = Vector::Zero(p);
    for (Index j = 0; j < p; ++j)
        for (Index i = 0; i < p; ++i) {
            const double q = report.eigenvectors(j, i);
            s[j] += report.eigenvalues[i] * q * q;
        }
    return s;
}

Matrix reparameterize(const Matrix& m, const Matrix& jacobian) {
    if (jacobian.rows() != m.rows())
        throw ConfigError("reparameterize: Jacobian row count must match matrix size");
    if (!jacobian.allFinite()) throw ConfigError("reparameterize: Jacobian has non-finite entries");
    return jacobian.transpose() * m * jacobian;
}

} // namespace psens
