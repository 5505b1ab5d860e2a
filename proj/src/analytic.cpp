#include "psens/analytic.hpp"

#include "psens/dist.hpp"
#include "psens/eig.hpp"
#include "psens/estimator.hpp"

#include <cmath>

namespace psens {

FreqSensitivity freq_sensitivity(const EigenSystemSpec& spec, const Vector& b, Index mode) {
    if (mode < 0 || mode >= spec.dim) throw ConfigError("freq_sensitivity: mode out of range");
    const ModalSolution modal = eval_eigensystem(spec, b);
    // Simple-eigenvalue requirement, on the omega^2 spectrum.
    for (Index i = 0; i < spec.dim; ++i) {
        if (i == mode) continue;
        const double li = modal.omega[i] * modal.omega[i];
        const double lm = modal.omega[mode] * modal.omega[mode];
        if (std::abs(li - lm) <= 1e-6 * std::max(std::abs(li), std::abs(lm)))
            throw NumericError("freq_sensitivity: repeated eigenvalue at mode " +
                               std::to_string(mode));
    }
    const double omega = modal.omega[mode];
    if (!(omega > 0.0)) throw NumericError("freq_sensitivity: zero natural frequency");
    const Vector phi = modal.modes.col(mode);

    const Index np = b.size();
    FreqSensitivity out;
    out.mode = mode;
    out.omega = omega;
    out.domega_db.resize(np);
    out.normalized.resize(np);
    for (Index j = 0; j < np; ++j) {
        Matrix dk, dm;
        if (spec.stiffness_derivative && spec.mass_derivative) {
            dk = spec.stiffness_derivative(b, j);
            dm = spec.mass_derivative(b, j);
        } else {
            const double step = 1e-6 * std::max(std::abs(b[j]), 1.0);
            Vector bp = b, bm = b;
            bp[j] += step;
            bm[j] -= step;
            dk = (spec.stiffness(bp) - spec.stiffness(bm)) / (2.0 * step);
            dm = (spec.mass(bp) - spec.mass(bm)) / (2.0 * step);
        }
        out.domega_db[j] = phi.dot((dk - omega * omega * dm) * phi) / (2.0 * omega);
        out.normalized[j] = out.domega_db[j] * b[j] / omega;
    }
    return out;
}

DeltaLimitResult delta_limit_check(const EigenSystemSpec& spec, const Vector& b, Index mode,
                                   double cov, Index n, std::uint64_t seed,
                                   const KdeConfig& kde) {
    if (!(cov > 0.0) || cov > 1e-3)
        throw ConfigError("delta_limit_check: CoV must lie in (0, 1e-3]");
    std::vector<Marginal> marginals;
    for (Index j = 0; j < b.size(); ++j)
        marginals.push_back(Marginal::delta_approx("b" + std::to_string(j + 1), b[j], cov));
    const InputModel inputs(std::move(marginals));
    const ModelSpec model = eigen_frequency_model(spec, mode);

    const SampleBatch batch = run_batch(inputs, model, n, seed);
    const FisherMatrix fim = fisher_matrix(batch, kde);
    const Matrix fn = reparameterize(fim.F, Matrix(inputs.nominals().asDiagonal()));
    const EigenReport report = solve_standard(fn);

    const Index np = b.size();
    Vector mean_block(np);
    double sigma_mass = 0.0;
    for (Index j = 0; j < np; ++j) {
        mean_block[j] = report.eigenvectors(2 * j, 0);
        const double s = report.eigenvectors(2 * j + 1, 0);
        sigma_mass += s * s;
    }

    DeltaLimitResult out;
    out.sigma_block_share = sigma_mass; // eigenvector is unit norm
    out.eigenvalues = report.eigenvalues;
    out.fim_direction = fix_sign(mean_block / mean_block.norm());
    const FreqSensitivity fs = freq_sensitivity(spec, b, mode);
    out.analytic_direction = fix_sign(fs.normalized / fs.normalized.norm());
    // Symmetric systems can tie the convention's largest-magnitude entry, in
    // which case sampling noise decides the estimated vector's orientation;
    // align orientations before comparing the relative sign pattern.
    if (out.fim_direction.dot(out.analytic_direction) < 0.0) out.fim_direction = -out.fim_direction;
    out.cosine = out.fim_direction.dot(out.analytic_direction);

    const double ref = out.analytic_direction.cwiseAbs().maxCoeff();
    out.sign_match = true;
    for (Index j = 0; j < np; ++j) {
        if (std::abs(out.analytic_direction[j]) < 0.05 * ref) continue; // below noise scale
        if (out.analytic_direction[j] * out.fim_direction[j] < 0.0) out.sign_match = false;
    }
    return out;
}

} // namespace psens
