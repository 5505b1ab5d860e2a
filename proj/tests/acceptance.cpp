// Acceptance suite: end-to-end checks of the sensitivity pipeline against
// analytic references and the published benchmark ratios. Prints one
// PASS/FAIL line per criterion and exits nonzero on any failure.
#include "psens/analytic.hpp"
#include "psens/eig.hpp"
#include "psens/pipeline.hpp"
#include "psens/rng.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

using namespace psens;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] %2d: %s (%s)\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof(buf), f, args);
    va_end(args);
    return buf;
}

Json gaussian_marginals(const std::vector<std::string>& names, const std::vector<double>& means,
                        const std::vector<double>& stds) {
    Json ms = Json::array();
    for (size_t i = 0; i < names.size(); ++i)
        ms.push_back({{"name", names[i]}, {"kind", "gaussian"}, {"mean", means[i]}, {"std", stds[i]}});
    return ms;
}

Json benchmark41_config(Index n, int reps, std::uint64_t seed) {
    Json j;
    j["model"] = {{"name", "decreasing_coeff"}};
    std::vector<std::string> names;
    for (int i = 0; i < 8; ++i) names.push_back("x" + std::to_string(i + 1));
    j["marginals"] = gaussian_marginals(names, std::vector<double>(8, 0.0), std::vector<double>(8, 1.0));
    j["analysis"] = "fisher";
    j["n"] = n;
    j["seed"] = seed;
    j["repetitions"] = reps;
    return j;
}

Json cantilever_config(const char* analysis, bool with_utilities) {
    Json j;
    j["model"] = {{"name", "cantilever"}};
    Json ms = Json::array();
    const char* names[5] = {"E", "rho", "L", "w", "t"};
    const double means[5] = {69e9, 2700.0, 0.45, 2e-2, 2e-3};
    for (int i = 0; i < 5; ++i)
        ms.push_back({{"name", names[i]}, {"kind", "gaussian"}, {"mean", means[i]}, {"cov", 0.1}});
    j["marginals"] = ms;
    if (with_utilities)
        j["utilities"] =
            Json::array({{{"kind", "moment"}, {"order", 1}, {"output", 0}, {"label", "accel"}},
                         {{"kind", "moment"}, {"order", 1}, {"output", 1}, {"label", "strain"}}});
    j["analysis"] = analysis;
    j["normalization"] = "proportional";
    j["rescale_outputs"] = true;
    j["n"] = 20000;
    j["seed"] = 42;
    j["repetitions"] = 10;
    return j;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Matrix random_psd(Index p, std::uint64_t seed) {
    rng::Xoshiro256pp gen(seed);
    Matrix a(p, p);
    for (Index i = 0; i < p; ++i)
        for (Index j = 0; j < p; ++j) a(i, j) = gen.normal();
    return a * a.transpose();
}

} // namespace

int main() {
    // ----- Criteria 1 and 2: decreasing-coefficient benchmark -----
    {
        const auto t0 = std::chrono::steady_clock::now();
        const RunReport rep = run(parse_config(benchmark41_config(20000, 10, 42)));
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto& ev = rep.primary.report.eigenvectors;
        // Parameter order: x_i.mu at 2i, x_i.sigma at 2i+1. The first
        // eigenvector carries the std-dev sensitivities, the second the means.
        const double s2 = ev(3, 0) / ev(1, 0);
        const double s3 = ev(5, 0) / ev(1, 0);
        const double m2 = ev(2, 1) / ev(0, 1);
        const double m3 = ev(4, 1) / ev(0, 1);
        const bool ratios = std::abs(s2 - 0.236) <= 0.05 && std::abs(s3 - 0.065) <= 0.05 &&
                            std::abs(m2 - 0.496) <= 0.06 && std::abs(m3 - 0.260) <= 0.06;
        report(1, ratios && secs < 60.0,
               "decreasing-coeff first-eigenvector ratios match the published values",
               fmt("std-dev 1:%.3f:%.3f vs 1:0.236:0.065, mean 1:%.3f:%.3f vs 1:0.496:0.260, "
                   "%.1fs",
                   s2, s3, m2, m3, secs));

        Vector var_index(8);
        for (int i = 0; i < 8; ++i)
            var_index[i] = rep.primary.report.summary[2 * i] + rep.primary.report.summary[2 * i + 1];
        bool dominate = true;
        for (int top = 0; top < 3; ++top)
            for (int rest = 3; rest < 8; ++rest)
                if (var_index[top] <= var_index[rest]) dominate = false;
        report(2, dominate, "x1..x3 dominate x4..x8 in the summary index",
               fmt("indices %.3g %.3g %.3g | %.3g %.3g %.3g %.3g %.3g", var_index[0], var_index[1],
                   var_index[2], var_index[3], var_index[4], var_index[5], var_index[6],
                   var_index[7]));
    }

    // ----- Criterion 3: Roos & Arnold benchmark -----
    {
        Json j;
        j["model"] = {{"name", "roos_arnold"}, {"dim", 5}};
        std::vector<std::string> names;
        for (int i = 0; i < 5; ++i) names.push_back("x" + std::to_string(i + 1));
        j["marginals"] =
            gaussian_marginals(names, std::vector<double>(5, 0.0), std::vector<double>(5, 1.0));
        j["analysis"] = "fisher";
        j["n"] = 20000;
        j["seed"] = 42;
        j["repetitions"] = 10;
        const RunReport rep = run(parse_config(j));
        const double ratio = rep.primary.report.eigenvalues[0] / rep.primary.report.eigenvalues[1];
        double mn = 1e300, mx = 0.0, mean = 0.0;
        for (int i = 0; i < 5; ++i) {
            const double s =
                rep.primary.report.summary[2 * i] + rep.primary.report.summary[2 * i + 1];
            mn = std::min(mn, s);
            mx = std::max(mx, s);
            mean += s / 5.0;
        }
        const double spread = (mx - mn) / mean;
        report(3, ratio > 5.0 && spread <= 0.20,
               "roos-arnold: dominant first eigenvalue, near-equal variable importance",
               fmt("lambda1/lambda2 = %.1f (> 5), spread = %.1f%% (<= 20%%)", ratio,
                   100.0 * spread));
    }

    // ----- Criteria 4 and 5: Fisher oracle and KL consistency -----
    {
        Json j;
        j["model"] = {{"name", "identity"}, {"dim", 1}};
        j["marginals"] = gaussian_marginals({"x"}, {0.0}, {1.0});
        j["analysis"] = "fisher";
        j["n"] = 20000;
        j["seed"] = 42;
        j["repetitions"] = 10;
        const RunReport rep = run(parse_config(j));
        const Matrix& f = rep.primary.moment;
        Matrix target = Matrix::Zero(2, 2);
        target(0, 0) = 1.0;
        target(1, 1) = 2.0;
        const double frob = std::sqrt((f - target).squaredNorm() / target.squaredNorm());
        report(4, frob <= 0.10, "estimated Fisher matrix within 10% of diag(1, 2)",
               fmt("F = [%.3f %.3f; %.3f %.3f], rel error %.1f%%", f(0, 0), f(0, 1), f(1, 0),
                   f(1, 1), 100.0 * frob));

        FisherMatrix fim;
        fim.F = f;
        Vector db(2);
        db << 0.1, 0.05;
        const double quad = kl_quadratic(fim, db);
        // Exact Gaussian KL between the perturbed and the base density.
        const double exact =
            std::log(1.0 / 1.05) + (1.05 * 1.05 + 0.1 * 0.1) / 2.0 - 0.5;
        const double gap = std::abs(quad - exact) / exact;
        report(5, gap <= 0.05, "quadratic form matches the exact Gaussian KL within 5%",
               fmt("0.5 db'Fdb = %.6f vs KL = %.6f, gap %.2f%%", quad, exact, 100.0 * gap));
    }

    // ----- Criterion 6: LR/SF failure-probability gradient oracle -----
    {
        const InputModel model({Marginal::gaussian("x", 0.0, 1.0)});
        const SampleBatch batch = run_batch(model, identity_model(1), 200000, 42);
        const UtilityEstimate est = control_variate_center(batch, UtilitySpec::failure(0, 1.0));
        const double phi1 = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
        const double err = std::abs(est.gradient[0] - phi1);
        report(6, err <= 3.0 * est.se_gradient[0],
               "failure gradient dPf/dmu matches phi(1) within 3 standard errors",
               fmt("estimate %.5f vs %.5f, |diff| = %.2g, 3se = %.2g", est.gradient[0], phi1, err,
                   3.0 * est.se_gradient[0]));
    }

    // ----- Criterion 7: summary index equals the moment-matrix diagonal -----
    {
        bool ok = true;
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 100; ++seed) {
            const Index p = 2 + static_cast<Index>(seed % 7);
            const Matrix m = random_psd(p, seed);
            const EigenReport r = solve_standard(m);
            const Vector s = summary_index(r);
            for (Index jj = 0; jj < p; ++jj) {
                const double err = std::abs(s[jj] - m(jj, jj)) / std::max(1.0, m(jj, jj));
                worst = std::max(worst, err);
                if (err > 1e-10) ok = false;
            }
        }
        report(7, ok, "summary index equals diag(E[rr']) on 100 random PSD matrices",
               fmt("worst relative deviation %.2g (<= 1e-10)", worst));
    }

    // ----- Criterion 8: natural-frequency sensitivity oracle -----
    {
        bool fd_ok = true;
        double worst = 0.0;
        int checked = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const Index dof = 2 + static_cast<Index>(seed % 3);
            rng::Xoshiro256pp gen(seed);
            auto spd = [&gen, dof]() {
                Matrix a(dof, dof);
                for (Index i = 0; i < dof; ++i)
                    for (Index j = 0; j < dof; ++j) a(i, j) = gen.normal();
                return Matrix(a * a.transpose() + 0.5 * dof * Matrix::Identity(dof, dof));
            };
            auto k1 = std::make_shared<Matrix>(spd());
            auto k2 = std::make_shared<Matrix>(spd());
            auto m1 = std::make_shared<Matrix>(spd());
            EigenSystemSpec spec;
            spec.dim = dof;
            spec.param_dim = 3;
            spec.stiffness = [k1, k2](const Vector& b) {
                return Matrix(b[0] * *k1 + b[1] * *k2);
            };
            spec.mass = [m1](const Vector& b) { return Matrix(b[2] * *m1); };
            Vector b(3);
            b << 1.0 + 0.3 * gen.uniform(), 0.8, 1.2;
            for (Index mode = 0; mode < dof; ++mode) {
                const FreqSensitivity fs = freq_sensitivity(spec, b, mode);
                for (Index jj = 0; jj < 3; ++jj) {
                    const double step = 1e-6 * std::max(std::abs(b[jj]), 1.0);
                    Vector up = b, dn = b;
                    up[jj] += step;
                    dn[jj] -= step;
                    const double fd = (eval_eigensystem(spec, up).omega[mode] -
                                       eval_eigensystem(spec, dn).omega[mode]) /
                                      (2.0 * step);
                    const double err = std::abs(fs.domega_db[jj] - fd) / std::max(std::abs(fd), 1e-8);
                    worst = std::max(worst, err);
                    if (err > 1e-5) fd_ok = false;
                    ++checked;
                }
            }
        }
        // Global stiffness scale: normalized sensitivity is exactly +1/2.
        rng::Xoshiro256pp gen(5);
        Matrix a(3, 3);
        for (Index i = 0; i < 3; ++i)
            for (Index j = 0; j < 3; ++j) a(i, j) = gen.normal();
        auto k0 = std::make_shared<Matrix>(Matrix(a * a.transpose() + 3.0 * Matrix::Identity(3, 3)));
        EigenSystemSpec scale;
        scale.dim = 3;
        scale.param_dim = 1;
        scale.stiffness = [k0](const Vector& s) { return Matrix(s[0] * *k0); };
        scale.mass = [](const Vector&) { return Matrix(Matrix::Identity(3, 3)); };
        Vector s1(1);
        s1 << 1.9;
        bool scale_ok = true;
        double scale_worst = 0.0;
        for (Index mode = 0; mode < 3; ++mode) {
            const double r = freq_sensitivity(scale, s1, mode).normalized[0];
            scale_worst = std::max(scale_worst, std::abs(r - 0.5));
            if (std::abs(r - 0.5) > 1e-8) scale_ok = false;
        }
        report(8, fd_ok && scale_ok,
               "frequency sensitivities match finite differences; stiffness scale gives +1/2",
               fmt("%d derivative checks, worst rel %.2g (<= 1e-5); |r - 0.5| <= %.2g", checked,
                   worst, scale_worst));
    }

    // ----- Criterion 9: delta-approximation limit on the 2-DOF chain -----
    {
        const EigenSystemSpec chain = chain_system(2);
        const DeltaLimitResult res =
            delta_limit_check(chain, Vector::Ones(4), 0, 1e-4, 20000, 42);
        report(9, std::abs(res.cosine) > 0.99 && res.sign_match,
               "dominant Fisher eigenvector matches the analytic sensitivity direction",
               fmt("|cos| = %.4f (> 0.99), sign pattern %s, sigma-block share %.2g",
                   std::abs(res.cosine), res.sign_match ? "matches" : "differs",
                   res.sigma_block_share));
    }

    // ----- Criterion 10: generalized eigenproblem mechanics -----
    {
        const Matrix m = random_psd(6, 77);
        const EigenReport std_rep = solve_standard(m);
        const EigenReport gen_rep = solve_generalized(m, Matrix::Identity(6, 6));
        double val_err = (std_rep.eigenvalues - gen_rep.eigenvalues).cwiseAbs().maxCoeff();
        double vec_err = 0.0;
        for (Index c = 0; c < 6; ++c)
            vec_err = std::max(vec_err, (std_rep.eigenvectors.col(c) - gen_rep.eigenvectors.col(c))
                                            .cwiseAbs()
                                            .maxCoeff());
        Vector aa(2);
        aa << 1.0, 1.0;
        Matrix w = Matrix::Zero(2, 2);
        w(0, 0) = 1.0;
        w(1, 1) = 4.0;
        const EigenReport rank1 = solve_generalized(aa * aa.transpose(), w);
        const double lam_err = std::abs(rank1.eigenvalues[0] - 1.25);
        const double dir_err = std::abs(rank1.eigenvectors(1, 0) / rank1.eigenvectors(0, 0) - 0.25);

        // Synthetic two-utility failure model: the failure responses depend on
        // the second input, the entropy constraint (Fisher of y1 only) does not.
        Json j;
        j["model"] = {{"name", "linear"},
                      {"coeffs", {{1.0, 0.0}, {1.0, 2.0}}},
                      {"noise_std", {0.02, 0.02}}};
        j["marginals"] = gaussian_marginals({"a", "b"}, {0.0, 0.0}, {1.0, 1.0});
        j["analysis"] = "generalized_failure_vs_fisher";
        j["utilities"] = Json::array({{{"kind", "failure"}, {"output", 1}, {"threshold", 1.0}},
                                      {{"kind", "failure"}, {"output", 1}, {"threshold", 2.0}}});
        j["kde"] = {{"outputs", {0}}};
        j["n"] = 20000;
        j["seed"] = 42;
        j["repetitions"] = 4;
        const RunReport rep = run(parse_config(j));
        report(10,
               val_err < 1e-10 && vec_err < 1e-8 && lam_err < 1e-10 && dir_err < 1e-10 &&
                   rep.constrained_cosine < 0.99,
               "generalized solve: W=I reduction, rank-1 closed form, constrained rotation",
               fmt("reduction err %.1g/%.1g, rank-1 err %.1g/%.1g, |cos(std, constrained)| = %.3f",
                   val_err, vec_err, lam_err, dir_err, rep.constrained_cosine));
    }

    // ----- Criterion 11: cantilever combined vs joint-Fisher ranking -----
    {
        const RunReport omega = run(parse_config(cantilever_config("utility_eigen", true)));
        const RunReport fisher = run(parse_config(cantilever_config("fisher", false)));
        const auto top2 = [](const RunReport& r) {
            std::vector<std::pair<double, int>> idx;
            for (int i = 0; i < 5; ++i)
                idx.push_back({r.primary.report.summary[2 * i] + r.primary.report.summary[2 * i + 1], i});
            std::sort(idx.rbegin(), idx.rend());
            std::vector<int> t = {idx[0].second, idx[1].second};
            std::sort(t.begin(), t.end());
            return t;
        };
        const auto to = top2(omega);
        const auto tf = top2(fisher);
        const char* names[5] = {"E", "rho", "L", "w", "t"};

        Json single = cantilever_config("utility_eigen", false);
        single["utilities"] = Json::array({{{"kind", "moment"}, {"order", 1}, {"output", 1}}});
        single["repetitions"] = 1;
        single["n"] = 5000;
        const RunReport one = run(parse_config(single));
        const double rank1_ratio =
            one.primary.report.eigenvalues[1] / one.primary.report.eigenvalues[0];
        report(11, to == tf && rank1_ratio < 1e-8,
               "combined and joint-Fisher analyses rank the same top-2 variables; "
               "deterministic utility is rank-1",
               fmt("combined {%s, %s} vs fisher {%s, %s}; lambda2/lambda1 = %.1g", names[to[0]],
                   names[to[1]], names[tf[0]], names[tf[1]], rank1_ratio));
    }

    // ----- Criterion 12: byte-identical reports across thread counts -----
    {
        bool ok = true;
        std::string detail = "OpenMP disabled";
#if defined(_OPENMP)
        const RunConfig cfg = parse_config(benchmark41_config(4000, 2, 7));
        namespace fs = std::filesystem;
        const auto dir1 = fs::temp_directory_path() / "psens_accept_t1";
        const auto dir2 = fs::temp_directory_path() / "psens_accept_t2";
        const int max_threads = omp_get_max_threads();
        omp_set_num_threads(1);
        const RunReport r1 = run(cfg);
        emit(r1, dir1.string());
        omp_set_num_threads(std::max(2, max_threads));
        const RunReport r2 = run(cfg);
        emit(r2, dir2.string());
        omp_set_num_threads(max_threads);
        for (const char* f : {"report.json", "eigvecs.csv", "spectrum.csv", "summary.csv"})
            if (slurp(dir1 / f) != slurp(dir2 / f)) ok = false;
        detail = fmt("hash %s, 1 vs %d threads, all four files %s", r1.config_hash.c_str(),
                     std::max(2, max_threads), ok ? "identical" : "DIFFER");
        fs::remove_all(dir1);
        fs::remove_all(dir2);
#endif
        report(12, ok, "reports are byte-identical across thread counts", detail);
    }

    std::printf("%s: %d of 12 criteria failed\n", g_failures == 0 ? "SUCCESS" : "FAILURE",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
