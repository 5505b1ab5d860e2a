#include "psens/fisher.hpp"

#include "psens/eig.hpp"
#include "psens/model.hpp"
#include "psens/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace psens;

namespace {

InputModel std_normal(Index d) {
    std::vector<Marginal> ms;
    for (Index i = 0; i < d; ++i)
        ms.push_back(Marginal::gaussian("x" + std::to_string(i + 1), 0.0, 1.0));
    return InputModel(ms);
}

SampleBatch identity_batch(Index n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
    const InputModel model({Marginal::gaussian("x", mean, sd)});
    return run_batch(model, identity_model(1), n, seed);
}

} // namespace

TEST_SUITE("fisher") {

TEST_CASE("output score vanishes at the distribution mean") {
    const SampleBatch batch = identity_batch(20000, 3, 0.5, 1.0);
    const OutputScores os = output_score(batch);
    // Sample closest to the mean output value.
    Index best = 0;
    for (Index i = 0; i < batch.n; ++i)
        if (std::abs(batch.outputs(i, 0) - 0.5) < std::abs(batch.outputs(best, 0) - 0.5)) best = i;
    CHECK(std::abs(os.scores(best, 0)) < 0.05);
}

TEST_CASE("output scores are invariant under a constant output shift") {
    const SampleBatch batch = identity_batch(4000, 5);
    SampleBatch shifted = batch;
    shifted.outputs.array() += 11.5;
    const OutputScores a = output_score(batch);
    const OutputScores b = output_score(shifted);
    CHECK((a.scores - b.scores).cwiseAbs().maxCoeff() <
          1e-9 * std::max(1.0, a.scores.cwiseAbs().maxCoeff()));
}

TEST_CASE("score standard error halves when n quadruples at fixed bandwidth") {
    KdeConfig cfg;
    cfg.bandwidth_rule = KdeConfig::Bandwidth::Fixed;
    cfg.fixed_bandwidth = Vector::Constant(1, 0.2);
    const int seeds = 24;
    const auto spread = [&](Index n) {
        std::vector<double> vals;
        for (int s = 0; s < seeds; ++s) {
            const SampleBatch batch = identity_batch(n, 100 + s);
            const OutputScores os = output_score(batch, cfg);
            // sigma-score at the sample closest to the batch median output.
            std::vector<double> y(batch.n);
            for (Index i = 0; i < batch.n; ++i) y[static_cast<size_t>(i)] = batch.outputs(i, 0);
            std::nth_element(y.begin(), y.begin() + batch.n / 2, y.end());
            const double med = y[static_cast<size_t>(batch.n / 2)];
            Index best = 0;
            for (Index i = 0; i < batch.n; ++i)
                if (std::abs(batch.outputs(i, 0) - med) < std::abs(batch.outputs(best, 0) - med))
                    best = i;
            vals.push_back(os.scores(best, 1));
        }
        double mean = 0.0, var = 0.0;
        for (double v : vals) mean += v / seeds;
        for (double v : vals) var += (v - mean) * (v - mean) / (seeds - 1);
        return std::sqrt(var);
    };
    const double ratio = spread(8000) / spread(2000);
    CHECK(ratio > 0.25);
    CHECK(ratio < 0.8);
}

TEST_CASE("fisher matrix of the gaussian identity model is near diag(1, 2)") {
    const SampleBatch batch = identity_batch(20000, 7);
    const FisherMatrix fim = fisher_matrix(batch);
    CHECK(std::abs(fim.F(0, 0) - 1.0) < 0.10);
    CHECK(std::abs(fim.F(1, 1) - 2.0) < 0.20);
    CHECK(std::abs(fim.F(0, 1)) < 0.15);
    CHECK(fim.n_used + fim.n_excluded == batch.n);
}

TEST_CASE("fisher matrix of a linear model is rank one in the mean block") {
    Matrix coeffs(1, 2);
    coeffs << 2.0, 1.0;
    Vector noise(1);
    noise << 0.01;
    const SampleBatch batch =
        run_batch(std_normal(2), linear_model(coeffs, noise, 4), 20000, 11);
    const FisherMatrix fim = fisher_matrix(batch);
    // Mean-parameter block: indices 0 (x1.mu) and 2 (x2.mu).
    Matrix mu_block(2, 2);
    mu_block << fim.F(0, 0), fim.F(0, 2), fim.F(2, 0), fim.F(2, 2);
    const auto rep = solve_standard(mu_block);
    CHECK(rep.eigenvalues[1] / rep.eigenvalues[0] < 0.05);
    // F ~ a a^T / sigma_y^2 with a = (2, 1), sigma_y^2 = 5.
    CHECK(mu_block(0, 0) == doctest::Approx(0.8).epsilon(0.15));
    CHECK(mu_block(0, 1) == doctest::Approx(0.4).epsilon(0.15));
    CHECK(mu_block(1, 1) == doctest::Approx(0.2).epsilon(0.15));
}

TEST_CASE("fisher matrices are PSD") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const SampleBatch batch = identity_batch(3000, seed);
        const FisherMatrix fim = fisher_matrix(batch);
        const auto rep = solve_standard(fim.F);
        CHECK(rep.eigenvalues.minCoeff() >= 0.0);
    }
}

TEST_CASE("kl_quadratic reference values") {
    FisherMatrix fim;
    fim.F = Matrix::Zero(2, 2);
    fim.F(0, 0) = 1.0;
    fim.F(1, 1) = 2.0;
    Vector db = Vector::Zero(2);
    CHECK(kl_quadratic(fim, db) == 0.0);

    db << 0.1, 0.0;
    CHECK(kl_quadratic(fim, db) == doctest::Approx(0.005).epsilon(1e-12));
    // Exact KL(N(0,1) || N(0.1,1)) = 0.1^2/2 = 0.005.

    db << 0.0, 0.05;
    const double quad = kl_quadratic(fim, db);
    CHECK(quad == doctest::Approx(0.0025).epsilon(1e-12));
    // Exact Gaussian KL for the perturbed-vs-base densities:
    // KL(N(0,1.05^2) || N(0,1)) = log(1/1.05) + 1.05^2/2 - 1/2.
    const double exact = std::log(1.0 / 1.05) + 1.05 * 1.05 / 2.0 - 0.5;
    CHECK(std::abs(quad - exact) / exact < 0.03);
}

TEST_CASE("fisher matrix equals the per-sample second-moment route") {
    const SampleBatch batch = identity_batch(2000, 13);
    KdeConfig cfg;
    cfg.floor_rel = 1e-300; // keep every row so the two routes see the same data
    const FisherMatrix fim = fisher_matrix(batch, cfg);
    const OutputScores os = output_score(batch, cfg);
    REQUIRE(os.excluded.empty());
    std::vector<SensitivityMatrix> reals;
    for (Index i = 0; i < batch.n; ++i) {
        SensitivityMatrix sm;
        sm.r = os.scores.row(i).transpose();
        reals.push_back(std::move(sm));
    }
    const Matrix via_moment = second_moment(reals);
    CHECK((fim.F - via_moment).cwiseAbs().maxCoeff() <=
          1e-10 * std::max(1.0, via_moment.cwiseAbs().maxCoeff()));
}

TEST_CASE("reparameterization covariance of the fisher matrix") {
    const SampleBatch batch = identity_batch(2000, 17);
    const FisherMatrix fim = fisher_matrix(batch);
    rng::Xoshiro256pp gen(55);
    Vector diag(2);
    diag << 0.7 + gen.uniform(), 1.5 + gen.uniform();
    const Matrix jac = diag.asDiagonal();
    // Transform the per-sample scores, rebuild, and compare with J^T F J.
    const OutputScores os = output_score(batch);
    std::vector<char> keep(static_cast<size_t>(batch.n), 1);
    for (Index i : os.excluded) keep[static_cast<size_t>(i)] = 0;
    Matrix acc = Matrix::Zero(2, 2);
    Index used = 0;
    for (Index i = 0; i < batch.n; ++i) {
        if (!keep[static_cast<size_t>(i)]) continue;
        const Vector s = jac.transpose() * os.scores.row(i).transpose();
        acc += s * s.transpose();
        ++used;
    }
    acc /= static_cast<double>(used);
    CHECK((reparameterize(fim.F, jac) - acc).cwiseAbs().maxCoeff() <=
          1e-10 * acc.cwiseAbs().maxCoeff());
}

TEST_CASE("binned evaluation agrees with the exact pairwise kernel") {
    const SampleBatch batch = identity_batch(4000, 23);
    KdeConfig exact;
    exact.method = KdeConfig::Method::Exact;
    KdeConfig binned;
    binned.method = KdeConfig::Method::Binned;
    const FisherMatrix fe = fisher_matrix(batch, exact);
    const FisherMatrix fb = fisher_matrix(batch, binned);
    CHECK((fe.F - fb.F).cwiseAbs().maxCoeff() < 0.01 * fe.F.cwiseAbs().maxCoeff());
}

TEST_CASE("serial and parallel kernels are bit-identical") {
    const SampleBatch batch = identity_batch(3000, 29);
    for (const auto method : {KdeConfig::Method::Exact, KdeConfig::Method::Binned}) {
        KdeConfig cfg;
        cfg.method = method;
        const OutputScores a = output_score(batch, cfg, Exec::Serial);
        const OutputScores b = output_score(batch, cfg, Exec::Parallel);
        CHECK((a.scores.array() == b.scores.array()).all());
        CHECK((a.density.array() == b.density.array()).all());
        const FisherMatrix fa = fisher_matrix(batch, cfg, Exec::Serial);
        const FisherMatrix fb = fisher_matrix(batch, cfg, Exec::Parallel);
        CHECK((fa.F.array() == fb.F.array()).all());
    }
}

TEST_CASE("leave-one-out toggle stays close to the default at moderate n") {
    const SampleBatch batch = identity_batch(5000, 37);
    KdeConfig loo;
    loo.leave_one_out = true;
    const FisherMatrix fa = fisher_matrix(batch);
    const FisherMatrix fb = fisher_matrix(batch, loo);
    CHECK((fa.F - fb.F).cwiseAbs().maxCoeff() < 0.05 * fa.F.cwiseAbs().maxCoeff());
}

TEST_CASE("degenerate outputs raise an estimation error") {
    ModelSpec spec = identity_model(1);
    spec.eval = [](const Vector&, std::uint64_t) {
        Vector y(1);
        y[0] = 3.0;
        return y;
    };
    const SampleBatch batch =
        run_batch(InputModel({Marginal::gaussian("x", 0.0, 1.0)}), spec, 500, 1);
    CHECK_THROWS_AS(output_score(batch), NumericError);
}

TEST_CASE("joint densities are limited to three output dimensions") {
    std::vector<Marginal> ms;
    for (int i = 0; i < 4; ++i)
        ms.push_back(Marginal::gaussian("x" + std::to_string(i + 1), 0.0, 1.0));
    const SampleBatch batch = run_batch(InputModel(ms), identity_model(4), 200, 1);
    CHECK_THROWS_AS(output_score(batch), ConfigError);
    KdeConfig cfg;
    cfg.outputs = {0, 5};
    CHECK_THROWS_AS(output_score(batch, cfg), ConfigError);
}

TEST_CASE("kl_quadratic validates the perturbation length") {
    FisherMatrix fim;
    fim.F = Matrix::Identity(3, 3);
    CHECK_THROWS_AS(kl_quadratic(fim, Vector::Zero(2)), ConfigError);
}

TEST_CASE("output subsets restrict the density to chosen columns") {
    std::vector<Marginal> ms = {Marginal::gaussian("a", 0.0, 1.0),
                                Marginal::gaussian("b", 0.0, 1.0)};
    const SampleBatch batch = run_batch(InputModel(ms), identity_model(2), 8000, 43);
    KdeConfig cfg;
    cfg.outputs = {0};
    const FisherMatrix fim = fisher_matrix(batch, cfg);
    // y1 carries no information about the second marginal's parameters.
    CHECK(fim.F(0, 0) > 0.5);
    CHECK(fim.F(2, 2) < 0.05);
    CHECK(fim.F(3, 3) < 0.05);
}

} // TEST_SUITE
