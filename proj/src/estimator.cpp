#include "psens/estimator.hpp"

#include "psens/reduce.hpp"
#include "psens/rng.hpp"

#include <atomic>
#include <cmath>

namespace psens {

UtilitySpec UtilitySpec::moment(int order, Index output, std::string label,
                                std::function<double(double)> post_map) {
    if (order < 1) throw ConfigError("moment utility requires order >= 1");
    UtilitySpec u;
    u.kind = Kind::Moment;
    u.order = order;
    u.output = output;
    u.post_map = std::move(post_map);
    u.label = label.empty() ? "m" + std::to_string(order) + "[y" + std::to_string(output) + "]"
                            : std::move(label);
    return u;
}

UtilitySpec UtilitySpec::failure(Index output, double threshold, std::string label) {
    UtilitySpec u;
    u.kind = Kind::FailureProb;
    u.output = output;
    u.threshold = threshold;
    u.label = label.empty() ? "Pf[y" + std::to_string(output) + "]" : std::move(label);
    return u;
}

UtilitySpec UtilitySpec::failure_uncertain(Index output, Marginal threshold_dist,
                                           std::string label) {
    UtilitySpec u = failure(output, 0.0, std::move(label));
    u.threshold_dist = std::move(threshold_dist);
    return u;
}

UtilitySpec UtilitySpec::custom(std::function<double(const Vector&)> fn, std::string label) {
    UtilitySpec u;
    u.kind = Kind::Custom;
    u.fn = std::move(fn);
    u.label = std::move(label);
    return u;
}

UtilitySpec UtilitySpec::realized(std::uint64_t key) const {
    UtilitySpec u = *this;
    if (kind == Kind::FailureProb && threshold_dist) {
        u.threshold = threshold_dist->draw(key);
        u.threshold_dist.reset();
    }
    return u;
}

double UtilitySpec::apply(const Eigen::Ref<const Vector>& y) const {
    switch (kind) {
        case Kind::Moment: {
            double v = y[output];
            if (post_map) v = post_map(v);
            double r = v;
            for (int q = 1; q < order; ++q) r *= v;
            return r;
        }
        case Kind::FailureProb:
            return y[output] > threshold ? 1.0 : 0.0;
        case Kind::Custom:
            return fn(Vector(y));
    }
    return 0.0;
}

SampleBatch run_batch(const InputModel& model, const ModelSpec& spec, Index n, std::uint64_t seed,
                      Exec exec) {
    if (n < 1) throw ConfigError("run_batch: n must be >= 1");
    if (spec.input_dim != model.dim())
        throw ConfigError("run_batch: model '" + spec.name + "' expects " +
                          std::to_string(spec.input_dim) + " inputs, input model has " +
                          std::to_string(model.dim()));

    SampleBatch batch;
    batch.seed = seed;
    batch.n = n;
    batch.params = model.params();
    batch.output_names = spec.output_names;
    const Index d = model.dim();
    const Index m = spec.output_dim();
    const Index p = model.param_count();
    batch.inputs.resize(n, d);
    batch.outputs.resize(n, m);
    batch.scores.resize(n, p);

    std::atomic<Index> first_bad{-1};
    std::string error_msg;

    const bool use_batch_eval = static_cast<bool>(spec.batch_eval);
    const auto fill_row = [&](Index i, bool with_output) {
        try {
            Vector x(d);
            model.sample_row(seed, i, x.data());
            batch.inputs.row(i) = x;
            if (with_output) {
                Vector y = spec.eval(x, static_cast<std::uint64_t>(i));
                if (y.size() != m)
                    throw EvalError("model returned " + std::to_string(y.size()) +
                                    " outputs, expected " + std::to_string(m));
                if (!y.allFinite()) throw EvalError("model returned non-finite output");
                batch.outputs.row(i) = y;
            }
            Vector s(p);
            model.score_row(x.data(), s.data());
            batch.scores.row(i) = s;
        } catch (const std::exception& e) {
            Index expected = -1;
            if (first_bad.compare_exchange_strong(expected, i)) {
                error_msg = std::string(e.what()) + " (sample " + std::to_string(i) + ")";
            }
        }
    };

    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (Index i = 0; i < n; ++i) fill_row(i, !use_batch_eval);
    } else {
        for (Index i = 0; i < n; ++i) fill_row(i, !use_batch_eval);
    }
    if (first_bad.load() >= 0) throw EvalError("run_batch: " + error_msg);

    if (use_batch_eval) {
        batch.outputs = spec.batch_eval(batch.inputs);
        if (batch.outputs.rows() != n || batch.outputs.cols() != m)
            throw EvalError("run_batch: batch evaluation returned wrong shape");
        if (!batch.outputs.allFinite())
            throw EvalError("run_batch: batch evaluation returned non-finite output");
    }
    return batch;
}

namespace {

Vector apply_utility(const SampleBatch& batch, const UtilitySpec& u, Exec exec) {
    const Index n = batch.n;
    Vector vals(n);
    std::atomic<Index> first_bad{-1};
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (Index i = 0; i < n; ++i) {
        const double v = u.apply(batch.outputs.row(i).transpose());
        if (!std::isfinite(v)) {
            Index expected = -1;
            first_bad.compare_exchange_strong(expected, i);
        }
        vals[i] = v;
    }
    if (first_bad.load() >= 0)
        throw EvalError("utility '" + u.label + "' is non-finite at sample " +
                        std::to_string(first_bad.load()));
    return vals;
}

void check_utility(const SampleBatch& batch, const UtilitySpec& u) {
    if (batch.n < 1) throw ConfigError("estimate: empty batch");
    if (u.kind != UtilitySpec::Kind::Custom &&
        (u.output < 0 || u.output >= batch.outputs.cols()))
        throw ConfigError("utility '" + u.label + "' references output " +
                          std::to_string(u.output) + " of a " +
                          std::to_string(batch.outputs.cols()) + "-output batch");
    if (u.threshold_dist)
        throw ConfigError("utility '" + u.label +
                          "': uncertain threshold must be realized before estimation");
}

UtilityEstimate estimate_impl(const SampleBatch& batch, const UtilitySpec& u, bool with_gradient,
                              bool centered, Exec exec) {
    check_utility(batch, u);
    const Index n = batch.n;
    const Index p = batch.scores.cols();
    const Vector vals = apply_utility(batch, u, exec);

    UtilityEstimate est;
    est.label = u.label;
    double sums[2];
    chunked_sum_vec(
        n, 2,
        [&](Index i, double* acc) {
            acc[0] += vals[i];
            acc[1] += vals[i] * vals[i];
        },
        sums, exec);
    est.value = sums[0] / static_cast<double>(n);
    const double var = std::max(0.0, sums[1] / n - est.value * est.value);
    est.se_value = std::sqrt(var / n);

    if (!with_gradient) return est;

    const double shift = centered ? est.value : 0.0;
    std::vector<double> acc(static_cast<size_t>(2 * p));
    chunked_sum_vec(
        n, 2 * p,
        [&](Index i, double* a) {
            const double w = vals[i] - shift;
            const double* s = batch.scores.row(i).data();
            for (Index j = 0; j < p; ++j) {
                const double t = w * s[j];
                a[j] += t;
                a[p + j] += t * t;
            }
        },
        acc.data(), exec);
    est.gradient.resize(p);
    est.se_gradient.resize(p);
    for (Index j = 0; j < p; ++j) {
        const double mean = acc[static_cast<size_t>(j)] / n;
        const double ms = acc[static_cast<size_t>(p + j)] / n;
        est.gradient[j] = mean;
        est.se_gradient[j] = std::sqrt(std::max(0.0, ms - mean * mean) / n);
    }
    return est;
}

} // namespace

UtilityEstimate estimate_utility(const SampleBatch& batch, const UtilitySpec& u, Exec exec) {
    return estimate_impl(batch, u, false, false, exec);
}

UtilityEstimate estimate_gradient(const SampleBatch& batch, const UtilitySpec& u, Exec exec) {
    return estimate_impl(batch, u, true, false, exec);
}

UtilityEstimate control_variate_center(const SampleBatch& batch, const UtilitySpec& u, Exec exec) {
    return estimate_impl(batch, u, true, true, exec);
}

} // namespace psens
