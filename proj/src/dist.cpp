#include "psens/dist.hpp"

#include "psens/rng.hpp"

#include <cmath>
#include <numbers>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace psens {

namespace {
constexpr double kHalfLog2Pi = 0.9189385332046727; // 0.5*log(2*pi)
}

Marginal::Marginal(Kind kind, std::string name, double p1, double p2, double delta_cov)
    : kind_(kind), name_(std::move(name)), p1_(p1), p2_(p2), delta_cov_(delta_cov) {
    validate();
}

Marginal Marginal::gaussian(std::string name, double mean, double stddev) {
    return Marginal(Kind::Gaussian, std::move(name), mean, stddev, 0.0);
}

Marginal Marginal::gamma_shape_scale(std::string name, double shape, double scale) {
    return Marginal(Kind::Gamma, std::move(name), shape, scale, 0.0);
}

Marginal Marginal::gamma_mean_cov(std::string name, double mean, double cov) {
    if (!(mean > 0.0) || !(cov > 0.0))
        throw ConfigError("marginal '" + name + "': Gamma mean/CoV must be positive");
    const double shape = 1.0 / (cov * cov);
    const double scale = mean * cov * cov;
    return Marginal(Kind::Gamma, std::move(name), shape, scale, 0.0);
}

Marginal Marginal::delta_approx(std::string name, double value, double cov) {
    return Marginal(Kind::DeltaApprox, std::move(name), value, cov * value, cov);
}

void Marginal::validate() const {
    switch (kind_) {
        case Kind::Gaussian:
            if (!std::isfinite(p1_) || !(p2_ > 0.0))
                throw ConfigError("marginal '" + name_ + "': Gaussian requires finite mean and sigma > 0");
            break;
        case Kind::Gamma:
            if (!(p1_ > 0.0) || !(p2_ > 0.0))
                throw ConfigError("marginal '" + name_ + "': Gamma requires shape > 0 and scale > 0");
            break;
        case Kind::DeltaApprox:
            if (!std::isfinite(p1_) || !(delta_cov_ > 0.0) || !(std::abs(p2_) > 0.0))
                throw ConfigError("marginal '" + name_ +
                                  "': DeltaApprox requires nonzero value and CoV > 0");
            break;
    }
}

std::vector<std::string> Marginal::param_names() const {
    switch (kind_) {
        case Kind::Gaussian: return {"mu", "sigma"};
        case Kind::Gamma: return {"shape", "scale"};
        case Kind::DeltaApprox: return {"value", "sigma"};
    }
    return {};
}

double Marginal::mean() const {
    switch (kind_) {
        case Kind::Gaussian: return p1_;
        case Kind::Gamma: return p1_ * p2_;
        case Kind::DeltaApprox: return p1_;
    }
    return 0.0;
}

double Marginal::draw(std::uint64_t key) const {
    rng::Xoshiro256pp gen(key);
    switch (kind_) {
        case Kind::Gaussian: return p1_ + p2_ * gen.normal();
        case Kind::Gamma: return p2_ * gen.gamma(p1_);
        case Kind::DeltaApprox: return p1_ + std::abs(p2_) * gen.normal();
    }
    return 0.0;
}

double Marginal::log_pdf(double x) const {
    switch (kind_) {
        case Kind::Gaussian: {
            const double z = (x - p1_) / p2_;
            return -0.5 * z * z - std::log(p2_) - kHalfLog2Pi;
        }
        case Kind::Gamma: {
            if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
            return (p1_ - 1.0) * std::log(x) - x / p2_ - p1_ * std::log(p2_) - std::lgamma(p1_);
        }
        case Kind::DeltaApprox: {
            const double s = std::abs(p2_);
            const double z = (x - p1_) / s;
            return -0.5 * z * z - std::log(s) - kHalfLog2Pi;
        }
    }
    return 0.0;
}

void Marginal::score(double x, double out[2]) const {
    if (!std::isfinite(x)) throw EvalError("marginal '" + name_ + "': non-finite input to score");
    switch (kind_) {
        case Kind::Gaussian:
        case Kind::DeltaApprox: {
            const double s = kind_ == Kind::Gaussian ? p2_ : std::abs(p2_);
            const double d = x - p1_;
            out[0] = d / (s * s);
            out[1] = (d * d - s * s) / (s * s * s);
            return;
        }
        case Kind::Gamma: {
            if (!(x > 0.0))
                throw EvalError("marginal '" + name_ + "': Gamma score requires x > 0");
            out[0] = std::log(x) - std::log(p2_) - digamma(p1_);
            out[1] = (x / p2_ - p1_) / p2_;
            return;
        }
    }
}

InputModel::InputModel(std::vector<Marginal> marginals) : marginals_(std::move(marginals)) {
    if (marginals_.empty()) throw ConfigError("input model requires at least one marginal");
    for (const auto& m : marginals_) {
        const bool delta = m.kind() == Marginal::Kind::DeltaApprox;
        const auto names = m.param_names();
        const double vals[2] = {m.p1(), delta ? std::abs(m.p2()) : m.p2()};
        for (int k = 0; k < m.param_count(); ++k)
            params_.push_back({m.name(), names[static_cast<size_t>(k)], vals[k], vals[k]});
    }
}

std::vector<std::string> InputModel::param_labels() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.label());
    return out;
}

Vector InputModel::nominals() const {
    Vector out(param_count());
    for (Index j = 0; j < param_count(); ++j) out[j] = params_[static_cast<size_t>(j)].nominal;
    return out;
}

void InputModel::sample_row(std::uint64_t seed, Index i, double* row) const {
    for (Index j = 0; j < dim(); ++j) {
        const std::uint64_t stream = rng::derive(seed, rng::kSaltMarginal, static_cast<std::uint64_t>(j));
        row[j] = marginals_[static_cast<size_t>(j)].draw(
            rng::derive(stream, 1, static_cast<std::uint64_t>(i)));
    }
}

RowMatrix InputModel::sample(Index n, std::uint64_t seed, Exec exec) const {
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    RowMatrix x(n, dim());
    if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
        for (Index i = 0; i < n; ++i) {
            Vector row(dim());
            sample_row(seed, i, row.data());
            x.row(i) = row;
        }
    } else {
        Vector row(dim());
        for (Index i = 0; i < n; ++i) {
            sample_row(seed, i, row.data());
            x.row(i) = row;
        }
    }
    return x;
}

void InputModel::score_row(const double* x, double* out) const {
    Index q = 0;
    for (size_t j = 0; j < marginals_.size(); ++j) {
        double pair[2];
        marginals_[j].score(x[j], pair);
        out[q++] = pair[0];
        out[q++] = pair[1];
    }
}

Vector InputModel::score(const Vector& x) const {
    if (x.size() != dim()) throw ConfigError("score: input dimension mismatch");
    Vector out(param_count());
    score_row(x.data(), out.data());
    return out;
}

double InputModel::log_pdf(const Vector& x) const {
    if (x.size() != dim()) throw ConfigError("log_pdf: input dimension mismatch");
    double lp = 0.0;
    for (size_t j = 0; j < marginals_.size(); ++j) lp += marginals_[j].log_pdf(x[static_cast<Index>(j)]);
    return lp;
}

double digamma(double x) {
    if (!(x > 0.0)) throw NumericError("digamma requires x > 0");
    double result = 0.0;
    // Recurrence up to the asymptotic region, then the standard expansion.
    while (x < 12.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv -
              inv2 * (1.0 / 12.0 -
                      inv2 * (1.0 / 120.0 -
                              inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    return result;
}

} // namespace psens
