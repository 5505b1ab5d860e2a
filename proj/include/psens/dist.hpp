#pragma once

#include "psens/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace psens {

/// One differentiation variable: a named parameter of a named marginal,
/// with its current value and the nominal value used for proportional
/// normalization.
struct ParamEntry {
    std::string marginal;
    std::string param;
    double value = 0.0;
    double nominal = 0.0;

    std::string label() const { return marginal + "." + param; }
};

using ParamVector = std::vector<ParamEntry>;

/// Univariate parametric marginal with closed-form score functions. New
/// kinds extend the Kind enum and the draw/log_pdf/score switches; each kind
/// must expose its differentiation parameters through param_names().
///
/// Kinds:
///   Gaussian(mu, sigma)       params (mu, sigma)
///   Gamma(shape, scale)       params (shape, scale)
///   DeltaApprox(value, cov)   a thin Gaussian N(value, (cov*value)^2) used to
///                             approximate a deterministic input; params
///                             (value, sigma) are differentiated independently.
class Marginal {
  public:
    enum class Kind { Gaussian, Gamma, DeltaApprox };

    static Marginal gaussian(std::string name, double mean, double stddev);
    static Marginal gamma_shape_scale(std::string name, double shape, double scale);
    /// Table-style (mean, CoV) spec; converted to shape = 1/CoV^2, scale = mean*CoV^2.
    static Marginal gamma_mean_cov(std::string name, double mean, double cov);
    static Marginal delta_approx(std::string name, double value, double cov = 1e-4);

    Kind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    double p1() const { return p1_; }
    double p2() const { return p2_; }
    /// Relative CoV used to build a DeltaApprox (meaningless for other kinds).
    double delta_cov() const { return delta_cov_; }

    int param_count() const { return 2; }
    std::vector<std::string> param_names() const;

    double draw(std::uint64_t key) const;
    double log_pdf(double x) const;
    /// d log p(x|b) / db for the two parameters of this marginal.
    void score(double x, double out[2]) const;

    double mean() const;

  private:
    Marginal(Kind kind, std::string name, double p1, double p2, double delta_cov);
    void validate() const;

    Kind kind_;
    std::string name_;
    double p1_;
    double p2_;
    double delta_cov_ = 0.0;
};

/// Product of independent univariate marginals. Immutable after construction;
/// sampling takes an explicit seed and is keyed per (marginal, sample), so
/// chunk-parallel sampling is deterministic and row prefixes are stable.
class InputModel {
  public:
    explicit InputModel(std::vector<Marginal> marginals);

    Index dim() const { return static_cast<Index>(marginals_.size()); }
    Index param_count() const { return static_cast<Index>(params_.size()); }
    const std::vector<Marginal>& marginals() const { return marginals_; }
    const ParamVector& params() const { return params_; }
    std::vector<std::string> param_labels() const;
    /// Nominal values b̄ in ParamVector order.
    Vector nominals() const;

    /// n rows, one column per marginal; reproducible given (seed, n, model).
    RowMatrix sample(Index n, std::uint64_t seed, Exec exec = Exec::Parallel) const;
    /// Draw a single row (used by the per-sample batch kernel).
    void sample_row(std::uint64_t seed, Index i, double* row) const;

    /// d log p(x|b)/db stacked in ParamVector order.
    Vector score(const Vector& x) const;
    void score_row(const double* x, double* out) const;

    double log_pdf(const Vector& x) const;

  private:
    std::vector<Marginal> marginals_;
    ParamVector params_;
};

/// Digamma function (score of the Gamma shape parameter).
double digamma(double x);

} // namespace psens
