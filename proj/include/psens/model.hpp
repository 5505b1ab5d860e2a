#pragma once

#include "psens/common.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace psens {

/// Deterministic model y = h(x). `eval` must be pure given (x, noise_seed,
/// sample_index); models with internal additive noise draw it from a stream
/// keyed by (noise_seed, sample_index) so parallel evaluation order does not
/// matter.
struct ModelSpec {
    std::string name;
    Index input_dim = 0;
    std::vector<std::string> output_names;
    std::function<Vector(const Vector& x, std::uint64_t sample_index)> eval;
    /// Whole-batch evaluation (used by subprocess adapters); optional.
    std::function<RowMatrix(const RowMatrix& inputs)> batch_eval;
    std::uint64_t noise_seed = 0;

    Index output_dim() const { return static_cast<Index>(output_names.size()); }
};

/// Linear function with geometrically decreasing coefficients on 8 inputs,
/// plus the additive error term e.
double eval_decreasing_coeff(const Vector& x, double noise);

/// Product function prod_i |4 x_i - 2|.
double eval_roos_arnold(const Vector& x);

/// First-mode response of a uniform rectangular cantilever under white-noise
/// point forcing at the free end. Outputs are the peak (over beam stations)
/// r.m.s. acceleration and surface bending strain from frequency-domain
/// integration over [band_lo, band_hi]*omega1.
class CantileverBeam {
  public:
    struct Config {
        double damping = 0.1;
        double amplitude = 1.0;
        int stations = 21;
        int freq_points = 1024;
        double band_lo = 0.2;
        double band_hi = 5.0;
    };

    CantileverBeam();
    explicit CantileverBeam(Config cfg);

    /// x = (E, rho, L, w, t), all strictly positive.
    std::array<double, 2> eval(const Vector& x) const;

    double first_frequency(const Vector& x) const;

  private:
    Config cfg_;
    double mode_mass_factor_; // integral of the squared dimensionless shape
    double tip_shape_;        // mode shape at the free end
    double peak_shape_;       // max |shape| over stations
    double peak_curvature_;   // max |shape''| over stations (dimensionless)
    double accel_integral_;   // dimensionless band integral for acceleration
    double disp_integral_;    // dimensionless band integral for displacement
};

std::array<double, 2> eval_cantilever(const Vector& x);

/// Symmetric K(b) and SPD M(b) builders for a discrete vibration system.
/// Derivative builders are optional; central finite differences are used
/// when they are absent.
struct EigenSystemSpec {
    Index dim = 0;       // degrees of freedom
    Index param_dim = 0; // length of the physical parameter vector b
    std::function<Matrix(const Vector& b)> stiffness;
    std::function<Matrix(const Vector& b)> mass;
    std::function<Matrix(const Vector& b, Index j)> stiffness_derivative;
    std::function<Matrix(const Vector& b, Index j)> mass_derivative;
};

/// Natural frequencies (rad/s, ascending) and mass-normalized mode shapes.
struct ModalSolution {
    Vector omega;
    Matrix modes; // columns, phi' M phi = I
};

ModalSolution eval_eigensystem(const EigenSystemSpec& spec, const Vector& b);

/// Grounded spring-mass chain with per-element stiffness and mass parameters,
/// b = (k_1..k_n, m_1..m_n).
EigenSystemSpec chain_system(Index ndof);

// Built-in ModelSpec factories.
ModelSpec identity_model(Index dim);
ModelSpec linear_model(const Matrix& coeffs, const Vector& noise_std, std::uint64_t noise_seed = 0);
ModelSpec decreasing_coeff_model(std::uint64_t noise_seed = 0);
ModelSpec roos_arnold_model(Index dim);
ModelSpec cantilever_model(CantileverBeam::Config cfg = CantileverBeam::Config());
/// Scalar model returning the `mode`-th natural frequency of spec at x.
ModelSpec eigen_frequency_model(EigenSystemSpec spec, Index mode);
/// Subprocess adapter: one whitespace-separated input vector per stdin line,
/// one output vector per stdout line.
ModelSpec external_model(std::string executable, Index input_dim,
                         std::vector<std::string> output_names);

} // namespace psens
