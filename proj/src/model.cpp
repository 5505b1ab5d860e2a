#include "psens/model.hpp"

#include "psens/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace psens {

namespace {

// First root of cos(x)*cosh(x) = -1 (clamped-free fundamental mode).
constexpr double kLambda1 = 1.8751040687119611;

double mode_shape(double s) {
    const double sigma = (std::cosh(kLambda1) + std::cos(kLambda1)) /
                         (std::sinh(kLambda1) + std::sin(kLambda1));
    return std::cosh(s) - std::cos(s) - sigma * (std::sinh(s) - std::sin(s));
}

double mode_curvature(double s) {
    const double sigma = (std::cosh(kLambda1) + std::cos(kLambda1)) /
                         (std::sinh(kLambda1) + std::sin(kLambda1));
    return std::cosh(s) + std::cos(s) - sigma * (std::sinh(s) + std::sin(s));
}

double trapezoid(const std::function<double(double)>& f, double a, double b, int n) {
    const double h = (b - a) / (n - 1);
    double sum = 0.5 * (f(a) + f(b));
    for (int i = 1; i < n - 1; ++i) sum += f(a + h * i);
    return sum * h;
}

} // namespace

double eval_decreasing_coeff(const Vector& x, double noise) {
    if (x.size() != 8) throw ConfigError("decreasing_coeff expects 8 inputs");
    double y = noise;
    double c = 0.2;
    for (Index i = 0; i < 8; ++i) {
        y += c * x[i];
        c *= 0.5;
    }
    return y;
}

double eval_roos_arnold(const Vector& x) {
    if (x.size() < 1) throw ConfigError("roos_arnold expects at least one input");
    double y = 1.0;
    for (Index i = 0; i < x.size(); ++i) y *= std::abs(4.0 * x[i] - 2.0);
    return y;
}

CantileverBeam::CantileverBeam() : CantileverBeam(Config()) {}

CantileverBeam::CantileverBeam(Config cfg) : cfg_(cfg) {
    if (cfg_.stations < 20) throw ConfigError("cantilever requires >= 20 beam stations");
    if (cfg_.freq_points < 512) throw ConfigError("cantilever requires >= 512 frequency points");
    if (!(cfg_.damping > 0.0)) throw ConfigError("cantilever requires positive damping");

    mode_mass_factor_ =
        trapezoid([](double xi) { const double v = mode_shape(kLambda1 * xi); return v * v; },
                  0.0, 1.0, 4097);
    tip_shape_ = mode_shape(kLambda1);

    peak_shape_ = 0.0;
    peak_curvature_ = 0.0;
    for (int s = 0; s < cfg_.stations; ++s) {
        const double xi = static_cast<double>(s) / (cfg_.stations - 1);
        peak_shape_ = std::max(peak_shape_, std::abs(mode_shape(kLambda1 * xi)));
        peak_curvature_ = std::max(peak_curvature_, std::abs(mode_curvature(kLambda1 * xi)));
    }

    // Band integrals of the unit-frequency FRF; the physical integrals over
    // [band_lo, band_hi]*omega1 reduce to these exactly under u = omega/omega1.
    const double zeta = cfg_.damping;
    const auto denom = [zeta](double u) {
        const double a = 1.0 - u * u;
        return a * a + 4.0 * zeta * zeta * u * u;
    };
    accel_integral_ = trapezoid([&](double u) { return u * u * u * u / denom(u); },
                                cfg_.band_lo, cfg_.band_hi, cfg_.freq_points);
    disp_integral_ = trapezoid([&](double u) { return 1.0 / denom(u); },
                               cfg_.band_lo, cfg_.band_hi, cfg_.freq_points);
}

std::array<double, 2> CantileverBeam::eval(const Vector& x) const {
    if (x.size() != 5) throw ConfigError("cantilever expects inputs (E, rho, L, w, t)");
    for (Index i = 0; i < 5; ++i)
        if (!(x[i] > 0.0)) throw EvalError("cantilever: physical input " + std::to_string(i) +
                                           " must be strictly positive");
    const double E = x[0], rho = x[1], L = x[2], w = x[3], t = x[4];
    const double area = w * t;
    const double inertia = w * t * t * t / 12.0;
    const double omega1 = kLambda1 * kLambda1 * std::sqrt(E * inertia / (rho * area)) / (L * L);
    const double modal_mass = rho * area * L * mode_mass_factor_;
    const double force = cfg_.amplitude * tip_shape_ / modal_mass;

    const double accel = peak_shape_ * force * std::sqrt(omega1 * accel_integral_);
    const double curvature = peak_curvature_ * (kLambda1 / L) * (kLambda1 / L);
    const double strain =
        0.5 * t * curvature * force * std::sqrt(disp_integral_ / (omega1 * omega1 * omega1));
    return {accel, strain};
}

double CantileverBeam::first_frequency(const Vector& x) const {
    const double E = x[0], rho = x[1], L = x[2], w = x[3], t = x[4];
    const double inertia = w * t * t * t / 12.0;
    return kLambda1 * kLambda1 * std::sqrt(E * inertia / (rho * w * t)) / (L * L);
}

std::array<double, 2> eval_cantilever(const Vector& x) {
    static const CantileverBeam beam{};
    return beam.eval(x);
}

ModalSolution eval_eigensystem(const EigenSystemSpec& spec, const Vector& b) {
    const Matrix K = spec.stiffness(b);
    const Matrix M = spec.mass(b);
    if (K.rows() != spec.dim || K.cols() != spec.dim || M.rows() != spec.dim ||
        M.cols() != spec.dim)
        throw ConfigError("eigensystem: K/M dimensions do not match spec");
    const double ksym = (K - K.transpose()).cwiseAbs().maxCoeff();
    if (ksym > 1e-10 * std::max(1.0, K.cwiseAbs().maxCoeff()))
        throw NumericError("eigensystem: stiffness matrix is not symmetric");
    // Eigen's generalized solver does not flag an indefinite B; verify first.
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() != Eigen::Success)
        throw NumericError("eigensystem: mass matrix is not positive definite");

    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(K, M);
    if (solver.info() != Eigen::Success || !solver.eigenvalues().allFinite())
        throw NumericError("eigensystem: decomposition failed");

    ModalSolution out;
    out.omega = solver.eigenvalues();
    out.modes = solver.eigenvectors();
    const double scale = std::abs(out.omega[out.omega.size() - 1]);
    for (Index i = 0; i < out.omega.size(); ++i) {
        if (out.omega[i] < -1e-10 * scale)
            throw NumericError("eigensystem: negative eigenvalue, stiffness not PSD");
        out.omega[i] = std::sqrt(std::max(out.omega[i], 0.0));
    }
    return out;
}

EigenSystemSpec chain_system(Index ndof) {
    EigenSystemSpec spec;
    spec.dim = ndof;
    spec.param_dim = 2 * ndof;
    spec.stiffness = [ndof](const Vector& b) {
        Matrix K = Matrix::Zero(ndof, ndof);
        for (Index i = 0; i < ndof; ++i) {
            K(i, i) += b[i];
            if (i + 1 < ndof) {
                K(i, i) += b[i + 1];
                K(i, i + 1) -= b[i + 1];
                K(i + 1, i) -= b[i + 1];
            }
        }
        return K;
    };
    spec.mass = [ndof](const Vector& b) {
        Matrix M = Matrix::Zero(ndof, ndof);
        for (Index i = 0; i < ndof; ++i) M(i, i) = b[ndof + i];
        return M;
    };
    return spec;
}

ModelSpec identity_model(Index dim) {
    ModelSpec spec;
    spec.name = "identity";
    spec.input_dim = dim;
    for (Index i = 0; i < dim; ++i) spec.output_names.push_back("y" + std::to_string(i + 1));
    spec.eval = [](const Vector& x, std::uint64_t) { return x; };
    return spec;
}

ModelSpec linear_model(const Matrix& coeffs, const Vector& noise_std, std::uint64_t noise_seed) {
    if (noise_std.size() != coeffs.rows())
        throw ConfigError("linear model: noise_std length must match output count");
    ModelSpec spec;
    spec.name = "linear";
    spec.input_dim = coeffs.cols();
    for (Index k = 0; k < coeffs.rows(); ++k) spec.output_names.push_back("y" + std::to_string(k + 1));
    spec.noise_seed = noise_seed;
    spec.eval = [coeffs, noise_std, noise_seed](const Vector& x, std::uint64_t i) {
        Vector y = coeffs * x;
        rng::Xoshiro256pp gen(rng::derive(noise_seed, rng::kSaltNoise, i));
        for (Index k = 0; k < y.size(); ++k)
            if (noise_std[k] > 0.0) y[k] += noise_std[k] * gen.normal();
        return y;
    };
    return spec;
}

ModelSpec decreasing_coeff_model(std::uint64_t noise_seed) {
    ModelSpec spec;
    spec.name = "decreasing_coeff";
    spec.input_dim = 8;
    spec.output_names = {"f"};
    spec.noise_seed = noise_seed;
    spec.eval = [noise_seed](const Vector& x, std::uint64_t i) {
        rng::Xoshiro256pp gen(rng::derive(noise_seed, rng::kSaltNoise, i));
        Vector y(1);
        y[0] = eval_decreasing_coeff(x, 0.05 * gen.normal());
        return y;
    };
    return spec;
}

ModelSpec roos_arnold_model(Index dim) {
    ModelSpec spec;
    spec.name = "roos_arnold";
    spec.input_dim = dim;
    spec.output_names = {"f"};
    spec.eval = [](const Vector& x, std::uint64_t) {
        Vector y(1);
        y[0] = eval_roos_arnold(x);
        return y;
    };
    return spec;
}

ModelSpec cantilever_model(CantileverBeam::Config cfg) {
    auto beam = std::make_shared<CantileverBeam>(cfg);
    ModelSpec spec;
    spec.name = "cantilever";
    spec.input_dim = 5;
    spec.output_names = {"peak_rms_accel", "peak_rms_strain"};
    spec.eval = [beam](const Vector& x, std::uint64_t) {
        const auto r = beam->eval(x);
        Vector y(2);
        y[0] = r[0];
        y[1] = r[1];
        return y;
    };
    return spec;
}

ModelSpec eigen_frequency_model(EigenSystemSpec sys, Index mode) {
    if (mode < 0 || mode >= sys.dim) throw ConfigError("eigen_frequency_model: mode out of range");
    ModelSpec spec;
    spec.name = "eigen_frequency";
    spec.input_dim = sys.param_dim;
    spec.output_names = {"omega" + std::to_string(mode + 1)};
    auto shared = std::make_shared<EigenSystemSpec>(std::move(sys));
    spec.eval = [shared, mode](const Vector& x, std::uint64_t) {
        Vector y(1);
        y[0] = eval_eigensystem(*shared, x).omega[mode];
        return y;
    };
    return spec;
}

ModelSpec external_model(std::string executable, Index input_dim,
                         std::vector<std::string> output_names) {
    ModelSpec spec;
    spec.name = "external";
    spec.input_dim = input_dim;
    spec.output_names = output_names;
    const Index out_dim = spec.output_dim();
    spec.batch_eval = [executable, out_dim](const RowMatrix& inputs) {
        namespace fs = std::filesystem;
        const auto dir = fs::temp_directory_path();
        const auto tag = std::to_string(rng::derive(
            static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(&inputs)), 0xada9,
            static_cast<std::uint64_t>(inputs.rows())));
        const fs::path in_path = dir / ("psens_in_" + tag + ".txt");
        const fs::path out_path = dir / ("psens_out_" + tag + ".txt");
        {
            std::ofstream in(in_path);
            in.precision(17);
            for (Index i = 0; i < inputs.rows(); ++i) {
                for (Index j = 0; j < inputs.cols(); ++j) in << (j ? " " : "") << inputs(i, j);
                in << "\n";
            }
        }
        const std::string cmd = executable + " < " + in_path.string() + " > " + out_path.string();
        const int rc = std::system(cmd.c_str());
        if (rc != 0) {
            fs::remove(in_path);
            throw EvalError("external model '" + executable + "' exited with status " +
                            std::to_string(rc));
        }
        RowMatrix outputs(inputs.rows(), out_dim);
        std::ifstream out(out_path);
        std::string line;
        for (Index i = 0; i < inputs.rows(); ++i) {
            if (!std::getline(out, line))
                throw EvalError("external model: expected " + std::to_string(inputs.rows()) +
                                " output records, got " + std::to_string(i));
            std::istringstream ss(line);
            for (Index k = 0; k < out_dim; ++k)
                if (!(ss >> outputs(i, k)))
                    throw EvalError("external model: malformed record at line " +
                                    std::to_string(i + 1));
        }
        fs::remove(in_path);
        fs::remove(out_path);
        return outputs;
    };
    return spec;
}

} // namespace psens
