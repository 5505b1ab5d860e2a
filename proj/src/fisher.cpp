#include "psens/fisher.hpp"

#include "psens/reduce.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace psens {

namespace {

constexpr double kKernelCut = 8.0; // kernel support in bandwidth units for the binned path

std::vector<Index> select_outputs(const SampleBatch& batch, const KdeConfig& cfg) {
    std::vector<Index> sel = cfg.outputs;
    if (sel.empty())
        for (Index k = 0; k < batch.outputs.cols(); ++k) sel.push_back(k);
    for (Index k : sel)
        if (k < 0 || k >= batch.outputs.cols())
            throw ConfigError("kde: output index " + std::to_string(k) + " out of range");
    if (sel.size() > 3)
        throw ConfigError("kde: joint output density limited to 3 dimensions, got " +
                          std::to_string(sel.size()));
    return sel;
}

Vector bandwidths_for(const Matrix& y, const KdeConfig& cfg) {
    const Index n = y.rows();
    const Index d = y.cols();
    if (cfg.bandwidth_rule == KdeConfig::Bandwidth::Fixed) {
        if (cfg.fixed_bandwidth.size() != d)
            throw ConfigError("kde: fixed bandwidth needs one entry per output dimension");
        for (Index k = 0; k < d; ++k)
            if (!(cfg.fixed_bandwidth[k] > 0.0)) throw ConfigError("kde: bandwidths must be > 0");
        return cfg.fixed_bandwidth;
    }
    Vector h(d);
    const double rate = std::pow(static_cast<double>(n), -1.0 / (static_cast<double>(d) + 4.0));
    std::vector<double> col(static_cast<size_t>(n));
    for (Index k = 0; k < d; ++k) {
        const double mean = y.col(k).mean();
        const double sd = std::sqrt((y.col(k).array() - mean).square().sum() / (n - 1.0));
        for (Index i = 0; i < n; ++i) col[static_cast<size_t>(i)] = y(i, k);
        std::sort(col.begin(), col.end());
        const auto quantile = [&](double q) {
            const double pos = q * (n - 1);
            const Index lo = static_cast<Index>(pos);
            const double f = pos - lo;
            return col[static_cast<size_t>(lo)] * (1.0 - f) +
                   col[static_cast<size_t>(std::min(n - 1, lo + 1))] * f;
        };
        const double iqr = quantile(0.75) - quantile(0.25);
        double scale = sd;
        if (iqr > 0.0) scale = std::min(scale, iqr / 1.34);
        if (!(scale > 0.0))
            throw NumericError("kde: output dimension " + std::to_string(k) +
                               " is (near) deterministic; treat it with a DeltaApprox input "
                               "analysis or exclude it from the output subset");
        h[k] = 0.9 * scale * rate;
    }
    return h;
}

struct KdeFields {
    // Smoothed numerators (one per score column) and denominator, evaluated at
    // the sample points. Unnormalized kernel weights; constants cancel in the
    // score ratio and are reapplied for the density.
    RowMatrix num; // n x P
    Vector den;    // n
};

KdeFields kde_exact(const Matrix& y, const RowMatrix& scores, const Vector& h, bool loo,
                    Exec exec) {
    const Index n = y.rows();
    const Index d = y.cols();
    const Index p = scores.cols();
    KdeFields f;
    f.num = RowMatrix::Zero(n, p);
    f.den.resize(n);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (Index i = 0; i < n; ++i) {
        double den = 0.0;
        Vector num = Vector::Zero(p);
        for (Index j = 0; j < n; ++j) {
            double e = 0.0;
            for (Index k = 0; k < d; ++k) {
                const double u = (y(i, k) - y(j, k)) / h[k];
                e += u * u;
            }
            const double w = std::exp(-0.5 * e);
            den += w;
            num += w * scores.row(j).transpose();
        }
        if (loo) {
            den -= 1.0;
            num -= scores.row(i).transpose();
        }
        f.den[i] = den;
        f.num.row(i) = num;
    }
    return f;
}

// ---- Binned evaluation: linear binning, separable Gaussian convolution on a
// regular grid, multi-linear interpolation back at the sample points. ----

struct GridAxis {
    double lo = 0.0;
    double step = 0.0;
    Index size = 0;
};

GridAxis make_axis(const Matrix& y, Index k, double h, Index gmin, Index gmax) {
    GridAxis ax;
    const double ymin = y.col(k).minCoeff();
    const double ymax = y.col(k).maxCoeff();
    const double pad = kKernelCut * h;
    ax.lo = ymin - pad;
    const double span = (ymax + pad) - ax.lo;
    // Target at least 4 bins per bandwidth so the binning bias stays small.
    Index g = static_cast<Index>(std::ceil(4.0 * span / h)) + 1;
    g = std::clamp(g, gmin, gmax);
    ax.size = g;
    ax.step = span / static_cast<double>(g - 1);
    return ax;
}

std::vector<double> kernel_weights(double h, double step) {
    const Index half = static_cast<Index>(std::ceil(kKernelCut * h / step));
    std::vector<double> w(static_cast<size_t>(2 * half + 1));
    for (Index k = -half; k <= half; ++k) {
        const double u = static_cast<double>(k) * step / h;
        w[static_cast<size_t>(k + half)] = std::exp(-0.5 * u * u);
    }
    return w;
}

void convolve_axis(const std::vector<double>& in, std::vector<double>& out, Index nrows,
                   Index ncols, bool along_cols, const std::vector<double>& w, Exec exec) {
    const Index half = static_cast<Index>(w.size() / 2);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (Index r = 0; r < nrows; ++r) {
        for (Index c = 0; c < ncols; ++c) {
            double acc = 0.0;
            if (along_cols) {
                const Index c0 = std::max<Index>(0, c - half);
                const Index c1 = std::min(ncols - 1, c + half);
                for (Index cc = c0; cc <= c1; ++cc)
                    acc += w[static_cast<size_t>(cc - c + half)] *
                           in[static_cast<size_t>(r * ncols + cc)];
            } else {
                const Index r0 = std::max<Index>(0, r - half);
                const Index r1 = std::min(nrows - 1, r + half);
                for (Index rr = r0; rr <= r1; ++rr)
                    acc += w[static_cast<size_t>(rr - r + half)] *
                           in[static_cast<size_t>(rr * ncols + c)];
            }
            out[static_cast<size_t>(r * ncols + c)] = acc;
        }
    }
}

KdeFields kde_binned(const Matrix& y, const RowMatrix& scores, const Vector& h, bool loo,
                     Exec exec) {
    const Index n = y.rows();
    const Index d = y.cols();
    const Index p = scores.cols();
    if (d > 2) throw ConfigError("kde: binned method supports 1 or 2 output dimensions");

    GridAxis ax0 = make_axis(y, 0, h[0], 1024, 131072);
    GridAxis ax1{0.0, 1.0, 1};
    if (d == 2) {
        ax0 = make_axis(y, 0, h[0], 64, 768);
        ax1 = make_axis(y, 1, h[1], 64, 768);
    }
    const Index g0 = ax0.size;
    const Index g1 = ax1.size;
    const size_t cells = static_cast<size_t>(g0 * g1);
    const Index fields = p + 1; // score numerators + mass

    std::vector<std::vector<double>> grid(static_cast<size_t>(fields),
                                          std::vector<double>(cells, 0.0));
    // Serial binning: cheap relative to the convolution and order-independent.
    for (Index i = 0; i < n; ++i) {
        const double t0 = (y(i, 0) - ax0.lo) / ax0.step;
        const Index i0 = std::min(g0 - 2, static_cast<Index>(t0));
        const double f0 = t0 - static_cast<double>(i0);
        double w0[2] = {1.0 - f0, f0};
        Index j1 = 0;
        double w1[2] = {1.0, 0.0};
        Index reach1 = 1;
        if (d == 2) {
            const double t1 = (y(i, 1) - ax1.lo) / ax1.step;
            j1 = std::min(g1 - 2, static_cast<Index>(t1));
            const double f1 = t1 - static_cast<double>(j1);
            w1[0] = 1.0 - f1;
            w1[1] = f1;
            reach1 = 2;
        }
        for (Index a = 0; a < 2; ++a)
            for (Index b = 0; b < reach1; ++b) {
                const double w = w0[a] * w1[b];
                const size_t cell = static_cast<size_t>((i0 + a) * g1 + (j1 + b));
                grid[static_cast<size_t>(p)][cell] += w;
                for (Index q = 0; q < p; ++q)
                    grid[static_cast<size_t>(q)][cell] += w * scores(i, q);
            }
    }

    const auto w0 = kernel_weights(h[0], ax0.step);
    const auto w1 = d == 2 ? kernel_weights(h[1], ax1.step) : std::vector<double>{1.0};
    std::vector<double> tmp(cells);
    for (auto& field : grid) {
        convolve_axis(field, tmp, g0, g1, /*along_cols=*/d == 2, d == 2 ? w1 : w0, exec);
        if (d == 2) {
            convolve_axis(tmp, field, g0, g1, /*along_cols=*/false, w0, exec);
        } else {
            field.swap(tmp);
        }
    }

    KdeFields f;
    f.num.resize(n, p);
    f.den.resize(n);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (Index i = 0; i < n; ++i) {
        const double t0 = (y(i, 0) - ax0.lo) / ax0.step;
        const Index i0 = std::min(g0 - 2, static_cast<Index>(t0));
        const double f0 = t0 - static_cast<double>(i0);
        Index j1 = 0;
        double f1 = 0.0;
        if (d == 2) {
            const double t1 = (y(i, 1) - ax1.lo) / ax1.step;
            j1 = std::min(g1 - 2, static_cast<Index>(t1));
            f1 = t1 - static_cast<double>(j1);
        }
        const auto interp = [&](const std::vector<double>& field) {
            const double v00 = field[static_cast<size_t>(i0 * g1 + j1)];
            const double v10 = field[static_cast<size_t>((i0 + 1) * g1 + j1)];
            if (d == 1) return v00 * (1.0 - f0) + v10 * f0;
            const double v01 = field[static_cast<size_t>(i0 * g1 + j1 + 1)];
            const double v11 = field[static_cast<size_t>((i0 + 1) * g1 + j1 + 1)];
            return (v00 * (1.0 - f1) + v01 * f1) * (1.0 - f0) +
                   (v10 * (1.0 - f1) + v11 * f1) * f0;
        };
        double den = interp(grid[static_cast<size_t>(p)]);
        if (loo) den -= 1.0;
        f.den[i] = den;
        for (Index q = 0; q < p; ++q) {
            double num = interp(grid[static_cast<size_t>(q)]);
            if (loo) num -= scores(i, q);
            f.num(i, q) = num;
        }
    }
    return f;
}

} // namespace

OutputScores output_score(const SampleBatch& batch, const KdeConfig& cfg, Exec exec) {
    if (batch.n < 2) throw ConfigError("output_score: batch must contain at least 2 samples");
    const auto sel = select_outputs(batch, cfg);
    const Index d = static_cast<Index>(sel.size());
    const Index n = batch.n;
    const Index p = batch.scores.cols();

    Matrix y(n, d);
    for (Index k = 0; k < d; ++k) y.col(k) = batch.outputs.col(sel[static_cast<size_t>(k)]);

    const Vector h = bandwidths_for(y, cfg);

    KdeConfig::Method method = cfg.method;
    if (method == KdeConfig::Method::Auto)
        method = d <= 2 ? KdeConfig::Method::Binned : KdeConfig::Method::Exact;
    const KdeFields fields = method == KdeConfig::Method::Binned
                                 ? kde_binned(y, batch.scores, h, cfg.leave_one_out, exec)
                                 : kde_exact(y, batch.scores, h, cfg.leave_one_out, exec);

    // Normalization constant mapping raw kernel sums to densities.
    double norm = 1.0;
    for (Index k = 0; k < d; ++k) norm /= h[k] * std::sqrt(2.0 * std::numbers::pi);
    const double n_eff = static_cast<double>(cfg.leave_one_out ? n - 1 : n);

    OutputScores out;
    out.bandwidths = h;
    out.density.resize(n);
    out.scores.resize(n, p);
    double max_density = 0.0;
    for (Index i = 0; i < n; ++i) {
        out.density[i] = std::max(0.0, fields.den[i]) * norm / n_eff;
        max_density = std::max(max_density, out.density[i]);
    }
    const double floor = cfg.floor_rel * max_density;
    const double den_floor = floor * n_eff / norm;
    for (Index i = 0; i < n; ++i) {
        const double den = std::max(fields.den[i], den_floor);
        for (Index q = 0; q < p; ++q) out.scores(i, q) = fields.num(i, q) / den;
        if (out.density[i] < floor) out.excluded.push_back(i);
    }
    return out;
}

FisherMatrix fisher_matrix(const SampleBatch& batch, const KdeConfig& cfg, Exec exec) {
    const OutputScores os = output_score(batch, cfg, exec);
    const Index n = batch.n;
    const Index p = os.scores.cols();

    std::vector<char> keep(static_cast<size_t>(n), 1);
    for (Index i : os.excluded) keep[static_cast<size_t>(i)] = 0;
    const Index n_used = n - static_cast<Index>(os.excluded.size());
    if (n_used < 1) throw NumericError("fisher_matrix: all samples fell below the density floor");

    std::vector<double> acc(static_cast<size_t>(p * p));
    chunked_sum_vec(
        n, p * p,
        [&](Index i, double* a) {
            if (!keep[static_cast<size_t>(i)]) return;
            const double* s = os.scores.row(i).data();
            for (Index r = 0; r < p; ++r)
                for (Index c = 0; c < p; ++c) a[r * p + c] += s[r] * s[c];
        },
        acc.data(), exec);

    Matrix f(p, p);
    for (Index r = 0; r < p; ++r)
        for (Index c = 0; c < p; ++c) f(r, c) = acc[static_cast<size_t>(r * p + c)] / n_used;
    f = 0.5 * (f + f.transpose()).eval();

    // PSD clamp: tolerate eigenvalues down to -1e-10 * lambda_max, zero them
    // out. Work on the equilibrated matrix: parameter scales can differ by
    // many orders of magnitude and a clamp in raw units would spray
    // eps*lambda_max noise over the small diagonal entries.
    Vector d = f.diagonal().cwiseMax(0.0).cwiseSqrt();
    Vector dinv(p);
    for (Index j = 0; j < p; ++j) dinv[j] = d[j] > 0.0 ? 1.0 / d[j] : 0.0;
    Matrix c = dinv.asDiagonal() * f * dinv.asDiagonal();
    c = 0.5 * (c + c.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> solver(c);
    if (solver.info() != Eigen::Success) throw NumericError("fisher_matrix: eigensolve failed");
    const Vector lam = solver.eigenvalues();
    const double lmax = std::max(lam.maxCoeff(), 0.0);
    if (lam.minCoeff() < -1e-10 * std::max(lmax, 1e-300))
        throw NumericError("fisher_matrix: matrix is not PSD within tolerance");
    if (lam.minCoeff() < 0.0) {
        Vector clamped = lam.cwiseMax(0.0);
        c = solver.eigenvectors() * clamped.asDiagonal() * solver.eigenvectors().transpose();
        c = 0.5 * (c + c.transpose()).eval();
        f = d.asDiagonal() * c * d.asDiagonal();
    }

    FisherMatrix fim;
    fim.F = f;
    fim.n_used = n_used;
    fim.n_excluded = static_cast<Index>(os.excluded.size());
    fim.bandwidths = os.bandwidths;
    fim.config = cfg;
    return fim;
}

double kl_quadratic(const FisherMatrix& fim, const Vector& db) {
    if (db.size() != fim.F.rows())
        throw ConfigError("kl_quadratic: perturbation length must match parameter count");
    return 0.5 * db.dot(fim.F * db);
}

} // namespace psens
