#include "psens/pipeline.hpp"

#include "psens/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace psens {

namespace {

// ---------------------------------------------------------------------------
// Config parsing. Rejection is total: unknown keys and out-of-range values
// fail before any sampling starts.
// ---------------------------------------------------------------------------

void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* key : allowed)
            if (item.key() == key) ok = true;
        if (!ok) throw ConfigError("config: unknown key '" + item.key() + "' in " + where);
    }
}

double require_number(const Json& j, const std::string& where, const char* key) {
    if (!j.contains(key) || !j[key].is_number())
        throw ConfigError("config: " + where + " requires numeric '" + key + "'");
    return j[key].get<double>();
}

Marginal parse_marginal(const Json& j, const std::string& where) {
    check_keys(j, where, {"name", "kind", "mean", "std", "cov", "shape", "scale", "value"});
    if (!j.contains("name") || !j["name"].is_string())
        throw ConfigError("config: " + where + " requires a string 'name'");
    const std::string name = j["name"].get<std::string>();
    const std::string kind = j.value("kind", std::string("gaussian"));
    if (kind == "gaussian") {
        const double mean = require_number(j, where, "mean");
        if (j.contains("std"))
            return Marginal::gaussian(name, mean, j["std"].get<double>());
        if (j.contains("cov"))
            return Marginal::gaussian(name, mean, std::abs(mean) * j["cov"].get<double>());
        throw ConfigError("config: " + where + " gaussian requires 'std' or 'cov'");
    }
    if (kind == "gamma") {
        if (j.contains("shape") || j.contains("scale"))
            return Marginal::gamma_shape_scale(name, require_number(j, where, "shape"),
                                               require_number(j, where, "scale"));
        return Marginal::gamma_mean_cov(name, require_number(j, where, "mean"),
                                        require_number(j, where, "cov"));
    }
    if (kind == "delta")
        return Marginal::delta_approx(name, require_number(j, where, "value"),
                                      j.value("cov", 1e-4));
    throw ConfigError("config: " + where + " has unknown marginal kind '" + kind + "'");
}

UtilitySpec parse_utility(const Json& j, const std::string& where) {
    check_keys(j, where,
               {"kind", "order", "output", "label", "threshold", "threshold_mean", "threshold_std"});
    const std::string kind = j.value("kind", std::string());
    const std::string label = j.value("label", std::string());
    const Index output = j.value("output", 0);
    if (kind == "moment") {
        return UtilitySpec::moment(j.value("order", 1), output, label);
    }
    if (kind == "failure") {
        if (j.contains("threshold_mean") || j.contains("threshold_std")) {
            const double mean = require_number(j, where, "threshold_mean");
            const double sd = require_number(j, where, "threshold_std");
            return UtilitySpec::failure_uncertain(
                output, Marginal::gaussian("threshold", mean, sd), label);
        }
        return UtilitySpec::failure(output, require_number(j, where, "threshold"), label);
    }
    throw ConfigError("config: " + where + " has unknown utility kind '" + kind + "'");
}

ModelConfig parse_model(const Json& j) {
    check_keys(j, "model",
               {"name", "dim", "coeffs", "noise_std", "damping", "stations", "freq_points",
                "amplitude", "executable", "outputs"});
    ModelConfig m;
    if (!j.contains("name") || !j["name"].is_string())
        throw ConfigError("config: model requires a string 'name'");
    m.name = j["name"].get<std::string>();
    if (m.name == "identity" || m.name == "roos_arnold") {
        m.dim = static_cast<Index>(require_number(j, "model", "dim"));
        if (m.dim < 1) throw ConfigError("config: model dim must be >= 1");
    } else if (m.name == "linear") {
        if (!j.contains("coeffs") || !j["coeffs"].is_array() || j["coeffs"].empty())
            throw ConfigError("config: linear model requires a 'coeffs' matrix");
        const auto& rows = j["coeffs"];
        const size_t cols = rows[0].size();
        m.coeffs.resize(static_cast<Index>(rows.size()), static_cast<Index>(cols));
        for (size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != cols) throw ConfigError("config: ragged 'coeffs' matrix");
            for (size_t c = 0; c < cols; ++c)
                m.coeffs(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c].get<double>();
        }
        m.noise_std = Vector::Zero(m.coeffs.rows());
        if (j.contains("noise_std")) {
            const auto& ns = j["noise_std"];
            if (static_cast<Index>(ns.size()) != m.coeffs.rows())
                throw ConfigError("config: noise_std length must match coeffs rows");
            for (size_t k = 0; k < ns.size(); ++k) m.noise_std[static_cast<Index>(k)] = ns[k].get<double>();
        }
        m.dim = m.coeffs.cols();
    } else if (m.name == "decreasing_coeff") {
        m.dim = 8;
    } else if (m.name == "cantilever") {
        m.dim = 5;
        m.cantilever.damping = j.value("damping", 0.1);
        m.cantilever.stations = j.value("stations", 21);
        m.cantilever.freq_points = j.value("freq_points", 1024);
        m.cantilever.amplitude = j.value("amplitude", 1.0);
    } else if (m.name == "external") {
        if (!j.contains("executable")) throw ConfigError("config: external model requires 'executable'");
        m.executable = j["executable"].get<std::string>();
        m.dim = static_cast<Index>(require_number(j, "model", "dim"));
        if (!j.contains("outputs") || !j["outputs"].is_array() || j["outputs"].empty())
            throw ConfigError("config: external model requires output names");
        for (const auto& o : j["outputs"]) m.output_names.push_back(o.get<std::string>());
    } else {
        throw ConfigError("config: unknown model '" + m.name + "'");
    }
    return m;
}

KdeConfig parse_kde(const Json& j) {
    check_keys(j, "kde", {"bandwidth", "method", "floor_rel", "outputs", "leave_one_out"});
    KdeConfig k;
    if (j.contains("bandwidth")) {
        if (j["bandwidth"].is_string()) {
            if (j["bandwidth"].get<std::string>() != "silverman")
                throw ConfigError("config: kde bandwidth must be 'silverman' or an array");
        } else if (j["bandwidth"].is_array()) {
            k.bandwidth_rule = KdeConfig::Bandwidth::Fixed;
            k.fixed_bandwidth.resize(static_cast<Index>(j["bandwidth"].size()));
            for (size_t i = 0; i < j["bandwidth"].size(); ++i)
                k.fixed_bandwidth[static_cast<Index>(i)] = j["bandwidth"][i].get<double>();
        } else {
            throw ConfigError("config: kde bandwidth must be 'silverman' or an array");
        }
    }
    const std::string method = j.value("method", std::string("auto"));
    if (method == "auto") k.method = KdeConfig::Method::Auto;
    else if (method == "exact") k.method = KdeConfig::Method::Exact;
    else if (method == "binned") k.method = KdeConfig::Method::Binned;
    else throw ConfigError("config: kde method must be auto|exact|binned");
    k.floor_rel = j.value("floor_rel", 1e-12);
    if (!(k.floor_rel > 0.0)) throw ConfigError("config: kde floor_rel must be > 0");
    if (j.contains("outputs"))
        for (const auto& o : j["outputs"]) k.outputs.push_back(o.get<Index>());
    k.leave_one_out = j.value("leave_one_out", false);
    return k;
}

ModelSpec build_model(const ModelConfig& m, std::uint64_t noise_seed) {
    if (m.name == "identity") return identity_model(m.dim);
    if (m.name == "linear") return linear_model(m.coeffs, m.noise_std, noise_seed);
    if (m.name == "decreasing_coeff") return decreasing_coeff_model(noise_seed);
    if (m.name == "roos_arnold") return roos_arnold_model(m.dim);
    if (m.name == "cantilever") return cantilever_model(m.cantilever);
    if (m.name == "external") return external_model(m.executable, m.dim, m.output_names);
    throw ConfigError("config: unknown model '" + m.name + "'");
}

const char* analysis_name(AnalysisKind k) {
    switch (k) {
        case AnalysisKind::UtilityEigen: return "utility_eigen";
        case AnalysisKind::Fisher: return "fisher";
        case AnalysisKind::GeneralizedFailureVsFisher: return "generalized_failure_vs_fisher";
    }
    return "?";
}

Json vector_json(const Vector& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Json matrix_rows_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Json analysis_json(const AnalysisResult& a, bool with_summary) {
    Json j;
    j["eigenvalues"] = vector_json(a.report.eigenvalues);
    j["eigenvalue_std"] = vector_json(a.eigval_std);
    j["eigenvectors"] = matrix_rows_json(a.report.eigenvectors);
    j["eigenvector_std"] = matrix_rows_json(a.eigvec_std);
    if (with_summary) {
        j["summary"] = vector_json(a.report.summary);
        j["summary_std"] = vector_json(a.summary_std);
    }
    j["moment_matrix"] = matrix_rows_json(a.moment);
    return j;
}

} // namespace

Json RunConfig::echo() const {
    Json j;
    Json jm;
    jm["name"] = model.name;
    if (model.name == "identity" || model.name == "roos_arnold" || model.name == "external")
        jm["dim"] = model.dim;
    if (model.name == "linear") {
        jm["coeffs"] = matrix_rows_json(model.coeffs);
        jm["noise_std"] = vector_json(model.noise_std);
    }
    if (model.name == "cantilever") {
        jm["damping"] = model.cantilever.damping;
        jm["stations"] = model.cantilever.stations;
        jm["freq_points"] = model.cantilever.freq_points;
        jm["amplitude"] = model.cantilever.amplitude;
    }
    if (model.name == "external") {
        jm["executable"] = model.executable;
        jm["outputs"] = model.output_names;
    }
    j["model"] = std::move(jm);

    Json jms = Json::array();
    for (const auto& m : marginals) {
        Json e;
        e["name"] = m.name();
        switch (m.kind()) {
            case Marginal::Kind::Gaussian:
                e["kind"] = "gaussian";
                e["mean"] = m.p1();
                e["std"] = m.p2();
                break;
            case Marginal::Kind::Gamma:
                // Converted native parameters are echoed alongside mean/CoV.
                e["kind"] = "gamma";
                e["shape"] = m.p1();
                e["scale"] = m.p2();
                e["mean"] = m.p1() * m.p2();
                e["cov"] = 1.0 / std::sqrt(m.p1());
                break;
            case Marginal::Kind::DeltaApprox:
                e["kind"] = "delta";
                e["value"] = m.p1();
                e["cov"] = m.delta_cov();
                e["std"] = std::abs(m.p2());
                break;
        }
        jms.push_back(std::move(e));
    }
    j["marginals"] = std::move(jms);

    Json jus = Json::array();
    for (const auto& u : utilities) {
        Json e;
        e["label"] = u.label;
        if (u.kind == UtilitySpec::Kind::Moment) {
            e["kind"] = "moment";
            e["order"] = u.order;
            e["output"] = u.output;
        } else if (u.kind == UtilitySpec::Kind::FailureProb) {
            e["kind"] = "failure";
            e["output"] = u.output;
            if (u.threshold_dist) {
                e["threshold_mean"] = u.threshold_dist->p1();
                e["threshold_std"] = u.threshold_dist->p2();
            } else {
                e["threshold"] = u.threshold;
            }
        } else {
            e["kind"] = "custom";
        }
        jus.push_back(std::move(e));
    }
    j["utilities"] = std::move(jus);

    j["analysis"] = analysis_name(analysis);
    j["n"] = n;
    j["seed"] = seed;
    j["repetitions"] = repetitions;
    j["normalization"] = normalization == Normalization::Proportional ? "proportional" : "raw";

    Json jk;
    if (kde.bandwidth_rule == KdeConfig::Bandwidth::Silverman) jk["bandwidth"] = "silverman";
    else jk["bandwidth"] = vector_json(kde.fixed_bandwidth);
    jk["method"] = kde.method == KdeConfig::Method::Auto
                       ? "auto"
                       : (kde.method == KdeConfig::Method::Exact ? "exact" : "binned");
    jk["floor_rel"] = kde.floor_rel;
    jk["outputs"] = kde.outputs;
    jk["leave_one_out"] = kde.leave_one_out;
    j["kde"] = std::move(jk);

    j["centered_gradients"] = centered_gradients;
    j["rescale_outputs"] = rescale_outputs;
    j["convergence_ns"] = convergence_ns;
    return j;
}

RunConfig parse_config(const Json& j) {
    check_keys(j, "top level",
               {"model", "marginals", "utilities", "analysis", "n", "seed", "repetitions",
                "normalization", "kde", "centered_gradients", "rescale_outputs", "convergence_ns",
                "out_dir"});
    RunConfig c;
    if (!j.contains("model")) throw ConfigError("config: missing 'model'");
    c.model = parse_model(j["model"]);

    if (!j.contains("marginals") || !j["marginals"].is_array() || j["marginals"].empty())
        throw ConfigError("config: missing 'marginals'");
    for (size_t i = 0; i < j["marginals"].size(); ++i)
        c.marginals.push_back(parse_marginal(j["marginals"][i],
                                             "marginals[" + std::to_string(i) + "]"));
    if (static_cast<Index>(c.marginals.size()) != c.model.dim)
        throw ConfigError("config: model expects " + std::to_string(c.model.dim) +
                          " inputs but " + std::to_string(c.marginals.size()) +
                          " marginals are given");

    if (j.contains("utilities"))
        for (size_t i = 0; i < j["utilities"].size(); ++i)
            c.utilities.push_back(parse_utility(j["utilities"][i],
                                                "utilities[" + std::to_string(i) + "]"));

    const std::string analysis = j.value("analysis", std::string("fisher"));
    if (analysis == "fisher") c.analysis = AnalysisKind::Fisher;
    else if (analysis == "utility_eigen") c.analysis = AnalysisKind::UtilityEigen;
    else if (analysis == "generalized_failure_vs_fisher")
        c.analysis = AnalysisKind::GeneralizedFailureVsFisher;
    else throw ConfigError("config: unknown analysis '" + analysis + "'");

    c.n = j.value("n", 10000);
    if (c.n < 1) throw ConfigError("config: n must be >= 1");
    c.seed = j.value("seed", 1);
    c.repetitions = j.value("repetitions", 1);
    if (c.repetitions < 1) throw ConfigError("config: repetitions must be >= 1");

    const std::string norm = j.value("normalization", std::string("raw"));
    if (norm == "raw") c.normalization = Normalization::Raw;
    else if (norm == "proportional") c.normalization = Normalization::Proportional;
    else throw ConfigError("config: normalization must be raw|proportional");
    if (c.normalization == Normalization::Proportional) {
        const InputModel probe(c.marginals);
        for (const auto& p : probe.params())
            if (p.nominal == 0.0)
                throw ConfigError("config: proportional normalization requires a nonzero nominal "
                                  "value for " + p.label());
    }

    if (j.contains("kde")) c.kde = parse_kde(j["kde"]);
    c.centered_gradients = j.value("centered_gradients", true);
    c.rescale_outputs = j.value("rescale_outputs", false);
    if (j.contains("convergence_ns"))
        for (const auto& v : j["convergence_ns"]) {
            const Index nk = v.get<Index>();
            if (nk < 2 || nk > c.n)
                throw ConfigError("config: convergence_ns entries must lie in [2, n]");
            c.convergence_ns.push_back(nk);
        }
    c.out_dir = j.value("out_dir", std::string("out"));

    // Analysis-specific requirements.
    const bool needs_utilities = c.analysis != AnalysisKind::Fisher;
    if (needs_utilities && c.utilities.empty())
        throw ConfigError("config: analysis '" + std::string(analysis_name(c.analysis)) +
                          "' requires at least one utility");
    if (c.analysis == AnalysisKind::GeneralizedFailureVsFisher)
        for (const auto& u : c.utilities)
            if (u.kind != UtilitySpec::Kind::FailureProb)
                throw ConfigError("config: generalized_failure_vs_fisher requires failure utilities");

    // Reject dangling output references before any sampling happens.
    Index out_dim = 1;
    if (c.model.name == "identity") out_dim = c.model.dim;
    else if (c.model.name == "linear") out_dim = c.model.coeffs.rows();
    else if (c.model.name == "cantilever") out_dim = 2;
    else if (c.model.name == "external") out_dim = static_cast<Index>(c.model.output_names.size());
    for (const auto& u : c.utilities)
        if (u.kind != UtilitySpec::Kind::Custom && (u.output < 0 || u.output >= out_dim))
            throw ConfigError("config: utility '" + u.label + "' references output " +
                              std::to_string(u.output) + " of a " + std::to_string(out_dim) +
                              "-output model");
    for (Index k : c.kde.outputs)
        if (k < 0 || k >= out_dim)
            throw ConfigError("config: kde output index " + std::to_string(k) + " out of range");
    return c;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    Json j;
    try {
        j = Json::parse(in);
    } catch (const std::exception& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    return parse_config(j);
}

std::string config_hash(const Json& j) {
    const std::string dump = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

struct RepOutcome {
    Matrix primary;            // matrix decomposed by the primary analysis
    std::optional<Matrix> constraint; // Fisher matrix for the generalized analysis
    std::vector<UtilityEstimate> estimates;
    Index kde_excluded = 0;
    Vector kde_bandwidths;
};

struct Pipeline {
    const RunConfig& cfg;
    InputModel inputs;

    explicit Pipeline(const RunConfig& c) : cfg(c), inputs(c.marginals) {}

    Matrix proportional_jacobian() const {
        return Matrix(inputs.nominals().asDiagonal());
    }

    void rescale(SampleBatch& batch) const {
        if (!cfg.rescale_outputs) return;
        for (Index k = 0; k < batch.outputs.cols(); ++k) {
            const double peak = batch.outputs.col(k).cwiseAbs().maxCoeff();
            if (peak > 0.0) batch.outputs.col(k) /= peak;
        }
    }

    SampleBatch make_batch(int rep) const {
        const std::uint64_t rep_seed = rng::derive(cfg.seed, rng::kSaltRepetition, rep);
        const ModelSpec spec =
            build_model(cfg.model, rng::derive(cfg.seed, rng::kSaltNoise, rep));
        SampleBatch batch = run_batch(inputs, spec, cfg.n, rep_seed);
        rescale(batch);
        return batch;
    }

    std::vector<UtilityEstimate> estimate_all(const SampleBatch& batch, int rep) const {
        std::vector<UtilityEstimate> out;
        for (size_t k = 0; k < cfg.utilities.size(); ++k) {
            const UtilitySpec realized = cfg.utilities[k].realized(
                rng::derive(cfg.seed, rng::kSaltThreshold,
                            static_cast<std::uint64_t>(rep) * 1000003ull + k));
            UtilityEstimate est = cfg.centered_gradients ? control_variate_center(batch, realized)
                                                         : estimate_gradient(batch, realized);
            out.push_back(std::move(est));
        }
        return out;
    }

    Matrix fisher_moment(const SampleBatch& batch, RepOutcome* diag) const {
        const FisherMatrix fim = fisher_matrix(batch, cfg.kde);
        if (diag) {
            diag->kde_excluded = fim.n_excluded;
            diag->kde_bandwidths = fim.bandwidths;
        }
        if (cfg.normalization == Normalization::Proportional) {
            for (const auto& p : inputs.params())
                if (p.nominal == 0.0)
                    throw ConfigError("proportional normalization requires nonzero nominal for " +
                                      p.label());
            return reparameterize(fim.F, proportional_jacobian());
        }
        return fim.F;
    }

    RepOutcome analyze(const SampleBatch& batch, int rep) {
        RepOutcome out;
        switch (cfg.analysis) {
            case AnalysisKind::Fisher: {
                out.primary = fisher_moment(batch, &out);
                break;
            }
            case AnalysisKind::UtilityEigen: {
                out.estimates = estimate_all(batch, rep);
                out.primary = second_moment(
                    {build_r(out.estimates, cfg.normalization, batch.params)});
                break;
            }
            case AnalysisKind::GeneralizedFailureVsFisher: {
                out.estimates = estimate_all(batch, rep);
                out.primary = second_moment(
                    {build_r(out.estimates, cfg.normalization, batch.params)});
                out.constraint = fisher_moment(batch, &out);
                break;
            }
        }
        return out;
    }
};

SampleBatch batch_prefix(const SampleBatch& full, Index nk) {
    SampleBatch sub;
    sub.inputs = full.inputs.topRows(nk);
    sub.outputs = full.outputs.topRows(nk);
    sub.scores = full.scores.topRows(nk);
    sub.seed = full.seed;
    sub.n = nk;
    sub.params = full.params;
    sub.output_names = full.output_names;
    return sub;
}

AnalysisResult aggregate(const Matrix& mean_matrix, const std::vector<Matrix>& rep_matrices,
                         bool standard, const Matrix* mean_constraint,
                         const std::vector<Matrix>* rep_constraints,
                         const std::vector<std::string>& labels) {
    AnalysisResult res;
    res.moment = mean_matrix;
    res.report = standard
                     ? solve_standard(mean_matrix)
                     : solve_generalized(mean_matrix, *mean_constraint, ConstraintKind::Fisher);
    res.report.param_labels = labels;

    const Index p = mean_matrix.rows();
    res.eigvec_std = Matrix::Zero(p, p);
    res.eigval_std = Vector::Zero(p);
    res.summary_std = Vector::Zero(p);
    const size_t r = rep_matrices.size();
    if (r > 1) {
        Matrix vec_sum = Matrix::Zero(p, p), vec_sq = Matrix::Zero(p, p);
        Vector val_sum = Vector::Zero(p), val_sq = Vector::Zero(p);
        Vector sum_sum = Vector::Zero(p), sum_sq = Vector::Zero(p);
        for (size_t idx = 0; idx < r; ++idx) {
            const Matrix& m = rep_matrices[idx];
            const EigenReport rep =
                standard ? solve_standard(m)
                         : solve_generalized(m, (*rep_constraints)[idx], ConstraintKind::Fisher);
            vec_sum += rep.eigenvectors;
            vec_sq += rep.eigenvectors.cwiseProduct(rep.eigenvectors);
            val_sum += rep.eigenvalues;
            val_sq += rep.eigenvalues.cwiseProduct(rep.eigenvalues);
            if (standard) {
                sum_sum += rep.summary;
                sum_sq += rep.summary.cwiseProduct(rep.summary);
            }
        }
        const double nr = static_cast<double>(r);
        res.eigvec_std =
            ((vec_sq / nr) - (vec_sum / nr).cwiseProduct(vec_sum / nr)).cwiseMax(0.0).cwiseSqrt();
        res.eigval_std =
            ((val_sq / nr) - (val_sum / nr).cwiseProduct(val_sum / nr)).cwiseMax(0.0).cwiseSqrt();
        res.summary_std =
            ((sum_sq / nr) - (sum_sum / nr).cwiseProduct(sum_sum / nr)).cwiseMax(0.0).cwiseSqrt();
    }
    return res;
}

} // namespace

RunReport run(const RunConfig& cfg) {
    Pipeline pipe(cfg);

    RunReport report;
    report.config_echo = cfg.echo();
    report.config_hash = config_hash(report.config_echo);
    report.analysis = cfg.analysis;
    report.n = cfg.n;
    report.seed = cfg.seed;
    report.repetitions = cfg.repetitions;
    report.param_labels = pipe.inputs.param_labels();

    std::vector<Matrix> primaries, constraints;
    std::vector<std::vector<UtilityEstimate>> estimates;
    SampleBatch first_batch;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        SampleBatch batch = pipe.make_batch(rep);
        RepOutcome out = pipe.analyze(batch, rep);
        primaries.push_back(std::move(out.primary));
        if (out.constraint) constraints.push_back(std::move(*out.constraint));
        if (!out.estimates.empty()) estimates.push_back(std::move(out.estimates));
        if (rep == 0) {
            first_batch = std::move(batch);
            report.kde_excluded = out.kde_excluded;
            report.kde_bandwidths = out.kde_bandwidths;
        }
    }

    const Index p = primaries.front().rows();
    Matrix mean_primary = Matrix::Zero(p, p);
    for (const Matrix& m : primaries) mean_primary += m;
    mean_primary /= static_cast<double>(primaries.size());

    report.primary =
        aggregate(mean_primary, primaries, true, nullptr, nullptr, report.param_labels);

    if (cfg.analysis == AnalysisKind::GeneralizedFailureVsFisher) {
        Matrix mean_w = Matrix::Zero(p, p);
        for (const Matrix& m : constraints) mean_w += m;
        mean_w /= static_cast<double>(constraints.size());
        report.constrained = aggregate(mean_primary, primaries, false, &mean_w, &constraints,
                                       report.param_labels);
        const Vector a = report.primary.report.eigenvectors.col(0).normalized();
        const Vector b = report.constrained->report.eigenvectors.col(0).normalized();
        report.constrained_cosine = std::abs(a.dot(b));
    }

    // Utility statistics across repetitions.
    for (size_t k = 0; k < cfg.utilities.size() && !estimates.empty(); ++k) {
        UtilityStats st;
        st.label = cfg.utilities[k].label;
        double sum = 0.0, sq = 0.0;
        for (const auto& rep : estimates) {
            sum += rep[k].value;
            sq += rep[k].value * rep[k].value;
        }
        const double nr = static_cast<double>(estimates.size());
        st.value = sum / nr;
        st.value_std = nr > 1 ? std::sqrt(std::max(0.0, sq / nr - st.value * st.value)) : 0.0;
        st.se = estimates.front()[k].se_value;
        report.utilities.push_back(std::move(st));
    }

    // Convergence ladder on prefixes of the first repetition's batch.
    std::vector<Index> ladder = cfg.convergence_ns;
    if (ladder.empty() && cfg.n >= 64)
        ladder = {cfg.n / 8, cfg.n / 4, cfg.n / 2, cfg.n};
    std::set<Index> seen;
    for (Index nk : ladder) {
        if (nk < 2 || nk > cfg.n || !seen.insert(nk).second) continue;
        SampleBatch sub = batch_prefix(first_batch, nk);
        RepOutcome out = pipe.analyze(sub, 0);
        report.spectra.emplace_back(nk, solve_standard(out.primary).eigenvalues);
    }
    return report;
}

Json RunReport::to_json() const {
    Json j;
    j["config"] = config_echo;
    j["config_hash"] = config_hash;
    j["analysis"] = analysis_name(analysis);
    j["n"] = n;
    j["seed"] = seed;
    j["repetitions"] = repetitions;
    j["parameters"] = param_labels;
    j["eigen"] = analysis_json(primary, true);
    if (constrained) {
        Json c = analysis_json(*constrained, false);
        c["cosine_vs_standard"] = constrained_cosine;
        j["constrained"] = std::move(c);
    }
    Json ju = Json::array();
    for (const auto& u : utilities) {
        Json e;
        e["label"] = u.label;
        e["value"] = u.value;
        e["value_std"] = u.value_std;
        e["se"] = u.se;
        ju.push_back(std::move(e));
    }
    j["utilities"] = std::move(ju);
    Json js = Json::array();
    for (const auto& [nk, lam] : spectra) {
        Json e;
        e["n"] = nk;
        e["eigenvalues"] = vector_json(lam);
        js.push_back(std::move(e));
    }
    j["spectra"] = std::move(js);
    Json jk;
    jk["excluded_samples"] = kde_excluded;
    jk["bandwidths"] = vector_json(kde_bandwidths);
    j["kde"] = std::move(jk);
    return j;
}

namespace {

std::ofstream open_out(const std::string& dir, const char* file) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const std::string path = (fs::path(dir) / file).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("emit: cannot write '" + path + "'");
    return out;
}

void write_num(std::ofstream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

} // namespace

void emit(const RunReport& report, const std::string& dir) {
    {
        std::ofstream out = open_out(dir, "report.json");
        out << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream out = open_out(dir, "eigvecs.csv");
        out << "parameter";
        const Index p = report.primary.report.eigenvectors.cols();
        for (Index c = 0; c < p; ++c) out << ",ev" << (c + 1);
        out << "\n";
        for (Index r = 0; r < report.primary.report.eigenvectors.rows(); ++r) {
            out << report.param_labels[static_cast<size_t>(r)];
            for (Index c = 0; c < p; ++c) {
                out << ",";
                write_num(out, report.primary.report.eigenvectors(r, c));
            }
            out << "\n";
        }
    }
    {
        std::ofstream out = open_out(dir, "spectrum.csv");
        out << "n,index,eigenvalue\n";
        for (const auto& [nk, lam] : report.spectra)
            for (Index i = 0; i < lam.size(); ++i) {
                out << nk << "," << (i + 1) << ",";
                write_num(out, lam[i]);
                out << "\n";
            }
    }
    {
        std::ofstream out = open_out(dir, "summary.csv");
        out << "parameter,s2,s2_std\n";
        for (Index r = 0; r < report.primary.report.summary.size(); ++r) {
            out << report.param_labels[static_cast<size_t>(r)] << ",";
            write_num(out, report.primary.report.summary[r]);
            out << ",";
            write_num(out, report.primary.summary_std[r]);
            out << "\n";
        }
    }
}

} // namespace psens
