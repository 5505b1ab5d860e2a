#pragma once

#include "psens/common.hpp"
#include "psens/dist.hpp"
#include "psens/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace psens {

/// Inputs, outputs and score rows from one simulation run. All estimators in
/// this module are pure functions of the batch, so every utility and gradient
/// comes from the same n model evaluations (the single-run property of the
/// LR/SF method).
struct SampleBatch {
    RowMatrix inputs;  // n x d
    RowMatrix outputs; // n x m
    RowMatrix scores;  // n x P
    std::uint64_t seed = 0;
    Index n = 0;
    ParamVector params;
    std::vector<std::string> output_names;
};

/// Scalar utility u(y) whose expectation is estimated from a batch.
struct UtilitySpec {
    enum class Kind { Moment, FailureProb, Custom };

    Kind kind = Kind::Moment;
    std::string label;
    int order = 1;                          // Moment: E[g(y_k)^q]
    Index output = 0;                       // Moment / FailureProb output column
    std::function<double(double)> post_map; // Moment: optional g(.)
    double threshold = 0.0;                 // FailureProb: realized threshold z
    std::optional<Marginal> threshold_dist; // FailureProb: uncertain threshold
    std::function<double(const Vector&)> fn; // Custom

    static UtilitySpec moment(int order, Index output, std::string label = {},
                              std::function<double(double)> post_map = {});
    static UtilitySpec failure(Index output, double threshold, std::string label = {});
    static UtilitySpec failure_uncertain(Index output, Marginal threshold_dist,
                                         std::string label = {});
    static UtilitySpec custom(std::function<double(const Vector&)> fn, std::string label);

    double apply(const Eigen::Ref<const Vector>& outputs_row) const;
    /// Draw the threshold when it is uncertain (one draw per run repetition).
    UtilitySpec realized(std::uint64_t key) const;
};

struct UtilityEstimate {
    std::string label;
    double value = 0.0;
    double se_value = 0.0;
    Vector gradient;    // dU/db, ParamVector order (empty if not estimated)
    Vector se_gradient; // per-component standard errors
};

/// Sample, evaluate and score in one pass. Deterministic in (n, seed) and
/// independent of the thread count; rows are keyed per sample index.
SampleBatch run_batch(const InputModel& model, const ModelSpec& spec, Index n, std::uint64_t seed,
                      Exec exec = Exec::Parallel);

/// U = mean of u(y_i) with its standard error; no gradient.
UtilityEstimate estimate_utility(const SampleBatch& batch, const UtilitySpec& u,
                                 Exec exec = Exec::Parallel);

/// LR/SF gradient dU/db_j = mean of u(y_i) * score_ij (uncentered form).
UtilityEstimate estimate_gradient(const SampleBatch& batch, const UtilitySpec& u,
                                  Exec exec = Exec::Parallel);

/// Control-variate form: mean of (u(y_i) - U) * score_ij. Same expectation
/// (the score has zero mean), typically lower variance.
UtilityEstimate control_variate_center(const SampleBatch& batch, const UtilitySpec& u,
                                       Exec exec = Exec::Parallel);

} // namespace psens
