#pragma once

#include "psens/common.hpp"

#include <vector>

namespace psens {

// Deterministic chunked reductions. Terms are accumulated serially inside
// fixed-size chunks (chunks run in parallel), and the chunk partials are then
// folded pairwise in index order. The chunk size is a constant, not a function
// of the thread count, so Serial and Parallel execution are bit-identical.

inline constexpr Index kReduceChunk = 4096;

namespace detail {

inline void pairwise_fold(std::vector<double>& partials, Index width) {
    Index count = static_cast<Index>(partials.size()) / width;
    while (count > 1) {
        const Index half = count / 2;
        for (Index c = 0; c < half; ++c)
            for (Index k = 0; k < width; ++k)
                partials[static_cast<size_t>(c * width + k)] +=
                    partials[static_cast<size_t>((count - 1 - c) * width + k)];
        count -= half;
    }
}

} // namespace detail

/// Sum of term(i) for i in [0, n) with a fixed reduction tree.
template <class TermFn>
double chunked_sum(Index n, TermFn&& term, Exec exec = Exec::Parallel) {
    if (n <= 0) return 0.0;
    const Index nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<double> partials(static_cast<size_t>(nchunks), 0.0);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (Index c = 0; c < nchunks; ++c) {
        const Index lo = c * kReduceChunk;
        const Index hi = std::min(n, lo + kReduceChunk);
        double acc = 0.0;
        for (Index i = lo; i < hi; ++i) acc += term(i);
        partials[static_cast<size_t>(c)] = acc;
    }
    detail::pairwise_fold(partials, 1);
    return partials[0];
}

/// Accumulate a length-`width` contribution per index: term(i, acc) must add
/// into acc[0..width). Result written to out[0..width).
template <class TermFn>
void chunked_sum_vec(Index n, Index width, TermFn&& term, double* out,
                     Exec exec = Exec::Parallel) {
    const Index nchunks = std::max<Index>(1, (n + kReduceChunk - 1) / kReduceChunk);
    std::vector<double> partials(static_cast<size_t>(nchunks * width), 0.0);
#pragma omp parallel for schedule(static) if (exec == Exec::Parallel)
    for (Index c = 0; c < nchunks; ++c) {
        const Index lo = c * kReduceChunk;
        const Index hi = std::min(n, lo + kReduceChunk);
        double* acc = partials.data() + c * width;
        for (Index i = lo; i < hi; ++i) term(i, acc);
    }
    detail::pairwise_fold(partials, width);
    for (Index k = 0; k < width; ++k) out[k] = partials[static_cast<size_t>(k)];
}

} // namespace psens
