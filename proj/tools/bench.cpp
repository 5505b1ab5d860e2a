// Benchmark of the parallel kernels against their serial reference
// implementations: batch generation, exact pairwise KDE, binned KDE.
#include "psens/dist.hpp"
#include "psens/estimator.hpp"
#include "psens/fisher.hpp"
#include "psens/model.hpp"

#include <chrono>
#include <cstdio>

#if defined(_OPENMP)
#include <omp.h>
#endif

using namespace psens;

namespace {

double seconds(const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

void row(const char* name, double serial, double parallel) {
    std::printf("%-28s %10.4f s %10.4f s %8.2fx\n", name, serial, parallel, serial / parallel);
}

} // namespace

int main(int argc, char** argv) {
    Index n = 20000;
    if (argc > 1) n = std::atoll(argv[1]);
#if defined(_OPENMP)
    std::printf("threads: %d, n = %lld\n", omp_get_max_threads(), static_cast<long long>(n));
#else
    std::printf("threads: 1 (OpenMP disabled), n = %lld\n", static_cast<long long>(n));
#endif
    std::printf("%-28s %12s %12s %9s\n", "kernel", "serial", "parallel", "speedup");

    std::vector<Marginal> ms;
    for (int j = 0; j < 8; ++j)
        ms.push_back(Marginal::gaussian("x" + std::to_string(j + 1), 0.0, 1.0));
    const InputModel inputs(ms);
    const ModelSpec model = decreasing_coeff_model(7);

    SampleBatch batch;
    const double t_batch_s =
        seconds([&] { batch = run_batch(inputs, model, n, 42, Exec::Serial); });
    const double t_batch_p = seconds([&] { batch = run_batch(inputs, model, n, 42); });
    row("batch (sample+eval+score)", t_batch_s, t_batch_p);

    KdeConfig exact;
    exact.method = KdeConfig::Method::Exact;
    const Index n_exact = std::min<Index>(n, 6000);
    SampleBatch small = run_batch(inputs, model, n_exact, 42);
    const double t_ex_s = seconds([&] { output_score(small, exact, Exec::Serial); });
    const double t_ex_p = seconds([&] { output_score(small, exact); });
    std::printf("(exact KDE at n = %lld)\n", static_cast<long long>(n_exact));
    row("kde exact pairwise", t_ex_s, t_ex_p);

    KdeConfig binned;
    binned.method = KdeConfig::Method::Binned;
    const double t_b_s = seconds([&] { output_score(batch, binned, Exec::Serial); });
    const double t_b_p = seconds([&] { output_score(batch, binned); });
    row("kde binned grid", t_b_s, t_b_p);

    const double t_f_s = seconds([&] { fisher_matrix(batch, binned, Exec::Serial); });
    const double t_f_p = seconds([&] { fisher_matrix(batch, binned); });
    row("fisher assembly (binned)", t_f_s, t_f_p);
    return 0;
}
