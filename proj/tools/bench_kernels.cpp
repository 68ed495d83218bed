// Benchmarks the serial kernels against their OpenMP counterparts and checks
// that both produce identical bits while doing so.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "prefixmt/kernels.hpp"
#include "prefixmt/rng.hpp"

using namespace prefixmt;
namespace k = prefixmt::kernels;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<float> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = rng.uniform(-1.0f, 1.0f);
    return v;
}

double time_loop(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int r = 0; r < reps; ++r) fn();
    return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

void report(const char* name, double flops, double serial_s, double omp_s, bool identical) {
    std::printf("%-22s serial %8.3f ms (%6.2f GFLOP/s)   omp %8.3f ms (%6.2f GFLOP/s)   speedup %5.2fx   bits %s\n",
                name, serial_s * 1e3, flops / serial_s * 1e-9, omp_s * 1e3,
                flops / omp_s * 1e-9, serial_s / omp_s, identical ? "equal" : "DIFFER");
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp: enabled, max threads %d\n", omp_get_max_threads());
#else
    std::printf("openmp: not compiled in; omp variants run serially\n");
#endif

    for (int n : {64, 128, 256, 512}) {
        const auto a = random_vec(static_cast<size_t>(n) * n, 1);
        const auto b = random_vec(static_cast<size_t>(n) * n, 2);
        std::vector<float> c1(static_cast<size_t>(n) * n), c2(c1.size());
        const double flops = 2.0 * n * n * n;
        const int reps = n <= 128 ? 50 : 8;

        const double ts = time_loop([&] { k::matmul_nn_serial(a.data(), b.data(), c1.data(), n, n, n, false); }, reps);
        const double to = time_loop([&] { k::matmul_nn_omp(a.data(), b.data(), c2.data(), n, n, n, false); }, reps);
        report(("matmul_nn " + std::to_string(n)).c_str(), flops, ts, to,
               std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
    }

    {
        const int m = 256, p = 256, n = 256;
        const auto a = random_vec(static_cast<size_t>(m) * p, 3);
        const auto b = random_vec(static_cast<size_t>(n) * p, 4);
        std::vector<float> c1(static_cast<size_t>(m) * n), c2(c1.size());
        const double flops = 2.0 * m * p * n;
        const double ts = time_loop([&] { k::matmul_nt_serial(a.data(), b.data(), c1.data(), m, p, n, false); }, 8);
        const double to = time_loop([&] { k::matmul_nt_omp(a.data(), b.data(), c2.data(), m, p, n, false); }, 8);
        report("matmul_nt 256", flops, ts, to,
               std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);

        const auto g = random_vec(static_cast<size_t>(m) * n, 5);
        std::vector<float> d1(static_cast<size_t>(p) * n), d2(d1.size());
        const double ts2 = time_loop([&] { k::matmul_tn_serial(a.data(), g.data(), d1.data(), m, p, n, false); }, 8);
        const double to2 = time_loop([&] { k::matmul_tn_omp(a.data(), g.data(), d2.data(), m, p, n, false); }, 8);
        report("matmul_tn 256", flops, ts2, to2,
               std::memcmp(d1.data(), d2.data(), d1.size() * sizeof(float)) == 0);
    }

    {
        const int rows = 4096, cols = 128;
        const auto x = random_vec(static_cast<size_t>(rows) * cols, 6);
        std::vector<float> y1(x.size()), y2(x.size());
        const double flops = 4.0 * rows * cols;  // rough op count per element
        const double ts = time_loop([&] { k::softmax_rows_serial(x.data(), y1.data(), rows, cols); }, 20);
        const double to = time_loop([&] { k::softmax_rows_omp(x.data(), y2.data(), rows, cols); }, 20);
        report("softmax 4096x128", flops, ts, to,
               std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);

        const auto gain = random_vec(cols, 7);
        const auto bias = random_vec(cols, 8);
        const double ts2 = time_loop([&] { k::layer_norm_rows_serial(x.data(), gain.data(), bias.data(), 1e-5f, y1.data(), rows, cols); }, 20);
        const double to2 = time_loop([&] { k::layer_norm_rows_omp(x.data(), gain.data(), bias.data(), 1e-5f, y2.data(), rows, cols); }, 20);
        report("layernorm 4096x128", flops, ts2, to2,
               std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
    }

    {
        const size_t n = 1 << 22;
        const auto a = random_vec(n, 9);
        const auto b = random_vec(n, 10);
        std::vector<float> o1(n), o2(n);
        const double ts = time_loop([&] { k::vec_add_serial(a.data(), b.data(), o1.data(), n); }, 20);
        const double to = time_loop([&] { k::vec_add_omp(a.data(), b.data(), o2.data(), n); }, 20);
        report("vec_add 4M", static_cast<double>(n), ts, to,
               std::memcmp(o1.data(), o2.data(), n * sizeof(float)) == 0);
    }
    return 0;
}
