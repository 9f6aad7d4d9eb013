// SPDX-License-Identifier: Apache-2.0
// Serial reference vs OpenMP kernels. Prints one row per case:
//   case  size  serial_ms  parallel_ms  speedup  identical
#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "mlnet/frontend.hpp"
#include "mlnet/kernels.hpp"

using namespace mlnet;

namespace {

// Best of `reps` wall-clock runs, in milliseconds.
double time_ms(const std::function<void()>& fn, int reps) {
  double best = 1e300;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void row(const char* name, const char* size, double serial, double parallel, bool same) {
  std::printf("%-12s %-14s %10.3f %12.3f %8.2f  %s\n", name, size, serial, parallel, serial / parallel, same ? "yes" : "NO");
}

using GemmFn = void (*)(kernels::GemmDims, const double*, const double*, double*);

void bench_gemm(const char* name, GemmFn serial, GemmFn parallel, std::size_t n, int reps) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> a(n * n), b(n * n);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  std::vector<double> cs(n * n), cp(n * n);
  const kernels::GemmDims d{n, n, n};
  const double ts = time_ms([&] { std::fill(cs.begin(), cs.end(), 0.0); serial(d, a.data(), b.data(), cs.data()); }, reps);
  const double tp = time_ms([&] { std::fill(cp.begin(), cp.end(), 0.0); parallel(d, a.data(), b.data(), cp.data()); }, reps);
  char size[32];
  std::snprintf(size, sizeof size, "%zux%zux%zu", n, n, n);
  row(name, size, ts, tp, std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);
}

void bench_featurize(double seconds, int reps) {
  FrontendConfig cfg;
  Waveform w;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0, 0.05);
  const auto n = static_cast<std::size_t>(seconds * cfg.sample_rate);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples.push_back(0.3 * std::sin(2 * std::numbers::pi * 300 * double(i) / cfg.sample_rate) + noise(rng));
  }
  FeatureSequence fs, fp;
  const double ts = time_ms([&] { fs = featurize_serial(w, cfg); }, reps);
  const double tp = time_ms([&] { fp = featurize(w, cfg); }, reps);
  char size[32];
  std::snprintf(size, sizeof size, "%.0f s audio", seconds);
  row("featurize", size, ts, tp, fs.frames == fp.frames);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
  std::printf("threads: %d, best of %d runs\n", omp_get_max_threads(), reps);
  std::printf("%-12s %-14s %10s %12s %8s  %s\n", "case", "size", "serial_ms", "parallel_ms", "speedup", "identical");
  for (std::size_t n : {64, 128, 256, 512}) {
    bench_gemm("gemm_nn", kernels::gemm_nn_serial<double>, kernels::gemm_nn_parallel<double>, n, reps);
    bench_gemm("gemm_tn", kernels::gemm_tn_serial<double>, kernels::gemm_tn_parallel<double>, n, reps);
    bench_gemm("gemm_nt", kernels::gemm_nt_serial<double>, kernels::gemm_nt_parallel<double>, n, reps);
  }
  for (double s : {1.0, 10.0, 60.0}) bench_featurize(s, reps);
  return 0;
}
