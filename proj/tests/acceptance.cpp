// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "commands.hpp"
#include "daregram/alignment.hpp"
#include "daregram/gradcheck.hpp"
#include "daregram/toy_study.hpp"
#include "daregram/trainer.hpp"
#include "test_util.hpp"

using namespace daregram;
using daregram::testing::max_abs;
using daregram::testing::random_matrix;
using daregram::testing::random_psd;
using daregram::testing::temp_dir;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

double max_abs_ld(const MatrixXld& m) { return static_cast<double>(m.cwiseAbs().maxCoeff()); }

// A_k is rebuilt from the computed eigenpairs and all products are formed in
// extended precision, so that only the error of the returned pseudo-inverse is
// measured.
Outcome moore_penrose() {
  double worst = 0.0;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = sym_eig(random_psd(8, 1000 + seed));
    for (Index k = 1; k <= s.numerical_rank(); ++k) {
      const MatrixXld vk = s.basis.leftCols(k).cast<long double>();
      const MatrixXld a =
          vk * s.eigenvalues.head(k).cast<long double>().asDiagonal() * vk.transpose();
      const MatrixXld p = pinv_truncated(s, k).cast<long double>();
      const MatrixXld ap = a * p;
      const MatrixXld pa = p * a;
      worst = std::max({worst, max_abs_ld(ap * a - a), max_abs_ld(pa * p - p),
                        max_abs_ld(ap.transpose() - ap), max_abs_ld(pa.transpose() - pa)});
      ++checked;
    }
  }
  return {worst <= 1e-8, fmt("%.0f truncations, max entry error %.3g (tol 1e-8)", checked, worst)};
}

Outcome spectrum_consistency() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (const auto& [r, c] : {std::pair<Index, Index>{6, 10}, {10, 6}}) {
      const MatrixXd z = random_matrix(r, c, 2000 + seed, static_cast<std::uint64_t>(r));
      const VectorXd lambda = sym_eig(gram(z)).eigenvalues;
      VectorXd ours = VectorXd::Zero(c);
      ours.head(svd(z).singulars.size()) = svd(z).singulars.cwiseAbs2();
      VectorXd oracle = VectorXd::Zero(c);
      const VectorXd sv = Eigen::JacobiSVD<MatrixXd>(z).singularValues();
      oracle.head(sv.size()) = sv.cwiseAbs2();
      const double scale = oracle(0);
      worst = std::max({worst, (lambda - ours).cwiseAbs().maxCoeff() / scale,
                        (lambda - oracle).cwiseAbs().maxCoeff() / scale});
    }
  }
  return {worst <= 1e-8, fmt("max relative error %.3g over 100 matrices (tol 1e-8)", worst)};
}

Outcome gradient_oracle() {
  const std::vector<std::pair<Index, Index>> shapes{{4, 8}, {6, 10}, {5, 5}, {8, 8}, {16, 16},
                                                    {12, 6}, {36, 16}, {20, 4}, {3, 6}, {10, 3}};
  double worst = 0.0;
  int lt = 0, eq = 0, gt = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    GradcheckOptions opt;
    opt.seed = i;
    opt.b = shapes[i].first;
    opt.p = shapes[i].second;
    worst = std::max(worst, pipeline_gradcheck(opt).max_error);
    lt += opt.b < opt.p;
    eq += opt.b == opt.p;
    gt += opt.b > opt.p;
  }
  const bool covered = lt > 0 && eq > 0 && gt > 0;
  return {covered && worst < 1e-3,
          fmt("10 shapes (b<p: %.0f, b=p: %.0f, b>p: %.0f), max relative error %.3g (tol 1e-3)", lt,
              eq, gt, worst)};
}

Outcome loss_identities() {
  AlignmentConfig cfg;
  double self_max = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MatrixXd z = random_matrix(20, 6, 3000 + seed);
    const AlignmentLoss l = daregram_loss(z, z, cfg);
    self_max = std::max({self_max, l.l_cos, l.l_scale});
  }

  AlignmentConfig bare = cfg;
  bare.prepend_intercept = false;
  double scaled_cos = 0.0, min_scaled_scale = INFINITY;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MatrixXd z = random_matrix(20, 6, 3100 + seed);
    for (double c : {0.5, 2.0, 10.0}) {
      const AlignmentLoss l = daregram_loss(z, c * z, bare);
      scaled_cos = std::max(scaled_cos, l.l_cos);
      min_scaled_scale = std::min(min_scaled_scale, l.l_scale);
    }
  }

  bool ranges = true;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Index b = 4 + static_cast<Index>(seed % 30);
    const MatrixXd zs = random_matrix(b, 6, 4000 + seed, 1);
    const MatrixXd zt = 1.5 * random_matrix(b, 6, 4000 + seed, 2).array() + 0.3;
    const AlignmentLoss l = daregram_loss(zs, zt, cfg);
    ranges = ranges && l.l_cos >= 0.0 && l.l_cos <= 2.0 && l.l_scale >= 0.0;
  }
  const bool ok = self_max <= 1e-9 && scaled_cos < 1e-9 && min_scaled_scale > 0.0 && ranges;
  return {ok, fmt("self %.3g, l_cos(Z,cZ) %.3g, min l_scale(Z,cZ) %.3g, ranges ", self_max,
                  scaled_cos, min_scaled_scale) +
                  (ranges ? "ok" : "violated")};
}

/// Gradient descent on 0.5 ||Z b - Y||^2 from zero.
MatrixXd gradient_descent_ols(const MatrixXd& z, const MatrixXd& y) {
  const MatrixXd g = z.transpose() * z;
  const MatrixXd zy = z.transpose() * y;
  const double step = 1.0 / Eigen::SelfAdjointEigenSolver<MatrixXd>(g).eigenvalues().maxCoeff();
  MatrixXd beta = MatrixXd::Zero(z.cols(), y.cols());
  for (int it = 0; it < 200000; ++it) {
    const MatrixXd grad = g * beta - zy;
    beta -= step * grad;
    if (grad.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return beta;
}

/// Minimizer of a convex scalar function given its derivative, by bisection on
/// the sign of the derivative over [lo, hi].
double bisect_min(const std::function<double(double)>& slope, double lo, double hi) {
  for (int i = 0; i < 200 && hi - lo > 0; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (slope(mid) > 0)
      hi = mid;
    else
      lo = mid;
  }
  return 0.5 * (lo + hi);
}

/// Rank-1 Z = u v^T: fit along v first, then shrink the null-space part one
/// coordinate at a time.
VectorXd brute_force_min_norm(const MatrixXd& z, const VectorXd& y) {
  Eigen::JacobiSVD<MatrixXd> dec(z, Eigen::ComputeFullV);
  const VectorXd v = dec.matrixV().col(0);
  const MatrixXd null = dec.matrixV().rightCols(z.cols() - 1);
  const VectorXd zv = z * v;
  const double t = bisect_min([&](double s) { return zv.dot(s * zv - y); }, -1e3, 1e3);
  VectorXd w = VectorXd::Constant(null.cols(), 0.7);
  for (Index j = 0; j < w.size(); ++j) {
    w(j) = bisect_min(
        [&](double s) {
          VectorXd ww = w;
          ww(j) = s;
          return null.col(j).dot(t * v + null * ww);
        },
        -1e3, 1e3);
  }
  return t * v + null * w;
}

Outcome ols_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MatrixXd z = random_matrix(30, 5, 5000 + seed, 1);
    const MatrixXd y = random_matrix(30, 2, 5000 + seed, 2);
    worst = std::max(worst, max_abs(ols_solve(z, y) - gradient_descent_ols(z, y)));
  }
  double rank1 = 0.0;
  MatrixXd ex(2, 2);
  ex << 1, 1, 2, 2;
  VectorXd ey(2);
  ey << 1, 2;
  rank1 = max_abs(ols_solve(ex, ey) - brute_force_min_norm(ex, ey));
  rank1 = std::max(rank1, max_abs(ols_solve(ex, ey) - Eigen::Vector2d(0.5, 0.5)));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixXd z = random_matrix(6, 1, 5100 + seed, 1) * random_matrix(1, 4, 5100 + seed, 2);
    const VectorXd y = random_matrix(6, 1, 5100 + seed, 3);
    rank1 = std::max(rank1, max_abs(ols_solve(z, y) - brute_force_min_norm(z, y)));
  }
  return {worst <= 1e-5 && rank1 <= 1e-8,
          fmt("full rank max diff %.3g (tol 1e-5), rank-1 min-norm max diff %.3g (tol 1e-8)", worst,
              rank1)};
}

Outcome fig3() {
  const ToyStudy s = run_toy_study(20, fig3_shift_spec, kFig3Samples, kFig3Dim, AlignmentConfig{});
  return {s.median_inverse_gram > s.median_raw,
          fmt("median inverse-Gram mismatch %.4g vs raw %.4g", s.median_inverse_gram, s.median_raw)};
}

// Benchmark runs shared by the end-to-end criteria.
std::map<Method, std::vector<RunReport>> g_runs;

void run_benchmark(Method m) {
  if (g_runs.count(m)) return;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const RegressionTask task = gen_regression_task(kBenchmarkSamples, kBenchmarkSamples,
                                                    kBenchmarkDim, benchmark_shift_spec(3 + 100 * s));
    TrainConfig c;
    c.method = m;
    c.seed = s;
    g_runs[m].push_back(train(c, task.source, task.target));
  }
}

double median_of(Method m, double FinalMetrics::*field) {
  std::vector<double> v;
  for (const RunReport& r : g_runs.at(m)) v.push_back(r.final.*field);
  return median(v);
}

Outcome end_to_end() {
  run_benchmark(Method::source_only);
  run_benchmark(Method::daregram);
  const double dt = median_of(Method::daregram, &FinalMetrics::target_mae);
  const double st = median_of(Method::source_only, &FinalMetrics::target_mae);
  const double ds = median_of(Method::daregram, &FinalMetrics::source_mae);
  const double ss = median_of(Method::source_only, &FinalMetrics::source_mae);
  const double gain = 1.0 - dt / st;
  const double degrade = ds / ss - 1.0;
  return {gain >= 0.10 && degrade < 0.20,
          fmt("target MAE %.4f vs %.4f (gain %.1f%%, need >= 10%%), source degrade %.1f%% (need < 20%%)",
              dt, st, 100 * gain, 100 * degrade)};
}

Outcome ablation_ordering() {
  for (Method m : {Method::source_only, Method::daregram, Method::gram_angle,
                   Method::truncated_gram_angle, Method::scale_only})
    run_benchmark(m);
  const double dare = median_of(Method::daregram, &FinalMetrics::target_mae);
  const double base = median_of(Method::source_only, &FinalMetrics::target_mae);
  bool ok = true;
  std::string detail = fmt("daregram %.4f", dare);
  for (Method m : {Method::gram_angle, Method::truncated_gram_angle, Method::scale_only}) {
    const double v = median_of(m, &FinalMetrics::target_mae);
    ok = ok && dare < v;
    detail += ", " + to_string(m) + fmt(" %.4f", v);
  }
  detail += fmt(", source_only %.4f", base);
  return {ok, detail};
}

Outcome batch_regime() {
  const RegressionTask task = gen_regression_task(kBenchmarkSamples, kBenchmarkSamples,
                                                  kBenchmarkDim, benchmark_shift_spec());
  TrainConfig base;
  base.model.widths = {16, 16};
  const std::vector<double> sizes{8, 16, 32, 64};
  const auto entries = sweep(base, SweepAxis::batch_size, sizes, task.source, task.target);
  bool finite = true;
  double worst_angle = 0.0;
  for (const SweepEntry& e : entries) {
    if (!e.report) {
      finite = false;
      continue;
    }
    for (const IterationRecord& r : e.report->records)
      finite = finite && std::isfinite(r.total) && std::isfinite(r.l_cos) && std::isfinite(r.l_scale);
    if (e.report->config.batch_size >= 16) {
      const AlignmentDiagnostics& d = e.report->final.diagnostics;
      if (d.raw_principal_angles.size() != 16) worst_angle = INFINITY;
      else worst_angle = std::max(worst_angle, d.max_raw_angle());
    }
  }

  const auto dir = temp_dir("acceptance_sweep");
  std::ostringstream out, err;
  const int code = cli::run_cli({"sweep", "--axis", "batch_size", "--values", "8,16,32,64",
                                 "--widths", "16,16", "--output.dir", dir.string()},
                                out, err);
  return {finite && code == 0 && worst_angle < 1e-6,
          std::string("losses ") + (finite ? "finite" : "non-finite") +
              fmt(", cli exit %.0f, max raw principal angle at b >= p %.3g (tol 1e-6)", code,
                  worst_angle)};
}

Outcome schedule_and_optimizer() {
  TrainConfig c;
  double worst = 0.0;
  for (long p : {0L, 1L, 1000L, 10000L}) {
    const double expected = 1e-2 * std::pow(1.0 + 1e-4 * static_cast<double>(p), -0.75);
    worst = std::max(worst, std::abs(lr_at(c, p) - expected) / expected);
  }
  MatrixXd theta = MatrixXd::Constant(1, 1, 1.0);
  MatrixXd v = MatrixXd::Zero(1, 1);
  sgd_step(theta, MatrixXd::Constant(1, 1, 1.0), v, 0.1, 0.9, 1e-3);
  const double v_hand = 0.9 * 0.0 + (1.0 + 1e-3 * 1.0);
  const double theta_hand = 1.0 - 0.1 * v_hand;
  const bool exact = v(0, 0) == v_hand && theta(0, 0) == theta_hand;
  const bool decimals = std::abs(v(0, 0) - 1.001) < 1e-15 && std::abs(theta(0, 0) - 0.8999) < 1e-15;
  return {worst <= 2 * std::numeric_limits<double>::epsilon() && exact && decimals,
          fmt("lr_at max relative error %.3g, sgd_step v = %.17g, theta = %.17g", worst, v(0, 0),
              theta(0, 0))};
}

Outcome determinism_and_io() {
  const RegressionTask task = gen_regression_task(kBenchmarkSamples, kBenchmarkSamples,
                                                  kBenchmarkDim, benchmark_shift_spec());
  TrainConfig c;
  c.iterations = 500;
  const auto dir = temp_dir("acceptance_io");
  write_run_log(train(c, task.source, task.target), dir / "a.csv");
  write_run_log(train(c, task.source, task.target), dir / "b.csv");
  const auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const std::string a = slurp(dir / "a.csv");
  const bool log_same = !a.empty() && a == slurp(dir / "b.csv");
  save_domain(task.target, dir / "target.csv");
  const DomainSample back = load_domain(dir / "target.csv");
  const bool round_trip = back.features == task.target.features && back.labels == task.target.labels;
  return {log_same && round_trip,
          std::string("run log ") + (log_same ? "byte-identical" : "differs") + ", domain CSV " +
              (round_trip ? "bit-exact" : "differs")};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  Outcome (*check)();
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "Moore-Penrose suite", 5, moore_penrose},
      {2, "spectrum consistency", 5, spectrum_consistency},
      {3, "gradient oracle", 60, gradient_oracle},
      {4, "loss identities", 10, loss_identities},
      {5, "OLS equivalence", 30, ols_equivalence},
      {6, "toy mismatch study", 30, fig3},
      {7, "end-to-end adaptation", 600, end_to_end},
      {8, "ablation ordering", 1800, ablation_ordering},
      {9, "batch size regime", 900, batch_regime},
      {10, "schedule and optimizer", 1, schedule_and_optimizer},
      {11, "determinism and I/O", 10, determinism_and_io},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_seconds;
    const bool pass = o.ok && in_time;
    failures += !pass;
    std::printf("criterion %2d %-24s %s  %s; %.2f s (limit %.0f s)\n", c.id, c.name,
                pass ? "PASS" : "FAIL", o.detail.c_str(), secs, c.limit_seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
