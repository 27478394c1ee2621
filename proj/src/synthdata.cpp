#include "daregram/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "daregram/error.hpp"
#include "daregram/format.hpp"
#include "daregram/rng.hpp"

namespace daregram {
namespace {

enum Stream : std::uint64_t {
  kSourceBase = 0,
  kTargetBase = 1,
  kTruth = 2,
  kSourceNoise = 3,
  kTargetNoise = 4,
};

MatrixXd gaussian(Index rows, Index cols, CounterRng& rng) {
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

MatrixXd apply_shift(const MatrixXd& base, const ShiftSpec& spec) {
  const Index d = base.cols();
  const MatrixXd R = givens_rotation(d, spec.rotation_plane[0], spec.rotation_plane[1],
                                     spec.rotation_angle);
  MatrixXd out = (base * spec.scale_factor.asDiagonal()) * R;
  out.rowwise() += spec.mean_shift.transpose();
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

void ShiftSpec::validate(Index d) const {
  if (mean_shift.size() != d)
    throw ContractError("ShiftSpec: mean_shift has " + std::to_string(mean_shift.size()) +
                        " entries, expected " + std::to_string(d));
  if (scale_factor.size() != d)
    throw ContractError("ShiftSpec: scale_factor has " + std::to_string(scale_factor.size()) +
                        " entries, expected " + std::to_string(d));
  if (!mean_shift.allFinite()) throw ContractError("ShiftSpec: mean_shift not finite");
  for (Index i = 0; i < d; ++i)
    if (!(scale_factor(i) > 0.0) || !std::isfinite(scale_factor(i)))
      throw ContractError("ShiftSpec: scale factors must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ContractError("ShiftSpec: noise_sigma must be nonnegative");
  if (!std::isfinite(rotation_angle)) throw ContractError("ShiftSpec: rotation_angle not finite");
  const auto [i, j] = rotation_plane;
  if (i < 0 || j < 0 || i >= d || j >= d || i == j)
    throw ContractError("ShiftSpec: rotation_plane must name two distinct dims below " +
                        std::to_string(d));
}

ShiftSpec ShiftSpec::identity(Index d, std::uint64_t seed) {
  ShiftSpec s;
  s.mean_shift = VectorXd::Zero(d);
  s.scale_factor = VectorXd::Ones(d);
  s.seed = seed;
  return s;
}

void TaskSpec::validate(Index d) const {
  if (n_outputs < 1) throw ContractError("TaskSpec: n_outputs must be positive");
  if (signal_dims < 1 || signal_dims > d)
    throw ContractError("TaskSpec: signal_dims must lie in [1, d]");
  if (!(nuisance_scale > 0.0)) throw ContractError("TaskSpec: nuisance_scale must be positive");
}

MatrixXd givens_rotation(Index d, Index i, Index j, double angle) {
  MatrixXd R = MatrixXd::Identity(d, d);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  R(i, i) = c;
  R(j, j) = c;
  R(i, j) = -s;
  R(j, i) = s;
  return R;
}

DomainPair gen_toy_pair(Index n, Index d, const ShiftSpec& spec, Pairing pairing) {
  if (n < 2) throw ContractError("gen_toy_pair: n must be at least 2");
  if (d < 2) throw ContractError("gen_toy_pair: d must be at least 2");
  spec.validate(d);
  CounterRng source_rng(spec.seed, kSourceBase);
  DomainPair out;
  out.source = gaussian(n, d, source_rng);
  if (pairing == Pairing::paired) {
    out.target = apply_shift(out.source, spec);
  } else {
    CounterRng target_rng(spec.seed, kTargetBase);
    out.target = apply_shift(gaussian(n, d, target_rng), spec);
  }
  return out;
}

RegressionTask gen_regression_task(Index n_source, Index n_target, Index d,
                                   const ShiftSpec& spec, const TaskSpec& task) {
  if (n_source < 4 || n_target < 4)
    throw ContractError("gen_regression_task: sample counts must be at least 4");
  spec.validate(d);
  task.validate(d);

  VectorXd base_scale = VectorXd::Ones(d);
  base_scale.tail(d - task.signal_dims).setConstant(task.nuisance_scale);

  CounterRng source_rng(spec.seed, kSourceBase);
  CounterRng target_rng(spec.seed, kTargetBase);
  const MatrixXd xs = gaussian(n_source, d, source_rng) * base_scale.asDiagonal();
  const MatrixXd xt = apply_shift(gaussian(n_target, d, target_rng) * base_scale.asDiagonal(), spec);

  RegressionTask out;
  CounterRng truth_rng(spec.seed, kTruth);
  out.true_weight = gaussian(d, task.n_outputs, truth_rng) /
                    std::sqrt(static_cast<double>(task.signal_dims));
  out.true_weight.bottomRows(d - task.signal_dims).setZero();
  out.true_bias = gaussian(task.n_outputs, 1, truth_rng).col(0) * 0.2;

  auto raw_labels = [&](const MatrixXd& x, std::uint64_t stream) {
    MatrixXd logits = x * out.true_weight;
    logits.rowwise() += out.true_bias.transpose();
    MatrixXd y = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    if (spec.noise_sigma > 0.0) {
      CounterRng noise(spec.seed, stream);
      y += gaussian(y.rows(), y.cols(), noise) * spec.noise_sigma;
    }
    return y;
  };
  const MatrixXd ys = raw_labels(xs, kSourceNoise);
  const MatrixXd yt = raw_labels(xt, kTargetNoise);

  out.label_lo = ys.colwise().minCoeff().transpose();
  out.label_hi = ys.colwise().maxCoeff().transpose();
  if (task.pooled_label_range) {
    out.label_lo = out.label_lo.cwiseMin(yt.colwise().minCoeff().transpose());
    out.label_hi = out.label_hi.cwiseMax(yt.colwise().maxCoeff().transpose());
  }
  out.source.features = xs;
  out.source.labels = scale_labels(ys, out.label_lo, out.label_hi).cwiseMax(0.0).cwiseMin(1.0);
  out.target.features = xt;
  out.target.labels = scale_labels(yt, out.label_lo, out.label_hi).cwiseMax(0.0).cwiseMin(1.0);
  out.target.labels_evaluation_only = true;
  return out;
}

MatrixXd scale_labels(const MatrixXd& Y, const VectorXd& lo, const VectorXd& hi) {
  if (lo.size() != Y.cols() || hi.size() != Y.cols())
    throw ContractError("scale_labels: bounds must have one entry per output");
  for (Index j = 0; j < Y.cols(); ++j)
    if (!(hi(j) > lo(j)))
      throw ContractError("scale_labels: hi must exceed lo in output " + std::to_string(j));
  MatrixXd out(Y.rows(), Y.cols());
  for (Index i = 0; i < Y.rows(); ++i)
    for (Index j = 0; j < Y.cols(); ++j) out(i, j) = (Y(i, j) - lo(j)) / (hi(j) - lo(j));
  return out;
}

void save_domain(const DomainSample& sample, const std::filesystem::path& path) {
  if (sample.features.rows() != sample.labels.rows())
    throw ContractError("save_domain: features and labels have different row counts");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_domain: cannot open '" + path.string() + "' for writing");
  const Index d = sample.features.cols();
  const Index nr = sample.labels.cols();
  std::string line;
  for (Index j = 0; j < d; ++j) line += (j ? ",f" : "f") + std::to_string(j);
  for (Index j = 0; j < nr; ++j) line += ((d + j) ? ",y" : "y") + std::to_string(j);
  out << line << '\n';
  for (Index i = 0; i < sample.features.rows(); ++i) {
    line.clear();
    for (Index j = 0; j < d; ++j) {
      if (j) line += ',';
      line += format_double(sample.features(i, j));
    }
    for (Index j = 0; j < nr; ++j) {
      if (d + j) line += ',';
      line += format_double(sample.labels(i, j));
    }
    out << line << '\n';
  }
  if (!out) throw IoError("save_domain: write failed for '" + path.string() + "'");
}

DomainSample load_domain(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_domain: cannot open '" + path.string() + "'");
  std::string line;
  long line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw ParseError("no header", 1);

  const std::vector<std::string> header = split_csv(line);
  const long header_line = line_no;
  Index d = 0;
  while (d < static_cast<Index>(header.size()) &&
         header[static_cast<std::size_t>(d)] == "f" + std::to_string(d))
    ++d;
  Index nr = 0;
  for (std::size_t c = static_cast<std::size_t>(d); c < header.size(); ++c, ++nr) {
    const std::string expected = "y" + std::to_string(nr);
    if (header[c] != expected)
      throw ParseError("unexpected column '" + header[c] + "' in header, expected '" +
                           (nr == 0 ? "f" + std::to_string(d) + "' or '" + expected : expected) +
                           "'",
                       header_line);
  }
  if (d == 0) throw ParseError("missing feature column 'f0' in header", header_line);
  if (nr == 0) throw ParseError("missing label column 'y0' in header", header_line);

  std::vector<std::vector<double>> rows;
  while (next_line()) {
    const std::vector<std::string> cells = split_csv(line);
    if (cells.size() != header.size())
      throw ParseError("ragged row: expected " + std::to_string(header.size()) + " cells, found " +
                           std::to_string(cells.size()),
                       line_no);
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ParseError("non-numeric cell '" + cells[c] + "' in column '" + header[c] + "'",
                         line_no);
      row[c] = *v;
    }
    rows.push_back(std::move(row));
  }

  DomainSample out;
  const Index n = static_cast<Index>(rows.size());
  out.features.resize(n, d);
  out.labels.resize(n, nr);
  for (Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (Index j = 0; j < d; ++j) out.features(i, j) = row[static_cast<std::size_t>(j)];
    for (Index j = 0; j < nr; ++j) out.labels(i, j) = row[static_cast<std::size_t>(d + j)];
  }
  return out;
}

ShiftSpec fig3_shift_spec(std::uint64_t seed) {
  ShiftSpec s;
  s.mean_shift = VectorXd(kFig3Dim);
  s.mean_shift << 0.2, 0.1;
  s.scale_factor = VectorXd(kFig3Dim);
  s.scale_factor << 1.1, 0.9;
  s.seed = seed;
  return s;
}

ShiftSpec benchmark_shift_spec(std::uint64_t seed) {
  ShiftSpec s;
  s.mean_shift = VectorXd::Zero(kBenchmarkDim);
  s.mean_shift.tail(4).setConstant(0.5);
  s.scale_factor = VectorXd::Ones(kBenchmarkDim);
  s.scale_factor.tail(4).setConstant(1.5);
  s.rotation_angle = 15.0 * std::numbers::pi / 180.0;
  s.rotation_plane = {4, 5};
  s.noise_sigma = 0.01;
  s.seed = seed;
  return s;
}

}  // namespace daregram
