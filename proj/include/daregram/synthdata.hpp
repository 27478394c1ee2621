#pragma once

// Synthetic source/target domains with controlled covariate shift, label
// scaling and the CSV dump format for domain samples.
//
// CSV schema: header `f0,...,f{d-1},y0,...,y{Nr-1}`, one sample per line,
// '.' decimal separator, values written in shortest round-trip form.

#include <array>
#include <cstdint>
#include <filesystem>

#include "daregram/linalg.hpp"

namespace daregram {

/// Target inputs are Z' * diag(scale_factor) * R(rotation) + mean_shift with
/// Z' standard Gaussian; R is a Givens rotation in `rotation_plane`.
struct ShiftSpec {
  VectorXd mean_shift;
  VectorXd scale_factor;
  double rotation_angle = 0.0;  // radians
  std::array<Index, 2> rotation_plane{0, 1};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate(Index d) const;

  /// Zero shift, unit scale, no rotation, no noise.
  static ShiftSpec identity(Index d, std::uint64_t seed = 0);
};

/// Whether the target base draw reuses the source draw.
enum class Pairing { independent, paired };

struct DomainPair {
  MatrixXd source;
  MatrixXd target;
};

struct DomainSample {
  MatrixXd features;
  MatrixXd labels;
  /// Labels must not be used for training (target domain).
  bool labels_evaluation_only = false;
};

/// Label-generating structure shared by both domains of a regression task.
struct TaskSpec {
  Index n_outputs = 2;
  /// Leading input dims the labels depend on; the rest are nuisance dims.
  Index signal_dims = 4;
  /// Standard deviation of the nuisance dims in the base draw (both domains).
  double nuisance_scale = 0.1;
  /// Label range from source and target together instead of source only.
  bool pooled_label_range = false;

  void validate(Index d) const;
};

struct RegressionTask {
  DomainSample source;
  DomainSample target;
  VectorXd label_lo;
  VectorXd label_hi;
  MatrixXd true_weight;  // d x n_outputs
  VectorXd true_bias;
};

/// Givens rotation by `angle` in the (i, j) plane.
MatrixXd givens_rotation(Index d, Index i, Index j, double angle);

DomainPair gen_toy_pair(Index n, Index d, const ShiftSpec& spec,
                        Pairing pairing = Pairing::independent);

/// y = sigmoid(x^T w* + b*) + noise with w* supported on the signal dims;
/// labels scaled to [0, 1] with the source range and clipped.
RegressionTask gen_regression_task(Index n_source, Index n_target, Index d,
                                   const ShiftSpec& spec, const TaskSpec& task = {});

/// (Y - lo) / (hi - lo) per output column.
MatrixXd scale_labels(const MatrixXd& Y, const VectorXd& lo, const VectorXd& hi);

void save_domain(const DomainSample& sample, const std::filesystem::path& path);
DomainSample load_domain(const std::filesystem::path& path);

// Pinned specifications.
inline constexpr Index kFig3Samples = 100;
inline constexpr Index kFig3Dim = 2;
/// Two 2-D Gaussians with slightly different mean and variance.
ShiftSpec fig3_shift_spec(std::uint64_t seed);

inline constexpr Index kBenchmarkDim = 8;
inline constexpr Index kBenchmarkSamples = 2000;
/// d = 8; nuisance dims 4..7 shifted by 0.5 each (|shift| = 1), scaled by 1.5,
/// rotated 15 degrees in the (4, 5) plane; noise 0.01.
ShiftSpec benchmark_shift_spec(std::uint64_t seed = 3);

}  // namespace daregram
