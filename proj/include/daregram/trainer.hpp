#pragma once

// SGD training loop for the source regression loss plus the alignment terms,
// with the ablation variants and hyperparameter sweeps.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "daregram/alignment.hpp"
#include "daregram/model.hpp"
#include "daregram/synthdata.hpp"

namespace daregram {

enum class Method { source_only, daregram, gram_angle, truncated_gram_angle, scale_only };

std::string to_string(Method m);
Method method_from_string(std::string_view name);

struct Schedule {
  double gamma = 1e-4;
  double power = 0.75;
};

struct TrainConfig {
  long iterations = 2000;
  Index batch_size = 36;
  double lr0 = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-3;
  Schedule schedule;
  Method method = Method::daregram;
  AlignmentConfig alignment;
  /// input_dim and n_outputs are taken from the data.
  ModelConfig model;
  std::uint64_t seed = 0;
  /// Draw the target batch with the source batch's indices.
  bool paired_sampler = false;

  void validate() const;
};

/// lr0 * (1 + gamma * p)^(-power).
double lr_at(const TrainConfig& cfg, long p);

/// v <- momentum * v + (g + weight_decay * theta); theta <- theta - lr * v.
void sgd_step(MatrixXd& theta, const MatrixXd& grad, MatrixXd& velocity, double lr,
              double momentum, double weight_decay);

/// Velocity blocks keyed like ModelParams::blocks().
using Velocity = std::map<std::string, MatrixXd>;

void sgd_step(ModelParams& params, const std::map<std::string, MatrixXd>& grads,
              Velocity& velocity, double lr, double momentum, double weight_decay);

struct IterationRecord {
  long iteration = 0;
  double lr = 0.0;
  double mse_source = 0.0;
  double l_cos = 0.0;
  double l_scale = 0.0;
  double total = 0.0;
  Index k = 0;
};

struct FinalMetrics {
  VectorXd target_mae_per_output;
  /// Sum over outputs.
  double target_mae = 0.0;
  VectorXd source_mae_per_output;
  double source_mae = 0.0;
  double beta_gap = 0.0;
  /// Computed on the first batch_size rows of each domain.
  AlignmentDiagnostics diagnostics;
};

struct RunReport {
  TrainConfig config;
  std::vector<IterationRecord> records;
  FinalMetrics final;
  /// Shared rank at the initial parameters on the first batch pair.
  Index k_init = 0;
  ModelParams params;
  double wall_seconds = 0.0;
};

/// Mean absolute error per output column.
VectorXd mae_per_output(const MatrixXd& pred, const MatrixXd& label);

/// Target labels are read only for the final metrics.
RunReport train(const TrainConfig& cfg, const DomainSample& source, const DomainSample& target);

enum class SweepAxis { batch_size, alpha_cos, gamma_scale, threshold_T };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(std::string_view name);

/// Copy of `base` with the axis set to `value`; throws ContractError if invalid.
TrainConfig with_axis_value(const TrainConfig& base, SweepAxis axis, double value);

struct SweepEntry {
  double value = 0.0;
  std::optional<RunReport> report;
  /// "ok" or "failed".
  std::string status;
  std::string error;
};

/// Worker count from DAREGRAM_THREADS, else the hardware concurrency.
unsigned sweep_threads();

std::vector<SweepEntry> sweep(const TrainConfig& base, SweepAxis axis,
                              const std::vector<double>& values, const DomainSample& source,
                              const DomainSample& target, unsigned threads = sweep_threads());

/// Columns: iteration,lr,mse_source,l_cos,l_scale,total,k.
void write_run_log(const RunReport& report, const std::filesystem::path& path);

/// Deterministic JSON except for the "timing" key.
std::string summary_json(const RunReport& report);

}  // namespace daregram
