#pragma once

// Small MLP encoder z = h(x) followed by a linear regression head
// y = g(z) = z W + b (optionally squashed by a sigmoid).

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "daregram/linalg.hpp"
#include "daregram/tape.hpp"

namespace daregram {

enum class Activation { linear, tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct Layer {
  MatrixXd weight;  // in x out
  MatrixXd bias;    // 1 x out
  Activation activation = Activation::tanh;
};

struct ModelParams {
  std::vector<Layer> encoder;
  MatrixXd head_weight;  // p x n_outputs
  MatrixXd head_bias;    // 1 x n_outputs
  bool sigmoid_head = true;

  Index input_dim() const;
  Index feature_dim() const;
  Index n_outputs() const { return head_weight.cols(); }

  /// Layer chaining, head shape, finiteness.
  void validate() const;

  /// Parameter blocks in a fixed order: encoder.<i>.weight, encoder.<i>.bias, head.weight, head.bias.
  std::vector<std::pair<std::string, const MatrixXd*>> blocks() const;
  std::vector<std::pair<std::string, MatrixXd*>> blocks();
};

struct ModelConfig {
  Index input_dim = 8;
  /// Encoder output widths; the last one is the feature dimension p.
  std::vector<Index> widths{16, 16};
  Activation activation = Activation::tanh;
  Index n_outputs = 2;
  bool sigmoid_head = true;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

MatrixXd encode(const ModelParams& params, const MatrixXd& X);
MatrixXd predict(const ModelParams& params, const MatrixXd& Z);

/// (1/b) sum_i ||pred_i - label_i||^2.
double mse_loss(const MatrixXd& pred, const MatrixXd& label);

/// Leaves registered for every parameter block, same order as ModelParams::blocks().
struct ModelLeaves {
  std::vector<std::pair<std::string, NodeId>> blocks;
  NodeId get(const std::string& name) const;
};

ModelLeaves register_params(Tape& tape, const ModelParams& params);
NodeId record_encode(Tape& tape, const ModelParams& params, const ModelLeaves& leaves, NodeId x);
NodeId record_predict(Tape& tape, const ModelParams& params, const ModelLeaves& leaves, NodeId z);

/// Text checkpoint: named tensors with shape headers, values in shortest
/// round-trip decimal form.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace daregram
