#pragma once

// Finite-difference check of the full training objective
// mse + alpha_cos * l_cos + gamma_scale * l_scale with respect to every
// encoder and head parameter block.

#include <cstdint>
#include <string>
#include <vector>

#include "daregram/alignment.hpp"
#include "daregram/model.hpp"

namespace daregram {

inline constexpr double kGradcheckTolerance = 1e-3;

struct GradcheckOptions {
  std::uint64_t seed = 0;
  /// Feature dimension (encoder output width).
  Index p = 6;
  /// Batch size of each domain.
  Index b = 8;
  Index input_dim = 4;
  Index hidden = 5;
  Index n_outputs = 2;
  AlignmentConfig alignment{0.9, 1.0, 1e-3, true};
  AngleTarget angle_target = AngleTarget::inverse_gram;
  double step = 1e-5;
  /// Test hook: scale the backward output of this op by 1.5.
  std::string broken_op;
};

struct BlockError {
  std::string block;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<BlockError> blocks;
  double max_error = 0.0;
  double loss = 0.0;
  Index k = 0;

  bool passed(double tol = kGradcheckTolerance) const { return max_error < tol; }
};

GradcheckReport pipeline_gradcheck(const GradcheckOptions& opt);

}  // namespace daregram
