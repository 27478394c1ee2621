#pragma once

// Inverse-Gram alignment objective and the least-squares diagnostics behind it.
//
// For a feature batch Z (b x p) the aligned object is the rank-k truncated
// pseudo-inverse of the Gram matrix [1 | Z]^T [1 | Z] (intercept column on by
// default). The angle term compares the two pseudo-inverses column by column
// through their cosines; the scale term compares the top-k Gram eigenvalues.

#include <optional>
#include <vector>

#include "daregram/linalg.hpp"
#include "daregram/tape.hpp"

namespace daregram {

struct AlignmentConfig {
  /// Explained-variance threshold in (0, 1].
  double threshold_T = 0.9;
  double alpha_cos = 0.1;
  double gamma_scale = 1e-3;
  bool prepend_intercept = true;

  void validate() const;
};

struct RankSelection {
  Index k_source = 0;
  Index k_target = 0;
  Index k = 0;
};

struct InverseGramPair {
  MatrixXd source_pinv;
  MatrixXd target_pinv;
  GramSpectrum<double> source_spectrum;
  GramSpectrum<double> target_spectrum;
  RankSelection ranks;
};

struct AngleLoss {
  double l_cos = 0.0;
  /// Cosine per evaluated column.
  VectorXd cosines;
  /// Column index of each entry of `cosines`.
  std::vector<Index> columns;
};

struct AlignmentLoss {
  double l_cos = 0.0;
  double l_scale = 0.0;
  Index k_source = 0;
  Index k_target = 0;
  Index k = 0;
  VectorXd cosine_vector_M;

  /// alpha_cos * l_cos + gamma_scale * l_scale.
  double weighted(const AlignmentConfig& cfg) const {
    return cfg.alpha_cos * l_cos + cfg.gamma_scale * l_scale;
  }
};

struct OlsDiagnostic {
  MatrixXd beta_source;
  MatrixXd beta_target;
  double beta_gap = 0.0;
};

struct AlignmentDiagnostics {
  /// Mean |cos| between matched top-k Gram eigenvectors of the two domains.
  double principal_direction_cosine = 0.0;
  /// Mean column cosine of the two truncated inverse Grams.
  double inverse_gram_cosine = 0.0;
  /// Principal angles (radians, ascending) between the raw feature row spaces.
  VectorXd raw_principal_angles;
  /// Both batches span all of R^p, so every raw principal angle vanishes.
  bool raw_full_space = false;
  Index k = 0;

  double max_raw_angle() const {
    return raw_principal_angles.size() == 0 ? 0.0 : raw_principal_angles.maxCoeff();
  }
};

/// Smallest k per domain whose cumulative eigenvalue share exceeds T, and the
/// shared k = max(k_s, k_t), capped at the smaller numerical rank.
RankSelection select_k(const VectorXd& lambda_s, const VectorXd& lambda_t, double T);

InverseGramPair inverse_gram_pair(const MatrixXd& Zs, const MatrixXd& Zt,
                                  const AlignmentConfig& cfg,
                                  std::optional<Index> fixed_rank = std::nullopt);

AngleLoss angle_loss(const MatrixXd& source_pinv, const MatrixXd& target_pinv);

/// ||lambda_s[0:k] - lambda_t[0:k]||_2 / k.
double scale_loss(const VectorXd& lambda_s, const VectorXd& lambda_t, Index k);

AlignmentLoss daregram_loss(const MatrixXd& Zs, const MatrixXd& Zt, const AlignmentConfig& cfg,
                            std::optional<Index> fixed_rank = std::nullopt);

/// Minimum-norm least squares (Z^T Z)^+ Z^T Y at full numerical rank.
MatrixXd ols_solve(const MatrixXd& Z, const MatrixXd& Y);

OlsDiagnostic regressor_gap(const MatrixXd& Zs, const MatrixXd& Ys, const MatrixXd& Zt,
                            const MatrixXd& Yt, bool prepend_intercept = true);

AlignmentDiagnostics alignment_diagnostics(const MatrixXd& Zs, const MatrixXd& Zt,
                                           const AlignmentConfig& cfg);

/// Which pair of matrices the angle term compares.
enum class AngleTarget { inverse_gram, gram, truncated_gram };

struct AlignmentNodes {
  NodeId l_cos;
  NodeId l_scale;
  RankSelection ranks;
};

/// Records the angle and scale terms on a tape. The rank is selected from the
/// recorded eigenvalues (or taken from `fixed_rank`) and treated as constant.
AlignmentNodes record_alignment(Tape& tape, NodeId zs, NodeId zt, const AlignmentConfig& cfg,
                                AngleTarget target = AngleTarget::inverse_gram,
                                std::optional<Index> fixed_rank = std::nullopt);

}  // namespace daregram
