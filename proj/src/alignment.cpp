#include "daregram/alignment.hpp"

#include <cmath>
#include <string>

namespace daregram {
namespace {

Index rank_of(const VectorXd& lambda) {
  if (lambda.size() == 0) return 0;
  const double tol = kEigTolerance * std::max(lambda(0), 0.0);
  Index r = 0;
  for (Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > tol) ++r;
  return r;
}

void check_spectrum(const VectorXd& lambda, const char* which) {
  for (Index i = 0; i < lambda.size(); ++i) {
    if (!std::isfinite(lambda(i)) || lambda(i) < 0.0)
      throw ContractError(std::string("select_k: ") + which + " eigenvalues must be nonnegative");
    if (i > 0 && lambda(i) > lambda(i - 1))
      throw ContractError(std::string("select_k: ") + which + " eigenvalues not sorted descending");
  }
  if (lambda.sum() <= 0.0 || rank_of(lambda) == 0)
    throw RankError(std::string("select_k: ") + which + " eigenvalues are all zero");
}

Index explained_variance_rank(const VectorXd& lambda, double T) {
  const double total = lambda.sum();
  double cum = 0.0;
  for (Index i = 0; i < lambda.size(); ++i) {
    cum += lambda(i);
    if (cum / total > T) return std::min(i + 1, rank_of(lambda));
  }
  return rank_of(lambda);
}

MatrixXd maybe_augment(const MatrixXd& Z, bool intercept) {
  return intercept ? prepend_ones<double>(Z) : Z;
}

void check_pair(const MatrixXd& Zs, const MatrixXd& Zt) {
  if (Zs.cols() != Zt.cols())
    throw ContractError("feature dimensions differ: " + std::to_string(Zs.cols()) + " vs " +
                        std::to_string(Zt.cols()));
  if (Zs.rows() < 2 || Zt.rows() < 2) throw ContractError("batch sizes must be at least 2");
}

}  // namespace

void AlignmentConfig::validate() const {
  if (!(threshold_T > 0.0 && threshold_T <= 1.0))
    throw ContractError("threshold_T must lie in (0, 1]");
  if (!(alpha_cos >= 0.0)) throw ContractError("alpha_cos must be nonnegative");
  if (!(gamma_scale >= 0.0)) throw ContractError("gamma_scale must be nonnegative");
}

RankSelection select_k(const VectorXd& lambda_s, const VectorXd& lambda_t, double T) {
  check_spectrum(lambda_s, "source");
  check_spectrum(lambda_t, "target");
  RankSelection r;
  r.k_source = explained_variance_rank(lambda_s, T);
  r.k_target = explained_variance_rank(lambda_t, T);
  r.k = std::min(std::max(r.k_source, r.k_target), std::min(rank_of(lambda_s), rank_of(lambda_t)));
  return r;
}

InverseGramPair inverse_gram_pair(const MatrixXd& Zs, const MatrixXd& Zt,
                                  const AlignmentConfig& cfg, std::optional<Index> fixed_rank) {
  cfg.validate();
  check_pair(Zs, Zt);
  InverseGramPair out;
  out.source_spectrum = sym_eig<double>(gram<double>(maybe_augment(Zs, cfg.prepend_intercept)));
  out.target_spectrum = sym_eig<double>(gram<double>(maybe_augment(Zt, cfg.prepend_intercept)));
  out.ranks = select_k(out.source_spectrum.eigenvalues, out.target_spectrum.eigenvalues,
                       cfg.threshold_T);
  if (fixed_rank) out.ranks.k = *fixed_rank;
  out.source_pinv = pinv_truncated(out.source_spectrum, out.ranks.k);
  out.target_pinv = pinv_truncated(out.target_spectrum, out.ranks.k);
  return out;
}

AngleLoss angle_loss(const MatrixXd& source_pinv, const MatrixXd& target_pinv) {
  if (source_pinv.rows() != target_pinv.rows() || source_pinv.cols() != target_pinv.cols() ||
      source_pinv.rows() != source_pinv.cols())
    throw ContractError("angle_loss: inputs must be square and equally shaped");
  std::vector<double> cos;
  AngleLoss out;
  double total = 0.0;
  for (Index i = 0; i < source_pinv.cols(); ++i) {
    const double ns = source_pinv.col(i).norm();
    const double nt = target_pinv.col(i).norm();
    if (ns == 0.0 && nt == 0.0) continue;
    if (ns == 0.0 || nt == 0.0)
      throw DegenerateColumnError("angle_loss: column " + std::to_string(i) +
                                  " is zero in exactly one matrix");
    const double c = source_pinv.col(i).dot(target_pinv.col(i)) /
                     std::sqrt(source_pinv.col(i).dot(source_pinv.col(i)) *
                               target_pinv.col(i).dot(target_pinv.col(i)));
    cos.push_back(c);
    out.columns.push_back(i);
    total += std::abs(1.0 - c);
  }
  if (cos.empty()) throw DegenerateColumnError("angle_loss: no evaluable column");
  out.cosines = Eigen::Map<const VectorXd>(cos.data(), static_cast<Index>(cos.size()));
  out.l_cos = total / static_cast<double>(cos.size());
  return out;
}

double scale_loss(const VectorXd& lambda_s, const VectorXd& lambda_t, Index k) {
  if (k <= 0) throw ContractError("scale_loss: k must be positive");
  if (lambda_s.size() < k || lambda_t.size() < k)
    throw ContractError("scale_loss: fewer than k eigenvalues");
  return (lambda_s.head(k) - lambda_t.head(k)).norm() / static_cast<double>(k);
}

AlignmentLoss daregram_loss(const MatrixXd& Zs, const MatrixXd& Zt, const AlignmentConfig& cfg,
                            std::optional<Index> fixed_rank) {
  const InverseGramPair pair = inverse_gram_pair(Zs, Zt, cfg, fixed_rank);
  const AngleLoss angle = angle_loss(pair.source_pinv, pair.target_pinv);
  AlignmentLoss out;
  out.l_cos = angle.l_cos;
  out.cosine_vector_M = angle.cosines;
  out.l_scale = scale_loss(pair.source_spectrum.eigenvalues, pair.target_spectrum.eigenvalues,
                           pair.ranks.k);
  out.k_source = pair.ranks.k_source;
  out.k_target = pair.ranks.k_target;
  out.k = pair.ranks.k;
  return out;
}

MatrixXd ols_solve(const MatrixXd& Z, const MatrixXd& Y) {
  if (Z.cols() < 1) throw ContractError("ols_solve: Z has no columns");
  if (Z.rows() != Y.rows())
    throw ContractError("ols_solve: row counts differ (" + std::to_string(Z.rows()) + " vs " +
                        std::to_string(Y.rows()) + ")");
  const GramSpectrum<double> spec = sym_eig<double>(gram<double>(Z));
  const Index r = spec.numerical_rank();
  if (r == 0) return MatrixXd::Zero(Z.cols(), Y.cols());
  return pinv_truncated(spec, r) * (Z.transpose() * Y);
}

OlsDiagnostic regressor_gap(const MatrixXd& Zs, const MatrixXd& Ys, const MatrixXd& Zt,
                            const MatrixXd& Yt, bool prepend_intercept) {
  if (Zs.cols() != Zt.cols() || Ys.cols() != Yt.cols())
    throw ContractError("regressor_gap: domains have different shapes");
  OlsDiagnostic out;
  out.beta_source = ols_solve(maybe_augment(Zs, prepend_intercept), Ys);
  out.beta_target = ols_solve(maybe_augment(Zt, prepend_intercept), Yt);
  out.beta_gap = (out.beta_source - out.beta_target).norm();
  return out;
}

AlignmentDiagnostics alignment_diagnostics(const MatrixXd& Zs, const MatrixXd& Zt,
                                           const AlignmentConfig& cfg) {
  const InverseGramPair pair = inverse_gram_pair(Zs, Zt, cfg);
  AlignmentDiagnostics out;
  out.k = pair.ranks.k;
  double dir = 0.0;
  for (Index i = 0; i < pair.ranks.k; ++i)
    dir += std::abs(pair.source_spectrum.basis.col(i).dot(pair.target_spectrum.basis.col(i)));
  out.principal_direction_cosine = dir / static_cast<double>(pair.ranks.k);
  out.inverse_gram_cosine = angle_loss(pair.source_pinv, pair.target_pinv).cosines.mean();
  out.raw_principal_angles = principal_angles<double>(Zs, Zt);
  out.raw_full_space = out.raw_principal_angles.size() == Zs.cols();
  return out;
}

AlignmentNodes record_alignment(Tape& tape, NodeId zs, NodeId zt, const AlignmentConfig& cfg,
                                AngleTarget target, std::optional<Index> fixed_rank) {
  cfg.validate();
  check_pair(tape.value(zs), tape.value(zt));
  const NodeId as = cfg.prepend_intercept ? tape.prepend_ones(zs) : zs;
  const NodeId at = cfg.prepend_intercept ? tape.prepend_ones(zt) : zt;
  const NodeId gs = tape.gram(as);
  const NodeId gt = tape.gram(at);
  const NodeId ls = tape.eigenvalues(gs);
  const NodeId lt = tape.eigenvalues(gt);

  AlignmentNodes out;
  out.ranks = select_k(VectorXd(tape.value(ls).col(0)), VectorXd(tape.value(lt).col(0)),
                       cfg.threshold_T);
  if (fixed_rank) out.ranks.k = *fixed_rank;
  const Index k = out.ranks.k;

  switch (target) {
    case AngleTarget::inverse_gram:
      out.l_cos = tape.column_cosine_loss(tape.pinv_truncated(gs, k), tape.pinv_truncated(gt, k));
      break;
    case AngleTarget::gram:
      out.l_cos = tape.column_cosine_loss(gs, gt);
      break;
    case AngleTarget::truncated_gram:
      out.l_cos = tape.column_cosine_loss(tape.truncate_psd(gs, k), tape.truncate_psd(gt, k));
      break;
  }
  out.l_scale = tape.scale(tape.l2_distance(tape.head_rows(ls, k), tape.head_rows(lt, k)),
                           1.0 / static_cast<double>(k));
  return out;
}

}  // namespace daregram
