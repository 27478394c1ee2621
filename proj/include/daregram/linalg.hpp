#pragma once

// Dense linear algebra used by the alignment objective: Gram construction,
// cyclic-Jacobi symmetric eigendecomposition, one-sided Jacobi SVD and the
// rank-k truncated Moore-Penrose pseudo-inverse of a PSD matrix.
//
// All routines are pure and deterministic: identical inputs give bit-identical
// outputs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "daregram/error.hpp"

namespace daregram {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;
using Index = Eigen::Index;

/// Relative eigenvalue clamp: eigenvalues with |lambda| <= kEigTolerance * lambda_max become 0.
inline constexpr double kEigTolerance = 1e-12;
/// Maximum absolute asymmetry accepted by sym_eig.
inline constexpr double kSymmetryTolerance = 1e-9;
inline constexpr int kMaxJacobiSweeps = 100;

/// Eigendecomposition of a symmetric (usually PSD Gram) matrix.
/// Eigenvalues are sorted descending; basis columns are the eigenvectors with
/// their largest-magnitude entry made nonnegative.
template <typename Scalar>
struct GramSpectrum {
  Vector<Scalar> eigenvalues;
  Matrix<Scalar> basis;
  Index source_dim = 0;

  Scalar tolerance() const {
    if (eigenvalues.size() == 0) return Scalar(0);
    return Scalar(kEigTolerance) * std::max(eigenvalues(0), Scalar(0));
  }

  /// Number of eigenvalues strictly above the clamp tolerance.
  Index numerical_rank() const {
    const Scalar tol = tolerance();
    Index r = 0;
    for (Index i = 0; i < eigenvalues.size(); ++i)
      if (eigenvalues(i) > tol) ++r;
    return r;
  }
};

template <typename Scalar>
struct SvdResult {
  Matrix<Scalar> U;
  Vector<Scalar> singulars;
  Matrix<Scalar> V;
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (!m.allFinite())
    throw InvalidInputError(std::string(what) + ": input contains NaN or Inf");
}

// Flip each column so that its first entry of largest magnitude is >= 0.
// Columns of `partner` (if non-null) are flipped alongside.
template <typename Scalar>
void canonicalize_signs(Matrix<Scalar>& basis, Matrix<Scalar>* partner) {
  for (Index j = 0; j < basis.cols(); ++j) {
    Index arg = 0;
    Scalar best = Scalar(-1);
    for (Index i = 0; i < basis.rows(); ++i) {
      const Scalar a = std::abs(basis(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (basis(arg, j) < Scalar(0)) {
      basis.col(j) = -basis.col(j);
      if (partner != nullptr && j < partner->cols()) partner->col(j) = -partner->col(j);
    }
  }
}

// Indices that sort `values` descending, ties kept in original order.
template <typename Scalar>
std::vector<Index> descending_order(const Vector<Scalar>& values) {
  std::vector<Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return values(a) > values(b); });
  return order;
}

// Rows sorted lexicographically; the Gram product over the sorted rows is
// independent of the input row order, bit for bit.
template <typename Scalar>
Matrix<Scalar> sorted_rows(const Matrix<Scalar>& Z) {
  std::vector<Index> order(static_cast<std::size_t>(Z.rows()));
  std::iota(order.begin(), order.end(), Index(0));
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index j = 0; j < Z.cols(); ++j) {
      if (Z(a, j) < Z(b, j)) return true;
      if (Z(b, j) < Z(a, j)) return false;
    }
    return false;
  });
  Matrix<Scalar> out(Z.rows(), Z.cols());
  for (Index i = 0; i < Z.rows(); ++i) out.row(i) = Z.row(order[static_cast<std::size_t>(i)]);
  return out;
}

// Extend the first `filled` orthonormal columns of Q to a full orthonormal set
// by Gram-Schmidt against the standard basis.
template <typename Scalar>
void complete_orthonormal(Matrix<Scalar>& Q, Index filled) {
  Index next_unit = 0;
  for (Index j = filled; j < Q.cols(); ++j) {
    for (;;) {
      if (next_unit >= Q.rows())
        throw ConvergenceError("svd: could not complete orthonormal basis");
      Vector<Scalar> v = Vector<Scalar>::Unit(Q.rows(), next_unit++);
      for (int pass = 0; pass < 2; ++pass)
        for (Index c = 0; c < j; ++c) v -= Q.col(c).dot(v) * Q.col(c);
      const Scalar n = v.norm();
      if (n > Scalar(0.5)) {
        Q.col(j) = v / n;
        break;
      }
    }
  }
}

}  // namespace detail

/// Gram matrix Z^T Z. Exactly symmetric and invariant (bitwise) under any
/// permutation of the rows of Z.
template <typename Scalar>
Matrix<Scalar> gram(const Matrix<Scalar>& Z) {
  detail::require_finite(Z, "gram");
  const Matrix<Scalar> S = detail::sorted_rows(Z);
  Matrix<Scalar> G = S.transpose() * S;
  const Matrix<Scalar> Gt = G.transpose();
  return (G + Gt) * Scalar(0.5);
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
template <typename Scalar>
GramSpectrum<Scalar> sym_eig(const Matrix<Scalar>& G) {
  if (G.rows() != G.cols()) throw InvalidInputError("sym_eig: matrix is not square");
  detail::require_finite(G, "sym_eig");
  const Index n = G.rows();
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (std::abs(G(i, j) - G(j, i)) > Scalar(kSymmetryTolerance))
        throw InvalidInputError("sym_eig: matrix is not symmetric at (" + std::to_string(i) +
                                ", " + std::to_string(j) + ")");

  Matrix<Scalar> A = (G + G.transpose()) * Scalar(0.5);
  Matrix<Scalar> V = Matrix<Scalar>::Identity(n, n);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  const Scalar norm = A.norm();

  bool converged = (n <= 1 || norm == Scalar(0));
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    Scalar off = 0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (std::sqrt(off) <= eps * norm) {
      converged = true;
      break;
    }
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const Scalar apq = A(p, q);
        if (apq == Scalar(0)) continue;
        const Scalar app = A(p, p);
        const Scalar aqq = A(q, q);
        // Off-diagonal entry negligible against both diagonal entries.
        if (sweep > 3 &&
            std::abs(apq) <= Scalar(1e-2) * eps * std::min(std::abs(app), std::abs(aqq))) {
          A(p, q) = A(q, p) = Scalar(0);
          continue;
        }
        const Scalar theta = (aqq - app) / (Scalar(2) * apq);
        const Scalar t = (theta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
        const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
        const Scalar s = t * c;
        for (Index k = 0; k < n; ++k) {
          const Scalar akp = A(k, p);
          const Scalar akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const Scalar apk = A(p, k);
          const Scalar aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        A(p, q) = A(q, p) = Scalar(0);
        for (Index k = 0; k < n; ++k) {
          const Scalar vkp = V(k, p);
          const Scalar vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged) {
    Scalar off = 0;
    for (Index p = 0; p < n; ++p)
      for (Index q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (std::sqrt(off) > eps * norm)
      throw ConvergenceError("sym_eig: Jacobi iteration did not converge in " +
                             std::to_string(kMaxJacobiSweeps) + " sweeps");
  }

  Vector<Scalar> raw = A.diagonal();
  const auto order = detail::descending_order(raw);
  GramSpectrum<Scalar> out;
  out.source_dim = n;
  out.eigenvalues.resize(n);
  out.basis.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    out.eigenvalues(i) = raw(src);
    out.basis.col(i) = V.col(src);
  }
  const Scalar tol = out.tolerance();
  for (Index i = 0; i < n; ++i)
    if (std::abs(out.eigenvalues(i)) <= tol) out.eigenvalues(i) = Scalar(0);
  detail::canonicalize_signs<Scalar>(out.basis, nullptr);
  return out;
}

/// Thin SVD Z = U diag(s) V^T by one-sided (Hestenes) Jacobi.
/// For a b x p input, U is b x r, V is p x r with r = min(b, p).
template <typename Scalar>
SvdResult<Scalar> svd(const Matrix<Scalar>& Z) {
  detail::require_finite(Z, "svd");
  if (Z.rows() < Z.cols()) {
    SvdResult<Scalar> t = svd<Scalar>(Matrix<Scalar>(Z.transpose()));
    return SvdResult<Scalar>{std::move(t.V), std::move(t.singulars), std::move(t.U)};
  }
  const Index m = Z.rows();
  const Index n = Z.cols();
  Matrix<Scalar> W = Z;
  Matrix<Scalar> V = Matrix<Scalar>::Identity(n, n);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();

  bool converged = (n <= 1);
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    bool rotated = false;
    for (Index p = 0; p < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const Scalar alpha = W.col(p).squaredNorm();
        const Scalar beta = W.col(q).squaredNorm();
        const Scalar gamma = W.col(p).dot(W.col(q));
        if (gamma == Scalar(0) || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Index k = 0; k < m; ++k) {
          const Scalar wp = W(k, p);
          const Scalar wq = W(k, q);
          W(k, p) = c * wp - s * wq;
          W(k, q) = s * wp + c * wq;
        }
        for (Index k = 0; k < n; ++k) {
          const Scalar vp = V(k, p);
          const Scalar vq = V(k, q);
          V(k, p) = c * vp - s * vq;
          V(k, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) converged = true;
  }
  if (!converged)
    throw ConvergenceError("svd: one-sided Jacobi did not converge in " +
                           std::to_string(kMaxJacobiSweeps) + " sweeps");

  Vector<Scalar> norms(n);
  for (Index j = 0; j < n; ++j) norms(j) = W.col(j).norm();
  const auto order = detail::descending_order(norms);

  SvdResult<Scalar> out;
  out.singulars.resize(n);
  out.U = Matrix<Scalar>::Zero(m, n);
  out.V.resize(n, n);
  const Scalar smax = n > 0 ? norms(order[0]) : Scalar(0);
  const Scalar cutoff = smax * eps * Scalar(std::max(m, n));
  Index filled = 0;
  for (Index i = 0; i < n; ++i) {
    const Index src = order[static_cast<std::size_t>(i)];
    out.singulars(i) = norms(src);
    out.V.col(i) = V.col(src);
    if (norms(src) > cutoff && norms(src) > Scalar(0)) {
      out.U.col(i) = W.col(src) / norms(src);
      filled = i + 1;
    }
  }
  detail::complete_orthonormal(out.U, filled);
  detail::canonicalize_signs<Scalar>(out.V, &out.U);
  return out;
}

/// Rank-k truncated pseudo-inverse V diag(1/l_1, ..., 1/l_k, 0, ...) V^T.
template <typename Scalar>
Matrix<Scalar> pinv_truncated(const GramSpectrum<Scalar>& spec, Index k) {
  const Index rank = spec.numerical_rank();
  if (k < 1 || k > rank)
    throw RankError("pinv_truncated: k = " + std::to_string(k) + " outside [1, " +
                    std::to_string(rank) + "]");
  const auto Vk = spec.basis.leftCols(k);
  const Vector<Scalar> inv = spec.eigenvalues.head(k).cwiseInverse();
  const Matrix<Scalar> P = Vk * inv.asDiagonal() * Vk.transpose();
  return (P + P.transpose()) * Scalar(0.5);
}

/// Rank-k truncation V_k diag(l_1..l_k) V_k^T of the decomposed matrix itself.
template <typename Scalar>
Matrix<Scalar> truncated_reconstruction(const GramSpectrum<Scalar>& spec, Index k) {
  if (k < 1 || k > spec.eigenvalues.size())
    throw RankError("truncated_reconstruction: k = " + std::to_string(k) + " out of range");
  const auto Vk = spec.basis.leftCols(k);
  const Matrix<Scalar> P = Vk * spec.eigenvalues.head(k).asDiagonal() * Vk.transpose();
  return (P + P.transpose()) * Scalar(0.5);
}

/// [1 | Z]: prepends an all-ones column.
template <typename Scalar>
Matrix<Scalar> prepend_ones(const Matrix<Scalar>& Z) {
  Matrix<Scalar> out(Z.rows(), Z.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(Z.cols()) = Z;
  return out;
}

/// Principal angles (radians, ascending) between the row spaces of A and B.
/// Row spaces are taken at numerical rank; small angles are resolved through
/// their sines so that coincident subspaces give angles at roundoff level.
template <typename Scalar>
Vector<Scalar> principal_angles(const Matrix<Scalar>& A, const Matrix<Scalar>& B) {
  if (A.cols() != B.cols())
    throw ContractError("principal_angles: feature dimensions differ");
  auto basis_of = [](const Matrix<Scalar>& M) {
    SvdResult<Scalar> s = svd<Scalar>(M);
    const Scalar smax = s.singulars.size() > 0 ? s.singulars(0) : Scalar(0);
    Index r = 0;
    for (Index i = 0; i < s.singulars.size(); ++i)
      if (s.singulars(i) > smax * Scalar(1e-10) && s.singulars(i) > Scalar(0)) ++r;
    return Matrix<Scalar>(s.V.leftCols(r));
  };
  const Matrix<Scalar> Qa = basis_of(A);
  const Matrix<Scalar> Qb = basis_of(B);
  const Index r = std::min(Qa.cols(), Qb.cols());
  Vector<Scalar> angles(r);
  if (r == 0) return angles;
  const Matrix<Scalar> C = Qa.transpose() * Qb;
  const Vector<Scalar> cosines = svd<Scalar>(C).singulars;
  // Component of the smaller basis outside the larger subspace.
  const bool a_small = Qa.cols() <= Qb.cols();
  const Matrix<Scalar>& Qs = a_small ? Qa : Qb;
  const Matrix<Scalar>& Ql = a_small ? Qb : Qa;
  const Matrix<Scalar> R = Qs - Ql * (Ql.transpose() * Qs);
  const Vector<Scalar> sines = svd<Scalar>(R).singulars;  // descending
  const Scalar half = Scalar(1) / std::sqrt(Scalar(2));
  for (Index i = 0; i < r; ++i) {
    const Scalar c = std::min(cosines(i), Scalar(1));
    // i-th largest cosine pairs with the i-th smallest sine.
    const Scalar s = std::min(sines(r - 1 - i), Scalar(1));
    angles(i) = (c > half) ? std::asin(s) : std::acos(c);
  }
  return angles;
}

}  // namespace daregram
