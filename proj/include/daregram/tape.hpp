#pragma once

// Reverse-mode gradient tape over dense double matrices.
//
// Every primitive records its output value, its inputs and a backward rule.
// Nodes are appended in evaluation order, so the node list is always a
// topological order. Scalars are 1x1 matrices; vectors are n x 1.

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "daregram/linalg.hpp"

namespace daregram {

struct NodeId {
  std::size_t index = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

struct GradResult {
  /// Gradient of the loss w.r.t. every registered leaf, keyed by leaf name.
  std::map<std::string, MatrixXd> gradients;
  double loss_value = 0.0;
};

/// Broadening of the eigenvector adjoint's gap factor
/// F_ij = (l_j - l_i) / ((l_j - l_i)^2 + eps).
inline constexpr double kEigGapBroadening = 1e-10;

class Tape {
 public:
  Tape() = default;

  /// Differentiable input. Names must be unique within the tape.
  NodeId leaf(const std::string& name, MatrixXd value);
  /// Non-differentiable input.
  NodeId constant(MatrixXd value);

  const MatrixXd& value(NodeId id) const;
  double scalar(NodeId id) const;
  const std::string& op(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::vector<NodeId> inputs(NodeId id) const;

  // Elementary algebra.
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  /// a + 1 * row, with row a 1 x cols(a) matrix.
  NodeId add_row_broadcast(NodeId a, NodeId row);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId prepend_ones(NodeId a);
  /// First k rows.
  NodeId head_rows(NodeId a, Index k);

  // Reductions to 1x1.
  NodeId sum(NodeId a);
  NodeId sum_squares(NodeId a);
  NodeId trace(NodeId a);
  /// (1/rows) * sum of squared differences; label is not differentiated.
  NodeId mse(NodeId pred, NodeId label);
  /// Euclidean distance between two equally shaped matrices.
  NodeId l2_distance(NodeId a, NodeId b);
  /// mean_i |1 - cos(A_i, B_i)| over columns; columns zero in both are skipped.
  NodeId column_cosine_loss(NodeId a, NodeId b);

  // Spectral primitives on symmetric inputs.
  NodeId gram(NodeId z);
  /// Eigenvalues (descending) as an n x 1 vector.
  NodeId eigenvalues(NodeId g);
  /// Eigenvector matrix (columns), sign convention of sym_eig.
  NodeId eigenvectors(NodeId g);
  /// V_k diag(1/l_1..1/l_k) V_k^T; k is held constant.
  NodeId pinv_truncated(NodeId g, Index k);
  /// V_k diag(l_1..l_k) V_k^T; k is held constant.
  NodeId truncate_psd(NodeId g, Index k);

  /// Reverse pass from a 1x1 node.
  GradResult backward(NodeId loss) const;

  /// Recompute every node from the leaves and constants, optionally replacing
  /// leaf values by name. Returns the value of every node.
  std::vector<MatrixXd> replay(const std::map<std::string, MatrixXd>& leaf_overrides = {}) const;

  /// Scale the adjoint emitted by every node with the given op name.
  /// Intended for gradient-checker self tests.
  void inject_backward_fault(const std::string& op, double factor);

 private:
  // Returns one adjoint contribution per input (empty matrix = no contribution).
  using Backward = std::function<std::vector<MatrixXd>(const MatrixXd& out_adjoint)>;
  struct Evaluation {
    MatrixXd value;
    Backward backward;
  };
  using Rule = std::function<Evaluation(const std::vector<const MatrixXd*>&)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    MatrixXd value;
    Rule rule;
    Backward backward;
    std::string leaf_name;
    bool is_leaf = false;
  };

  NodeId push(std::string op, std::vector<NodeId> inputs, Rule rule);
  NodeId spectral(std::string op, NodeId g, Index k, bool inverse);
  const Node& node(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, double> faults_;
};

/// Central finite-difference gradient (f(X + h e_ij) - f(X - h e_ij)) / 2h.
MatrixXd fd_gradient(const std::function<double(const MatrixXd&)>& f, const MatrixXd& X,
                     double step = 1e-5);

/// |a - b| / max(1, |a|, |b|), maximised over entries.
double max_relative_error(const MatrixXd& a, const MatrixXd& b);

}  // namespace daregram
