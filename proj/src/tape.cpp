#include "daregram/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace daregram {
namespace {

using Inputs = std::vector<const MatrixXd*>;

MatrixXd scalar_matrix(double v) {
  MatrixXd m(1, 1);
  m(0, 0) = v;
  return m;
}

void require_same_shape(const MatrixXd& a, const MatrixXd& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()));
}

MatrixXd symmetric_part(const MatrixXd& m) { return (m + m.transpose()) * 0.5; }

// Gap factor F_ij = (l_j - l_i) / ((l_j - l_i)^2 + eps), zero diagonal.
MatrixXd gap_factor(const VectorXd& lambda) {
  const Index n = lambda.size();
  MatrixXd F = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (i != j) {
        const double d = lambda(j) - lambda(i);
        F(i, j) = d / (d * d + kEigGapBroadening);
      }
  return F;
}

// Adjoint of a symmetric input given adjoints of its eigenvalues and eigenvectors.
MatrixXd eig_adjoint(const GramSpectrum<double>& spec, const VectorXd& lambda_bar,
                     const MatrixXd& basis_bar) {
  const MatrixXd& V = spec.basis;
  MatrixXd inner = gap_factor(spec.eigenvalues).cwiseProduct(V.transpose() * basis_bar);
  inner.diagonal() += lambda_bar;
  return symmetric_part(V * inner * V.transpose());
}

}  // namespace

NodeId Tape::push(std::string op, std::vector<NodeId> inputs, Rule rule) {
  Node n;
  n.op = std::move(op);
  std::vector<const MatrixXd*> values;
  for (NodeId id : inputs) {
    n.inputs.push_back(id.index);
    values.push_back(&node(id).value);
  }
  Evaluation e = rule(values);
  if (!e.value.allFinite())
    throw NumericError("tape: node #" + std::to_string(nodes_.size()) + " (" + n.op +
                       ") produced a non-finite value");
  n.value = std::move(e.value);
  n.backward = std::move(e.backward);
  n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("tape: unknown node id");
  return nodes_[id.index];
}

NodeId Tape::leaf(const std::string& name, MatrixXd value) {
  for (const Node& n : nodes_)
    if (n.is_leaf && n.leaf_name == name) throw ContractError("tape: duplicate leaf '" + name + "'");
  if (!value.allFinite()) throw InvalidInputError("tape: leaf '" + name + "' is not finite");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.leaf_name = name;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::constant(MatrixXd value) {
  if (!value.allFinite()) throw InvalidInputError("tape: constant is not finite");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return NodeId{nodes_.size() - 1};
}

const MatrixXd& Tape::value(NodeId id) const { return node(id).value; }

double Tape::scalar(NodeId id) const {
  const MatrixXd& v = value(id);
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("tape: node is not scalar");
  return v(0, 0);
}

const std::string& Tape::op(NodeId id) const { return node(id).op; }

std::vector<NodeId> Tape::inputs(NodeId id) const {
  std::vector<NodeId> out;
  for (std::size_t i : node(id).inputs) out.push_back(NodeId{i});
  return out;
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  return push("matmul", {a, b}, [](const Inputs& in) {
    const MatrixXd& A = *in[0];
    const MatrixXd& B = *in[1];
    if (A.cols() != B.rows()) throw ContractError("matmul: inner dimensions differ");
    return Evaluation{A * B, [A, B](const MatrixXd& g) {
                        return std::vector<MatrixXd>{g * B.transpose(), A.transpose() * g};
                      }};
  });
}

NodeId Tape::transpose(NodeId a) {
  return push("transpose", {a}, [](const Inputs& in) {
    return Evaluation{in[0]->transpose(),
                      [](const MatrixXd& g) { return std::vector<MatrixXd>{g.transpose()}; }};
  });
}

NodeId Tape::add(NodeId a, NodeId b) {
  return push("add", {a, b}, [](const Inputs& in) {
    require_same_shape(*in[0], *in[1], "add");
    return Evaluation{*in[0] + *in[1],
                      [](const MatrixXd& g) { return std::vector<MatrixXd>{g, g}; }};
  });
}

NodeId Tape::sub(NodeId a, NodeId b) {
  return push("sub", {a, b}, [](const Inputs& in) {
    require_same_shape(*in[0], *in[1], "sub");
    return Evaluation{*in[0] - *in[1],
                      [](const MatrixXd& g) { return std::vector<MatrixXd>{g, -g}; }};
  });
}

NodeId Tape::scale(NodeId a, double factor) {
  return push("scale", {a}, [factor](const Inputs& in) {
    return Evaluation{*in[0] * factor, [factor](const MatrixXd& g) {
                        return std::vector<MatrixXd>{g * factor};
                      }};
  });
}

NodeId Tape::add_row_broadcast(NodeId a, NodeId row) {
  return push("add_row_broadcast", {a, row}, [](const Inputs& in) {
    const MatrixXd& A = *in[0];
    const MatrixXd& r = *in[1];
    if (r.rows() != 1 || r.cols() != A.cols())
      throw ContractError("add_row_broadcast: bias must be 1 x " + std::to_string(A.cols()));
    MatrixXd out = A.rowwise() + r.row(0);
    return Evaluation{std::move(out), [](const MatrixXd& g) {
                        return std::vector<MatrixXd>{g, g.colwise().sum()};
                      }};
  });
}

NodeId Tape::tanh(NodeId a) {
  return push("tanh", {a}, [](const Inputs& in) {
    MatrixXd y = in[0]->array().tanh().matrix();
    return Evaluation{y, [y](const MatrixXd& g) {
                        return std::vector<MatrixXd>{
                            (g.array() * (1.0 - y.array().square())).matrix()};
                      }};
  });
}

NodeId Tape::relu(NodeId a) {
  return push("relu", {a}, [](const Inputs& in) {
    const MatrixXd x = *in[0];
    MatrixXd y = x.cwiseMax(0.0);
    return Evaluation{std::move(y), [x](const MatrixXd& g) {
                        return std::vector<MatrixXd>{
                            (g.array() * (x.array() > 0.0).cast<double>()).matrix()};
                      }};
  });
}

NodeId Tape::sigmoid(NodeId a) {
  return push("sigmoid", {a}, [](const Inputs& in) {
    MatrixXd y = (1.0 / (1.0 + (-in[0]->array()).exp())).matrix();
    return Evaluation{y, [y](const MatrixXd& g) {
                        return std::vector<MatrixXd>{
                            (g.array() * y.array() * (1.0 - y.array())).matrix()};
                      }};
  });
}

NodeId Tape::prepend_ones(NodeId a) {
  return push("prepend_ones", {a}, [](const Inputs& in) {
    const Index cols = in[0]->cols();
    return Evaluation{daregram::prepend_ones<double>(*in[0]), [cols](const MatrixXd& g) {
                        return std::vector<MatrixXd>{g.rightCols(cols)};
                      }};
  });
}

NodeId Tape::head_rows(NodeId a, Index k) {
  return push("head_rows", {a}, [k](const Inputs& in) {
    const MatrixXd& A = *in[0];
    if (k < 0 || k > A.rows()) throw ContractError("head_rows: k out of range");
    const Index rows = A.rows();
    const Index cols = A.cols();
    return Evaluation{A.topRows(k), [k, rows, cols](const MatrixXd& g) {
                        MatrixXd full = MatrixXd::Zero(rows, cols);
                        full.topRows(k) = g;
                        return std::vector<MatrixXd>{full};
                      }};
  });
}

NodeId Tape::sum(NodeId a) {
  return push("sum", {a}, [](const Inputs& in) {
    const Index r = in[0]->rows();
    const Index c = in[0]->cols();
    return Evaluation{scalar_matrix(in[0]->sum()), [r, c](const MatrixXd& g) {
                        return std::vector<MatrixXd>{MatrixXd::Constant(r, c, g(0, 0))};
                      }};
  });
}

NodeId Tape::sum_squares(NodeId a) {
  return push("sum_squares", {a}, [](const Inputs& in) {
    const MatrixXd x = *in[0];
    return Evaluation{scalar_matrix(x.squaredNorm()), [x](const MatrixXd& g) {
                        return std::vector<MatrixXd>{x * (2.0 * g(0, 0))};
                      }};
  });
}

NodeId Tape::trace(NodeId a) {
  return push("trace", {a}, [](const Inputs& in) {
    if (in[0]->rows() != in[0]->cols()) throw ContractError("trace: matrix is not square");
    const Index n = in[0]->rows();
    return Evaluation{scalar_matrix(in[0]->trace()), [n](const MatrixXd& g) {
                        return std::vector<MatrixXd>{MatrixXd::Identity(n, n) * g(0, 0)};
                      }};
  });
}

NodeId Tape::mse(NodeId pred, NodeId label) {
  return push("mse", {pred, label}, [](const Inputs& in) {
    require_same_shape(*in[0], *in[1], "mse");
    const MatrixXd diff = *in[0] - *in[1];
    const double b = static_cast<double>(diff.rows());
    return Evaluation{scalar_matrix(diff.squaredNorm() / b), [diff, b](const MatrixXd& g) {
                        return std::vector<MatrixXd>{diff * (2.0 * g(0, 0) / b), MatrixXd()};
                      }};
  });
}

NodeId Tape::l2_distance(NodeId a, NodeId b) {
  return push("l2_distance", {a, b}, [](const Inputs& in) {
    require_same_shape(*in[0], *in[1], "l2_distance");
    const MatrixXd diff = *in[0] - *in[1];
    const double d = diff.norm();
    return Evaluation{scalar_matrix(d), [diff, d](const MatrixXd& g) {
                        // Subgradient 0 at coincidence.
                        if (d == 0.0)
                          return std::vector<MatrixXd>{MatrixXd::Zero(diff.rows(), diff.cols()),
                                                       MatrixXd::Zero(diff.rows(), diff.cols())};
                        const MatrixXd u = diff * (g(0, 0) / d);
                        return std::vector<MatrixXd>{u, -u};
                      }};
  });
}

NodeId Tape::column_cosine_loss(NodeId a, NodeId b) {
  return push("column_cosine_loss", {a, b}, [](const Inputs& in) {
    const MatrixXd A = *in[0];
    const MatrixXd B = *in[1];
    require_same_shape(A, B, "column_cosine_loss");
    std::vector<Index> cols;
    std::vector<double> cosines;
    double total = 0.0;
    for (Index i = 0; i < A.cols(); ++i) {
      const double na = A.col(i).norm();
      const double nb = B.col(i).norm();
      if (na == 0.0 && nb == 0.0) continue;
      if (na == 0.0 || nb == 0.0)
        throw DegenerateColumnError("column_cosine_loss: column " + std::to_string(i) +
                                    " is zero in exactly one matrix");
      const double c = A.col(i).dot(B.col(i)) /
                       std::sqrt(A.col(i).dot(A.col(i)) * B.col(i).dot(B.col(i)));
      cols.push_back(i);
      cosines.push_back(c);
      total += std::abs(1.0 - c);
    }
    if (cols.empty()) throw DegenerateColumnError("column_cosine_loss: no evaluable column");
    const double count = static_cast<double>(cols.size());
    return Evaluation{scalar_matrix(total / count), [A, B, cols, cosines, count](const MatrixXd& g) {
                        MatrixXd ga = MatrixXd::Zero(A.rows(), A.cols());
                        MatrixXd gb = MatrixXd::Zero(B.rows(), B.cols());
                        for (std::size_t t = 0; t < cols.size(); ++t) {
                          const Index i = cols[t];
                          const double c = cosines[t];
                          const double da = (1.0 - c) >= 0.0 ? -1.0 : 1.0;
                          const double w = g(0, 0) * da / count;
                          const double na = A.col(i).norm();
                          const double nb = B.col(i).norm();
                          ga.col(i) = w * (B.col(i) / (na * nb) - c * A.col(i) / (na * na));
                          gb.col(i) = w * (A.col(i) / (na * nb) - c * B.col(i) / (nb * nb));
                        }
                        return std::vector<MatrixXd>{ga, gb};
                      }};
  });
}

NodeId Tape::gram(NodeId z) {
  return push("gram", {z}, [](const Inputs& in) {
    const MatrixXd Z = *in[0];
    return Evaluation{daregram::gram<double>(Z), [Z](const MatrixXd& g) {
                        return std::vector<MatrixXd>{Z * (g + g.transpose())};
                      }};
  });
}

NodeId Tape::eigenvalues(NodeId g) {
  return push("eigenvalues", {g}, [](const Inputs& in) {
    GramSpectrum<double> spec = sym_eig<double>(*in[0]);
    MatrixXd vals = spec.eigenvalues;
    return Evaluation{std::move(vals), [spec](const MatrixXd& gl) {
                        const MatrixXd& V = spec.basis;
                        return std::vector<MatrixXd>{
                            symmetric_part(V * VectorXd(gl.col(0)).asDiagonal() * V.transpose())};
                      }};
  });
}

NodeId Tape::eigenvectors(NodeId g) {
  return push("eigenvectors", {g}, [](const Inputs& in) {
    GramSpectrum<double> spec = sym_eig<double>(*in[0]);
    MatrixXd V = spec.basis;
    return Evaluation{std::move(V), [spec](const MatrixXd& gv) {
                        return std::vector<MatrixXd>{
                            eig_adjoint(spec, VectorXd::Zero(spec.eigenvalues.size()), gv)};
                      }};
  });
}

NodeId Tape::spectral(std::string op, NodeId g, Index k, bool inverse) {
  return push(std::move(op), {g}, [k, inverse](const Inputs& in) {
    GramSpectrum<double> spec = sym_eig<double>(*in[0]);
    MatrixXd P = inverse ? daregram::pinv_truncated(spec, k) : truncated_reconstruction(spec, k);
    return Evaluation{std::move(P), [spec, k, inverse](const MatrixXd& gp) {
                        // P = sum_{i<k} f(l_i) v_i v_i^T with f(l) = 1/l or l.
                        const Index n = spec.eigenvalues.size();
                        const MatrixXd& V = spec.basis;
                        const MatrixXd Ps = symmetric_part(gp);
                        VectorXd f = VectorXd::Zero(n);
                        VectorXd df = VectorXd::Zero(n);
                        for (Index i = 0; i < k; ++i) {
                          const double l = spec.eigenvalues(i);
                          f(i) = inverse ? 1.0 / l : l;
                          df(i) = inverse ? -1.0 / (l * l) : 1.0;
                        }
                        const MatrixXd PsV = Ps * V;
                        const MatrixXd basis_bar = 2.0 * PsV * f.asDiagonal();
                        VectorXd lambda_bar(n);
                        for (Index i = 0; i < n; ++i) lambda_bar(i) = df(i) * V.col(i).dot(PsV.col(i));
                        return std::vector<MatrixXd>{eig_adjoint(spec, lambda_bar, basis_bar)};
                      }};
  });
}

NodeId Tape::pinv_truncated(NodeId g, Index k) { return spectral("pinv_truncated", g, k, true); }

NodeId Tape::truncate_psd(NodeId g, Index k) { return spectral("truncate_psd", g, k, false); }

void Tape::inject_backward_fault(const std::string& op, double factor) {
  const bool present =
      std::any_of(nodes_.begin(), nodes_.end(), [&](const Node& n) { return n.op == op; });
  if (!present) throw ContractError("inject_backward_fault: no node with op '" + op + "'");
  faults_[op] = factor;
}

GradResult Tape::backward(NodeId loss) const {
  const Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1)
    throw ContractError("backward: loss node #" + std::to_string(loss.index) + " (" + root.op +
                        ") is not scalar");
  std::vector<MatrixXd> adjoint(nodes_.size());
  adjoint[loss.index] = MatrixXd::Ones(1, 1);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (adjoint[i].size() == 0 || !n.backward) continue;
    std::vector<MatrixXd> contrib = n.backward(adjoint[i]);
    const auto fault = faults_.find(n.op);
    for (std::size_t j = 0; j < contrib.size(); ++j) {
      MatrixXd& c = contrib[j];
      if (c.size() == 0) continue;
      if (fault != faults_.end()) c *= fault->second;
      if (!c.allFinite())
        throw NumericError("backward: non-finite adjoint from node #" + std::to_string(i) + " (" +
                           n.op + ")");
      MatrixXd& dst = adjoint[n.inputs[j]];
      if (dst.size() == 0)
        dst = c;
      else
        dst += c;
    }
  }
  GradResult out;
  out.loss_value = root.value(0, 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.is_leaf) continue;
    out.gradients[n.leaf_name] =
        adjoint[i].size() == 0 ? MatrixXd::Zero(n.value.rows(), n.value.cols()) : adjoint[i];
  }
  return out;
}

std::vector<MatrixXd> Tape::replay(const std::map<std::string, MatrixXd>& leaf_overrides) const {
  std::vector<MatrixXd> values(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.is_leaf) {
      const auto it = leaf_overrides.find(n.leaf_name);
      values[i] = it == leaf_overrides.end() ? n.value : it->second;
    } else if (!n.rule) {
      values[i] = n.value;
    } else {
      std::vector<const MatrixXd*> in;
      for (std::size_t j : n.inputs) in.push_back(&values[j]);
      values[i] = n.rule(in).value;
    }
  }
  return values;
}

MatrixXd fd_gradient(const std::function<double(const MatrixXd&)>& f, const MatrixXd& X,
                     double step) {
  if (!(step > 0.0)) throw ContractError("fd_gradient: step must be positive");
  MatrixXd grad(X.rows(), X.cols());
  MatrixXd probe = X;
  for (Index i = 0; i < X.rows(); ++i) {
    for (Index j = 0; j < X.cols(); ++j) {
      const double orig = probe(i, j);
      probe(i, j) = orig + step;
      const double up = f(probe);
      probe(i, j) = orig - step;
      const double down = f(probe);
      probe(i, j) = orig;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("fd_gradient: non-finite evaluation at entry (" + std::to_string(i) +
                           ", " + std::to_string(j) + ")");
      grad(i, j) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

double max_relative_error(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j) {
      const double x = a(i, j);
      const double y = b(i, j);
      const double denom = std::max({1.0, std::abs(x), std::abs(y)});
      worst = std::max(worst, std::abs(x - y) / denom);
    }
  return worst;
}

}  // namespace daregram
