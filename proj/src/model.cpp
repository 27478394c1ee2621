#include "daregram/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "daregram/error.hpp"
#include "daregram/format.hpp"
#include "daregram/rng.hpp"

namespace daregram {
namespace {

MatrixXd activate(const MatrixXd& x, Activation a) {
  switch (a) {
    case Activation::linear:
      return x;
    case Activation::tanh:
      return x.array().tanh().matrix();
    case Activation::relu:
      return x.cwiseMax(0.0);
  }
  return x;
}

NodeId record_activation(Tape& tape, NodeId x, Activation a) {
  switch (a) {
    case Activation::linear:
      return x;
    case Activation::tanh:
      return tape.tanh(x);
    case Activation::relu:
      return tape.relu(x);
  }
  return x;
}

std::string layer_name(std::size_t i, const char* part) {
  return "encoder." + std::to_string(i) + "." + part;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear:
      return "linear";
    case Activation::tanh:
      return "tanh";
    case Activation::relu:
      return "relu";
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "linear") return Activation::linear;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ContractError("unknown activation '" + std::string(name) + "'");
}

Index ModelParams::input_dim() const {
  return encoder.empty() ? head_weight.rows() : encoder.front().weight.rows();
}

Index ModelParams::feature_dim() const {
  return encoder.empty() ? head_weight.rows() : encoder.back().weight.cols();
}

void ModelParams::validate() const {
  Index width = input_dim();
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const Layer& l = encoder[i];
    if (l.weight.rows() != width)
      throw ContractError("model: layer " + std::to_string(i) + " expects input width " +
                          std::to_string(l.weight.rows()) + ", chain provides " +
                          std::to_string(width));
    if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols())
      throw ContractError("model: layer " + std::to_string(i) + " bias shape mismatch");
    width = l.weight.cols();
  }
  if (head_weight.rows() != width)
    throw ContractError("model: head expects " + std::to_string(head_weight.rows()) +
                        " features, encoder provides " + std::to_string(width));
  if (head_bias.rows() != 1 || head_bias.cols() != head_weight.cols())
    throw ContractError("model: head bias shape mismatch");
  for (const auto& [name, m] : blocks())
    if (!m->allFinite()) throw InvalidInputError("model: parameter " + name + " is not finite");
}

std::vector<std::pair<std::string, const MatrixXd*>> ModelParams::blocks() const {
  std::vector<std::pair<std::string, const MatrixXd*>> out;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    out.emplace_back(layer_name(i, "weight"), &encoder[i].weight);
    out.emplace_back(layer_name(i, "bias"), &encoder[i].bias);
  }
  out.emplace_back("head.weight", &head_weight);
  out.emplace_back("head.bias", &head_bias);
  return out;
}

std::vector<std::pair<std::string, MatrixXd*>> ModelParams::blocks() {
  std::vector<std::pair<std::string, MatrixXd*>> out;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    out.emplace_back(layer_name(i, "weight"), &encoder[i].weight);
    out.emplace_back(layer_name(i, "bias"), &encoder[i].bias);
  }
  out.emplace_back("head.weight", &head_weight);
  out.emplace_back("head.bias", &head_bias);
  return out;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.input_dim < 1 || cfg.n_outputs < 1) throw ContractError("model: empty dimensions");
  CounterRng rng(seed, 0x1417);
  auto uniform = [&](Index fan_in, Index fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    MatrixXd w(fan_in, fan_out);
    for (Index i = 0; i < fan_in; ++i)
      for (Index j = 0; j < fan_out; ++j) w(i, j) = (2.0 * rng.uniform() - 1.0) * a;
    return w;
  };
  ModelParams p;
  Index width = cfg.input_dim;
  for (Index w : cfg.widths) {
    if (w < 1) throw ContractError("model: layer widths must be positive");
    p.encoder.push_back(Layer{uniform(width, w), MatrixXd::Zero(1, w), cfg.activation});
    width = w;
  }
  p.head_weight = uniform(width, cfg.n_outputs);
  p.head_bias = MatrixXd::Zero(1, cfg.n_outputs);
  p.sigmoid_head = cfg.sigmoid_head;
  return p;
}

MatrixXd encode(const ModelParams& params, const MatrixXd& X) {
  if (X.cols() != params.input_dim())
    throw ContractError("encode: input has " + std::to_string(X.cols()) + " columns, model expects " +
                        std::to_string(params.input_dim()));
  MatrixXd h = X;
  for (const Layer& l : params.encoder) {
    MatrixXd pre = h * l.weight;
    pre.rowwise() += l.bias.row(0);
    h = activate(pre, l.activation);
  }
  return h;
}

MatrixXd predict(const ModelParams& params, const MatrixXd& Z) {
  if (Z.cols() != params.head_weight.rows())
    throw ContractError("predict: features have " + std::to_string(Z.cols()) +
                        " columns, head expects " + std::to_string(params.head_weight.rows()));
  MatrixXd y = Z * params.head_weight;
  y.rowwise() += params.head_bias.row(0);
  if (params.sigmoid_head) y = (1.0 / (1.0 + (-y.array()).exp())).matrix();
  return y;
}

double mse_loss(const MatrixXd& pred, const MatrixXd& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw ContractError("mse_loss: shape mismatch");
  if (pred.rows() == 0) throw ContractError("mse_loss: empty batch");
  return (pred - label).squaredNorm() / static_cast<double>(pred.rows());
}

NodeId ModelLeaves::get(const std::string& name) const {
  for (const auto& [n, id] : blocks)
    if (n == name) return id;
  throw ContractError("model: no parameter block '" + name + "'");
}

ModelLeaves register_params(Tape& tape, const ModelParams& params) {
  ModelLeaves out;
  for (const auto& [name, m] : params.blocks()) out.blocks.emplace_back(name, tape.leaf(name, *m));
  return out;
}

NodeId record_encode(Tape& tape, const ModelParams& params, const ModelLeaves& leaves, NodeId x) {
  if (tape.value(x).cols() != params.input_dim())
    throw ContractError("encode: input width does not match the first layer");
  NodeId h = x;
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    const NodeId pre = tape.add_row_broadcast(
        tape.matmul(h, leaves.get(layer_name(i, "weight"))), leaves.get(layer_name(i, "bias")));
    h = record_activation(tape, pre, params.encoder[i].activation);
  }
  return h;
}

NodeId record_predict(Tape& tape, const ModelParams& params, const ModelLeaves& leaves, NodeId z) {
  const NodeId y = tape.add_row_broadcast(tape.matmul(z, leaves.get("head.weight")),
                                          leaves.get("head.bias"));
  return params.sigmoid_head ? tape.sigmoid(y) : y;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  params.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open '" + path.string() + "'");
  out << "daregram-checkpoint 1\n";
  out << "sigmoid_head " << (params.sigmoid_head ? 1 : 0) << '\n';
  out << "layers " << params.encoder.size() << '\n';
  for (std::size_t i = 0; i < params.encoder.size(); ++i)
    out << "activation " << i << ' ' << to_string(params.encoder[i].activation) << '\n';
  for (const auto& [name, m] : params.blocks()) {
    out << "tensor " << name << ' ' << m->rows() << ' ' << m->cols() << '\n';
    for (Index r = 0; r < m->rows(); ++r) {
      for (Index c = 0; c < m->cols(); ++c) out << (c ? " " : "") << format_double((*m)(r, c));
      out << '\n';
    }
  }
  out << "end\n";
  if (!out) throw IoError("save_checkpoint: write failed for '" + path.string() + "'");
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open '" + path.string() + "'");
  long line_no = 0;
  std::string line;
  auto next = [&]() {
    if (!std::getline(in, line)) throw ParseError("unexpected end of checkpoint", line_no + 1);
    ++line_no;
    return std::istringstream(line);
  };
  auto expect_word = [&](std::istringstream& ss, const std::string& word) {
    std::string w;
    if (!(ss >> w) || w != word) throw ParseError("expected '" + word + "'", line_no);
  };

  ModelParams p;
  {
    auto ss = next();
    expect_word(ss, "daregram-checkpoint");
    int version = 0;
    if (!(ss >> version) || version != 1) throw ParseError("unsupported checkpoint version", line_no);
  }
  {
    auto ss = next();
    expect_word(ss, "sigmoid_head");
    int v = 0;
    if (!(ss >> v)) throw ParseError("bad sigmoid_head", line_no);
    p.sigmoid_head = v != 0;
  }
  std::size_t layers = 0;
  {
    auto ss = next();
    expect_word(ss, "layers");
    if (!(ss >> layers)) throw ParseError("bad layer count", line_no);
  }
  p.encoder.resize(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    auto ss = next();
    expect_word(ss, "activation");
    std::size_t idx = 0;
    std::string act;
    if (!(ss >> idx >> act) || idx != i) throw ParseError("bad activation line", line_no);
    try {
      p.encoder[i].activation = activation_from_string(act);
    } catch (const ContractError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  for (const auto& [name, m] : p.blocks()) {
    auto ss = next();
    expect_word(ss, "tensor");
    std::string got;
    Index rows = 0;
    Index cols = 0;
    if (!(ss >> got >> rows >> cols) || got != name || rows < 0 || cols < 0)
      throw ParseError("expected tensor header for '" + name + "'", line_no);
    m->resize(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      auto row = next();
      for (Index c = 0; c < cols; ++c) {
        std::string cell;
        if (!(row >> cell)) throw ParseError("short row in tensor '" + name + "'", line_no);
        const auto v = parse_double(cell);
        if (!v) throw ParseError("non-numeric value '" + cell + "'", line_no);
        (*m)(r, c) = *v;
      }
    }
  }
  {
    auto ss = next();
    expect_word(ss, "end");
  }
  p.validate();
  return p;
}

}  // namespace daregram
