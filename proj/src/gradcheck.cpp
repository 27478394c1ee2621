#include "daregram/gradcheck.hpp"

#include <algorithm>

#include "daregram/error.hpp"
#include "daregram/rng.hpp"

namespace daregram {

GradcheckReport pipeline_gradcheck(const GradcheckOptions& opt) {
  if (opt.p < 2 || opt.b < 2) throw ContractError("gradcheck: p and b must be >= 2");
  if (opt.input_dim < 1 || opt.hidden < 1 || opt.n_outputs < 1)
    throw ContractError("gradcheck: dimensions must be positive");
  opt.alignment.validate();

  CounterRng rng(opt.seed, 0x6c);
  auto gaussian = [&](Index r, Index c) {
    MatrixXd m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
  };
  const MatrixXd xs = gaussian(opt.b, opt.input_dim);
  const MatrixXd xt = 1.3 * gaussian(opt.b, opt.input_dim).array() + 0.4;
  MatrixXd ys(opt.b, opt.n_outputs);
  for (Index i = 0; i < ys.size(); ++i) ys.data()[i] = rng.uniform();

  ModelConfig mc;
  mc.input_dim = opt.input_dim;
  mc.widths = {opt.hidden, opt.p};
  mc.n_outputs = opt.n_outputs;
  const ModelParams params = init_params(mc, opt.seed);

  Tape tape;
  const ModelLeaves leaves = register_params(tape, params);
  const NodeId zs = record_encode(tape, params, leaves, tape.constant(xs));
  const NodeId zt = record_encode(tape, params, leaves, tape.constant(xt));
  const NodeId mse = tape.mse(record_predict(tape, params, leaves, zs), tape.constant(ys));
  const AlignmentNodes align = record_alignment(tape, zs, zt, opt.alignment, opt.angle_target);
  const NodeId loss = tape.add(
      tape.add(mse, tape.scale(align.l_cos, opt.alignment.alpha_cos)),
      tape.scale(align.l_scale, opt.alignment.gamma_scale));
  if (!opt.broken_op.empty()) tape.inject_backward_fault(opt.broken_op, 1.5);

  const GradResult analytic = tape.backward(loss);
  GradcheckReport report;
  report.loss = tape.scalar(loss);
  report.k = align.ranks.k;
  for (const auto& [name, value] : params.blocks()) {
    const auto f = [&, &name = name](const MatrixXd& x) {
      return tape.replay({{name, x}})[loss.index](0, 0);
    };
    const MatrixXd numeric = fd_gradient(f, *value, opt.step);
    const double err = max_relative_error(analytic.gradients.at(name), numeric);
    report.blocks.push_back({name, err});
    report.max_error = std::max(report.max_error, err);
  }
  return report;
}

}  // namespace daregram
