#include "daregram/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "daregram/error.hpp"
#include "daregram/format.hpp"
#include "daregram/rng.hpp"

namespace daregram {
namespace {

constexpr double kDivergenceLimit = 1e6;
constexpr std::uint64_t kSourceStream = 0x51;
constexpr std::uint64_t kTargetStream = 0x52;

MatrixXd gather_rows(const MatrixXd& m, const std::vector<Index>& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

std::vector<Index> draw_indices(CounterRng& rng, Index n, Index b) {
  std::vector<Index> idx(static_cast<std::size_t>(b));
  for (auto& i : idx) i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  return idx;
}

bool uses_angle(Method m) {
  return m == Method::daregram || m == Method::gram_angle || m == Method::truncated_gram_angle;
}

bool uses_scale(Method m) { return m == Method::daregram || m == Method::scale_only; }

AngleTarget angle_target(Method m) {
  switch (m) {
    case Method::gram_angle:
      return AngleTarget::gram;
    case Method::truncated_gram_angle:
      return AngleTarget::truncated_gram;
    default:
      return AngleTarget::inverse_gram;
  }
}

nlohmann::json vector_json(const VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

nlohmann::json config_json(const TrainConfig& c) {
  nlohmann::json widths = nlohmann::json::array();
  for (Index w : c.model.widths) widths.push_back(w);
  return {
      {"iterations", c.iterations},
      {"batch_size", c.batch_size},
      {"lr0", c.lr0},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"schedule_gamma", c.schedule.gamma},
      {"schedule_power", c.schedule.power},
      {"method", to_string(c.method)},
      {"seed", c.seed},
      {"paired_sampler", c.paired_sampler},
      {"threshold_T", c.alignment.threshold_T},
      {"alpha_cos", c.alignment.alpha_cos},
      {"gamma_scale", c.alignment.gamma_scale},
      {"prepend_intercept", c.alignment.prepend_intercept},
      {"widths", widths},
      {"activation", to_string(c.model.activation)},
      {"sigmoid_head", c.model.sigmoid_head},
  };
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::source_only:
      return "source_only";
    case Method::daregram:
      return "daregram";
    case Method::gram_angle:
      return "gram_angle";
    case Method::truncated_gram_angle:
      return "truncated_gram_angle";
    case Method::scale_only:
      return "scale_only";
  }
  return "daregram";
}

Method method_from_string(std::string_view name) {
  for (Method m : {Method::source_only, Method::daregram, Method::gram_angle,
                   Method::truncated_gram_angle, Method::scale_only})
    if (name == to_string(m)) return m;
  throw ContractError("unknown method '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (iterations < 1) throw ContractError("iterations must be >= 1");
  if (batch_size < 2) throw ContractError("batch_size must be >= 2");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ContractError("lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw ContractError("weight_decay must be nonnegative");
  if (!(schedule.gamma >= 0.0) || !std::isfinite(schedule.gamma))
    throw ContractError("schedule gamma must be nonnegative");
  if (!(schedule.power >= 0.0) || !std::isfinite(schedule.power))
    throw ContractError("schedule power must be nonnegative");
  if (model.widths.empty()) throw ContractError("widths must name at least one layer");
  for (Index w : model.widths)
    if (w < 1) throw ContractError("widths must be positive");
  alignment.validate();
}

double lr_at(const TrainConfig& cfg, long p) {
  if (p < 0) throw ContractError("lr_at: negative iteration");
  return cfg.lr0 * std::pow(1.0 + cfg.schedule.gamma * static_cast<double>(p), -cfg.schedule.power);
}

void sgd_step(MatrixXd& theta, const MatrixXd& grad, MatrixXd& velocity, double lr,
              double momentum, double weight_decay) {
  if (grad.rows() != theta.rows() || grad.cols() != theta.cols() ||
      velocity.rows() != theta.rows() || velocity.cols() != theta.cols())
    throw ContractError("sgd_step: shape mismatch");
  velocity = momentum * velocity + (grad + weight_decay * theta);
  theta -= lr * velocity;
}

void sgd_step(ModelParams& params, const std::map<std::string, MatrixXd>& grads,
              Velocity& velocity, double lr, double momentum, double weight_decay) {
  for (auto& [name, theta] : params.blocks()) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("sgd_step: no gradient for '" + name + "'");
    auto [v, inserted] = velocity.try_emplace(name, MatrixXd::Zero(theta->rows(), theta->cols()));
    sgd_step(*theta, g->second, v->second, lr, momentum, weight_decay);
  }
}

VectorXd mae_per_output(const MatrixXd& pred, const MatrixXd& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols())
    throw ContractError("mae: shape mismatch");
  if (pred.rows() == 0) throw ContractError("mae: empty sample");
  return (pred - label).cwiseAbs().colwise().mean().transpose();
}

RunReport train(const TrainConfig& cfg, const DomainSample& source, const DomainSample& target) {
  cfg.validate();
  const Index d = source.features.cols();
  if (target.features.cols() != d)
    throw ContractError("train: source has " + std::to_string(d) + " features, target has " +
                        std::to_string(target.features.cols()));
  if (source.labels.rows() != source.features.rows() || source.features.rows() == 0)
    throw ContractError("train: source features and labels disagree");
  if (target.features.rows() == 0) throw ContractError("train: empty target domain");
  if (cfg.paired_sampler && target.features.rows() != source.features.rows())
    throw ContractError("train: paired sampler needs domains of equal size");

  const auto started = std::chrono::steady_clock::now();

  ModelConfig mc = cfg.model;
  mc.input_dim = d;
  mc.n_outputs = source.labels.cols();

  RunReport report;
  report.config = cfg;
  report.params = init_params(mc, cfg.seed);
  ModelParams& params = report.params;
  Velocity velocity;

  CounterRng source_rng(cfg.seed, kSourceStream);
  CounterRng target_rng(cfg.seed, kTargetStream);
  const Method method = cfg.method;
  const bool angle_term = uses_angle(method) && cfg.alignment.alpha_cos != 0.0;
  const bool scale_term = uses_scale(method) && cfg.alignment.gamma_scale != 0.0;

  {
    const Index b = std::min({cfg.batch_size, source.features.rows(), target.features.rows()});
    const MatrixXd zs = encode(params, source.features.topRows(b));
    const MatrixXd zt = encode(params, target.features.topRows(b));
    report.k_init = inverse_gram_pair(zs, zt, cfg.alignment).ranks.k;
  }

  report.records.reserve(static_cast<std::size_t>(cfg.iterations));
  for (long it = 0; it < cfg.iterations; ++it) {
    const double lr = lr_at(cfg, it);
    const auto is = draw_indices(source_rng, source.features.rows(), cfg.batch_size);
    const auto it_idx = cfg.paired_sampler
                            ? is
                            : draw_indices(target_rng, target.features.rows(), cfg.batch_size);

    IterationRecord rec;
    rec.iteration = it;
    rec.lr = lr;
    GradResult grads;
    try {
      Tape tape;
      const ModelLeaves leaves = register_params(tape, params);
      const NodeId xs = tape.constant(gather_rows(source.features, is));
      const NodeId xt = tape.constant(gather_rows(target.features, it_idx));
      const NodeId ys = tape.constant(gather_rows(source.labels, is));
      const NodeId zs = record_encode(tape, params, leaves, xs);
      const NodeId zt = record_encode(tape, params, leaves, xt);
      const NodeId mse = tape.mse(record_predict(tape, params, leaves, zs), ys);
      const AlignmentNodes align = record_alignment(tape, zs, zt, cfg.alignment, angle_target(method));

      NodeId total = mse;
      if (angle_term) total = tape.add(total, tape.scale(align.l_cos, cfg.alignment.alpha_cos));
      if (scale_term) total = tape.add(total, tape.scale(align.l_scale, cfg.alignment.gamma_scale));

      rec.mse_source = tape.scalar(mse);
      rec.l_cos = tape.scalar(align.l_cos);
      rec.l_scale = tape.scalar(align.l_scale);
      rec.total = tape.scalar(total);
      rec.k = align.ranks.k;
      if (!std::isfinite(rec.total) || std::abs(rec.total) > kDivergenceLimit)
        throw DivergedError("training diverged at iteration " + std::to_string(it) +
                                ": total loss " + format_double(rec.total),
                            it);
      grads = tape.backward(total);
    } catch (const DivergedError&) {
      throw;
    } catch (const NumericError& e) {
      throw DivergedError("training diverged at iteration " + std::to_string(it) + ": " + e.what(),
                          it);
    }
    sgd_step(params, grads.gradients, velocity, lr, cfg.momentum, cfg.weight_decay);
    for (const auto& [name, m] : std::as_const(params).blocks())
      if (!m->allFinite())
        throw DivergedError("training diverged at iteration " + std::to_string(it) +
                                ": parameter " + name + " is not finite",
                            it);
    report.records.push_back(rec);
  }

  FinalMetrics& fm = report.final;
  const MatrixXd zs_all = encode(params, source.features);
  const MatrixXd zt_all = encode(params, target.features);
  fm.source_mae_per_output = mae_per_output(predict(params, zs_all), source.labels);
  fm.source_mae = fm.source_mae_per_output.sum();
  if (target.labels.rows() == target.features.rows() && target.labels.cols() == source.labels.cols()) {
    fm.target_mae_per_output = mae_per_output(predict(params, zt_all), target.labels);
    fm.target_mae = fm.target_mae_per_output.sum();
    fm.beta_gap = regressor_gap(zs_all, source.labels, zt_all, target.labels,
                                cfg.alignment.prepend_intercept)
                      .beta_gap;
  } else {
    fm.target_mae = std::numeric_limits<double>::quiet_NaN();
    fm.beta_gap = std::numeric_limits<double>::quiet_NaN();
  }
  const Index b = std::min({cfg.batch_size, zs_all.rows(), zt_all.rows()});
  fm.diagnostics = alignment_diagnostics(zs_all.topRows(b), zt_all.topRows(b), cfg.alignment);

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::batch_size:
      return "batch_size";
    case SweepAxis::alpha_cos:
      return "alpha_cos";
    case SweepAxis::gamma_scale:
      return "gamma_scale";
    case SweepAxis::threshold_T:
      return "threshold_T";
  }
  return "batch_size";
}

SweepAxis sweep_axis_from_string(std::string_view name) {
  for (SweepAxis a : {SweepAxis::batch_size, SweepAxis::alpha_cos, SweepAxis::gamma_scale,
                      SweepAxis::threshold_T})
    if (name == to_string(a)) return a;
  throw ContractError("unknown sweep axis '" + std::string(name) + "'");
}

TrainConfig with_axis_value(const TrainConfig& base, SweepAxis axis, double value) {
  TrainConfig cfg = base;
  switch (axis) {
    case SweepAxis::batch_size:
      if (value != std::floor(value) || value < 2 || value > 1e9)
        throw ContractError("batch_size sweep value must be an integer >= 2, got " +
                            format_double(value));
      cfg.batch_size = static_cast<Index>(value);
      break;
    case SweepAxis::alpha_cos:
      cfg.alignment.alpha_cos = value;
      break;
    case SweepAxis::gamma_scale:
      cfg.alignment.gamma_scale = value;
      break;
    case SweepAxis::threshold_T:
      cfg.alignment.threshold_T = value;
      break;
  }
  cfg.validate();
  return cfg;
}

unsigned sweep_threads() {
  if (const char* env = std::getenv("DAREGRAM_THREADS")) {
    const auto v = parse_double(env);
    if (v && *v >= 1 && *v == std::floor(*v)) return static_cast<unsigned>(*v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<SweepEntry> sweep(const TrainConfig& base, SweepAxis axis,
                              const std::vector<double>& values, const DomainSample& source,
                              const DomainSample& target, unsigned threads) {
  if (values.empty()) throw ContractError("sweep: no values for axis " + to_string(axis));
  std::vector<TrainConfig> configs;
  for (double v : values) configs.push_back(with_axis_value(base, axis, v));

  std::vector<SweepEntry> out(values.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < values.size(); i = next++) {
      SweepEntry& e = out[i];
      e.value = values[i];
      try {
        e.report = train(configs[i], source, target);
        e.status = "ok";
      } catch (const std::exception& ex) {
        e.status = "failed";
        e.error = ex.what();
      }
    }
  };
  const unsigned n = std::clamp<unsigned>(threads, 1u, static_cast<unsigned>(values.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

void write_run_log(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "iteration,lr,mse_source,l_cos,l_scale,total,k\n";
  for (const auto& r : report.records)
    out << r.iteration << ',' << format_double(r.lr) << ',' << format_double(r.mse_source) << ','
        << format_double(r.l_cos) << ',' << format_double(r.l_scale) << ','
        << format_double(r.total) << ',' << r.k << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string summary_json(const RunReport& report) {
  const FinalMetrics& fm = report.final;
  const AlignmentDiagnostics& dg = fm.diagnostics;
  const IterationRecord last = report.records.empty() ? IterationRecord{} : report.records.back();
  nlohmann::json j = {
      {"method", to_string(report.config.method)},
      {"config", config_json(report.config)},
      {"iterations_logged", report.records.size()},
      {"k_init", report.k_init},
      {"target_mae", fm.target_mae},
      {"target_mae_per_output", vector_json(fm.target_mae_per_output)},
      {"source_mae", fm.source_mae},
      {"source_mae_per_output", vector_json(fm.source_mae_per_output)},
      {"beta_gap", fm.beta_gap},
      {"final",
       {{"mse_source", last.mse_source},
        {"l_cos", last.l_cos},
        {"l_scale", last.l_scale},
        {"total", last.total},
        {"k", last.k}}},
      {"diagnostics",
       {{"principal_direction_cosine", dg.principal_direction_cosine},
        {"inverse_gram_cosine", dg.inverse_gram_cosine},
        {"raw_principal_angles", vector_json(dg.raw_principal_angles)},
        {"max_raw_angle", dg.max_raw_angle()},
        {"raw_full_space", dg.raw_full_space},
        {"k", dg.k}}},
      {"timing", {{"wall_seconds", report.wall_seconds}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace daregram
