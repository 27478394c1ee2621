#include "commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>

#include "config.hpp"
#include "daregram/error.hpp"
#include "daregram/format.hpp"
#include "daregram/gradcheck.hpp"
#include "daregram/toy_study.hpp"
#include "daregram/trainer.hpp"

namespace daregram::cli {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config_path;
};

std::optional<fs::path> config_file(const Common& c) {
  if (c.config_path.empty()) return std::nullopt;
  return fs::path(c.config_path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw IoError("cannot create output directory '" + dir.string() + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void print_mae_table(const RunReport& r, std::ostream& out) {
  out << "domain,output,mae\n";
  const auto rows = [&](const char* domain, const VectorXd& per, double total) {
    for (Index i = 0; i < per.size(); ++i)
      out << domain << ',' << i << ',' << format_double(per(i)) << '\n';
    out << domain << ",sum," << format_double(total) << '\n';
  };
  rows("target", r.final.target_mae_per_output, r.final.target_mae);
  rows("source", r.final.source_mae_per_output, r.final.source_mae);
}

int cmd_train(const Common& common, const std::vector<Override>& overrides, std::ostream& out,
              std::ostream& err) {
  const CliConfig cfg = load_config(config_file(common), overrides, err);
  const Domains d = make_domains(cfg.data);
  ensure_dir(cfg.output_dir);
  const RunReport report = train(cfg.train, d.source, d.target);
  write_run_log(report, cfg.output_dir / "run_log.csv");
  write_text(cfg.output_dir / "summary.json", summary_json(report));
  save_checkpoint(report.params, cfg.output_dir / "model.ckpt");
  print_mae_table(report, out);
  return kExitOk;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto v = parse_double(item);
    if (!v) throw ConfigError("--values: '" + item + "' is not a number");
    values.push_back(*v);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (values.empty()) throw ConfigError("--values: no values given");
  return values;
}

int cmd_sweep(const Common& common, const std::string& axis_name, const std::string& values_text,
              const std::vector<Override>& overrides, std::ostream& out, std::ostream& err) {
  SweepAxis axis;
  try {
    axis = sweep_axis_from_string(axis_name);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("--axis: ") + e.what());
  }
  const std::vector<double> values = parse_values(values_text);
  const CliConfig cfg = load_config(config_file(common), overrides, err);
  for (double v : values) {
    try {
      with_axis_value(cfg.train, axis, v);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("--values: ") + e.what());
    }
  }
  const Domains d = make_domains(cfg.data);
  ensure_dir(cfg.output_dir);
  const auto entries = sweep(cfg.train, axis, values, d.source, d.target);

  std::string csv = "value,target_mae,l_cos_final,l_scale_final,k_init,status\n";
  bool all_ok = true;
  for (const SweepEntry& e : entries) {
    csv += format_double(e.value) + ',';
    if (e.report) {
      const IterationRecord& last = e.report->records.back();
      csv += format_double(e.report->final.target_mae) + ',' + format_double(last.l_cos) + ',' +
             format_double(last.l_scale) + ',' + std::to_string(e.report->k_init) + ',';
    } else {
      csv += ",,,,";
      err << "run " << to_string(axis) << '=' << format_double(e.value) << " failed: " << e.error
          << '\n';
      all_ok = false;
    }
    csv += e.status + '\n';
  }
  write_text(cfg.output_dir / "sweep.csv", csv);
  out << csv;
  return all_ok ? kExitOk : kExitRuntime;
}

int cmd_gradcheck(const Common& common, std::uint64_t seed, Index p, Index b,
                  const std::string& broken_op, const std::vector<Override>& overrides,
                  std::ostream& out, std::ostream& err) {
  if (p < 2) throw ConfigError("--p must be >= 2");
  if (b < 2) throw ConfigError("--b must be >= 2");
  const CliConfig cfg = load_config(config_file(common), overrides, err);
  GradcheckOptions opt;
  opt.seed = seed;
  opt.p = p;
  opt.b = b;
  opt.alignment = cfg.train.alignment;
  opt.broken_op = broken_op;
  GradcheckReport report;
  try {
    report = pipeline_gradcheck(opt);
  } catch (const ContractError& e) {
    if (!broken_op.empty()) throw ConfigError(std::string("--break-backward: ") + e.what());
    throw;
  }
  out << "block,max_rel_error\n";
  for (const BlockError& blk : report.blocks)
    out << blk.block << ',' << format_double(blk.max_rel_error) << '\n';
  out << "max," << format_double(report.max_error) << '\n';
  if (report.passed()) return kExitOk;
  for (const BlockError& blk : report.blocks)
    if (blk.max_rel_error >= kGradcheckTolerance)
      err << "gradcheck failed: block " << blk.block << " max relative error "
          << format_double(blk.max_rel_error) << " >= " << format_double(kGradcheckTolerance)
          << '\n';
  return kExitRuntime;
}

int cmd_fig3(const Common& common, int seeds, const std::string& out_path, bool zero_shift,
             const std::vector<Override>& overrides, std::ostream& out, std::ostream& err) {
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  const CliConfig cfg = load_config(config_file(common), overrides, err);
  const auto spec_for_seed = [&](std::uint64_t seed) {
    return zero_shift ? ShiftSpec::identity(kFig3Dim, seed) : fig3_shift_spec(seed);
  };
  const ToyStudy study = run_toy_study(seeds, spec_for_seed, kFig3Samples, kFig3Dim,
                                       cfg.train.alignment);
  std::string csv = "seed,raw_mismatch,inverse_gram_mismatch,scale_mismatch\n";
  for (const ToyMismatch& r : study.rows)
    csv += std::to_string(r.seed) + ',' + format_double(r.raw_mismatch) + ',' +
           format_double(r.inverse_gram_mismatch) + ',' + format_double(r.scale_mismatch) + '\n';
  write_text(out_path, csv);
  out << "median_raw_mismatch," << format_double(study.median_raw) << '\n';
  out << "median_inverse_gram_mismatch," << format_double(study.median_inverse_gram) << '\n';
  out << "verdict," << study.verdict << '\n';
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inverse-Gram domain adaptation for regression", "daregram"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->allow_extras();
  };

  CLI::App* train_cmd = app.add_subcommand("train", "Train one model and write its report");
  add_common(train_cmd);

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Train once per value of one hyperparameter");
  add_common(sweep_cmd);
  std::string axis;
  std::string values;
  sweep_cmd->add_option("--axis", axis, "batch_size | alpha_cos | gamma_scale | threshold_T")
      ->required();
  sweep_cmd->add_option("--values", values, "Comma-separated values");

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the objective");
  add_common(grad_cmd);
  std::uint64_t grad_seed = 0;
  Index grad_p = 16;
  Index grad_b = 36;
  std::string broken_op;
  grad_cmd->add_option("--seed", grad_seed, "Random seed")->capture_default_str();
  grad_cmd->add_option("--p", grad_p, "Feature dimension")->capture_default_str();
  grad_cmd->add_option("--b", grad_b, "Batch size")->capture_default_str();
  grad_cmd->add_option("--break-backward", broken_op)->group("");

  CLI::App* fig3_cmd = app.add_subcommand("fig3", "Raw-subspace vs inverse-Gram mismatch study");
  add_common(fig3_cmd);
  int seeds = 20;
  std::string fig3_out = "fig3.csv";
  bool zero_shift = false;
  fig3_cmd->add_option("--seeds", seeds, "Number of seeds")->capture_default_str();
  fig3_cmd->add_option("--out", fig3_out, "Per-seed CSV path")->capture_default_str();
  fig3_cmd->add_flag("--zero-shift", zero_shift, "Use identical domains");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::vector<Override> overrides = parse_override_tokens(sub->remaining());
    if (sub == train_cmd) return cmd_train(common, overrides, out, err);
    if (sub == sweep_cmd) return cmd_sweep(common, axis, values, overrides, out, err);
    if (sub == grad_cmd)
      return cmd_gradcheck(common, grad_seed, grad_p, grad_b, broken_op, overrides, out, err);
    return cmd_fig3(common, seeds, fig3_out, zero_shift, overrides, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace daregram::cli
