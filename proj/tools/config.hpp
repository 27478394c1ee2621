#pragma once

// Flat JSON run configuration: sections train, alignment, model, data and
// output, each a single-level object. Command-line overrides address keys as
// `--section.key value`, or `--key value` when the key name is unique.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "daregram/synthdata.hpp"
#include "daregram/trainer.hpp"

namespace daregram::cli {

struct DataConfig {
  Index dim = kBenchmarkDim;
  Index n_source = kBenchmarkSamples;
  Index n_target = kBenchmarkSamples;
  ShiftSpec shift = benchmark_shift_spec();
  TaskSpec task;
  /// When both are set the domains are loaded instead of generated.
  std::string source_csv;
  std::string target_csv;
};

struct CliConfig {
  TrainConfig train;
  DataConfig data;
  std::filesystem::path output_dir = "out";
};

using Override = std::pair<std::string, std::string>;

/// Throws ConfigError naming the offending key. A notice is written to
/// `notices` for every key left at its default.
CliConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<Override>& overrides, std::ostream& notices);

/// `--a.b v`, `--a.b=v` and `--key v` tokens into (name, value) pairs.
std::vector<Override> parse_override_tokens(const std::vector<std::string>& tokens);

/// The default configuration as a JSON document.
std::string default_config_json();

struct Domains {
  DomainSample source;
  DomainSample target;
};

Domains make_domains(const DataConfig& data);

}  // namespace daregram::cli
