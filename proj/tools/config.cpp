#include "config.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "daregram/error.hpp"

namespace daregram::cli {
namespace {

using nlohmann::json;

json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json defaults() {
  const CliConfig c;
  const TrainConfig& t = c.train;
  const DataConfig& d = c.data;
  json widths = json::array();
  for (Index w : t.model.widths) widths.push_back(w);
  return {
      {"train",
       {{"iterations", t.iterations},
        {"batch_size", t.batch_size},
        {"lr0", t.lr0},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"schedule_gamma", t.schedule.gamma},
        {"schedule_power", t.schedule.power},
        {"method", to_string(t.method)},
        {"seed", t.seed},
        {"paired_sampler", t.paired_sampler}}},
      {"alignment",
       {{"threshold_T", t.alignment.threshold_T},
        {"alpha_cos", t.alignment.alpha_cos},
        {"gamma_scale", t.alignment.gamma_scale},
        {"prepend_intercept", t.alignment.prepend_intercept}}},
      {"model",
       {{"widths", widths},
        {"activation", to_string(t.model.activation)},
        {"sigmoid_head", t.model.sigmoid_head}}},
      {"data",
       {{"seed", d.shift.seed},
        {"dim", d.dim},
        {"n_source", d.n_source},
        {"n_target", d.n_target},
        {"n_outputs", d.task.n_outputs},
        {"signal_dims", d.task.signal_dims},
        {"nuisance_scale", d.task.nuisance_scale},
        {"pooled_label_range", d.task.pooled_label_range},
        {"mean_shift", vec_json(d.shift.mean_shift)},
        {"scale_factor", vec_json(d.shift.scale_factor)},
        {"rotation_angle", d.shift.rotation_angle},
        {"rotation_plane", {d.shift.rotation_plane[0], d.shift.rotation_plane[1]}},
        {"noise_sigma", d.shift.noise_sigma},
        {"source_csv", d.source_csv},
        {"target_csv", d.target_csv}}},
      {"output", {{"dir", c.output_dir.string()}}},
  };
}

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw ConfigError(key + ": " + what);
}

double get_real(const json& j, const std::string& key) {
  if (!j.is_number()) bad(key, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) bad(key, "must be finite");
  return v;
}

long long get_int(const json& j, const std::string& key) {
  if (j.is_number_integer()) return j.get<long long>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (v == std::floor(v) && std::abs(v) < 9e15) return static_cast<long long>(v);
  }
  bad(key, "expected an integer");
}

std::uint64_t get_seed(const json& j, const std::string& key) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  const long long v = get_int(j, key);
  if (v < 0) bad(key, "must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

bool get_bool(const json& j, const std::string& key) {
  if (!j.is_boolean()) bad(key, "expected true or false");
  return j.get<bool>();
}

std::string get_string(const json& j, const std::string& key) {
  if (!j.is_string()) bad(key, "expected a string");
  return j.get<std::string>();
}

VectorXd get_real_array(const json& j, const std::string& key) {
  if (!j.is_array()) bad(key, "expected an array of numbers");
  VectorXd v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v(static_cast<Index>(i)) = get_real(j[i], key + "[" + std::to_string(i) + "]");
  return v;
}

std::vector<Index> get_int_array(const json& j, const std::string& key) {
  if (!j.is_array()) bad(key, "expected an array of integers");
  std::vector<Index> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(static_cast<Index>(get_int(j[i], key + "[" + std::to_string(i) + "]")));
  return out;
}

/// Interprets an override string against the type of the default value.
json override_value(const json& def, const std::string& text) {
  json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded()) parsed = text;
  if (def.is_array() && !parsed.is_array()) {
    json arr = json::array();
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t comma = text.find(',', start);
      const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                                : comma - start);
      json v = json::parse(item, nullptr, false);
      arr.push_back(v.is_discarded() ? json(item) : v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return arr;
  }
  if (def.is_string() && !parsed.is_string()) return text;
  return parsed;
}

std::string resolve_key(const json& defs, const std::string& name) {
  const auto dot = name.find('.');
  if (dot != std::string::npos) {
    const std::string section = name.substr(0, dot);
    const std::string key = name.substr(dot + 1);
    if (!defs.contains(section)) throw ConfigError("unknown section '" + section + "' in --" + name);
    if (!defs[section].contains(key)) throw ConfigError("unknown key '" + name + "'");
    return name;
  }
  std::vector<std::string> hits;
  for (const auto& [section, keys] : defs.items())
    if (keys.contains(name)) hits.push_back(section + "." + name);
  if (hits.empty()) throw ConfigError("unknown key '" + name + "'");
  if (hits.size() > 1) {
    std::string msg = "ambiguous key '" + name + "'; use";
    for (std::size_t i = 0; i < hits.size(); ++i) msg += (i ? " or --" : " --") + hits[i];
    throw ConfigError(msg);
  }
  return hits.front();
}

CliConfig from_json(const json& doc) {
  CliConfig c;
  TrainConfig& t = c.train;
  const json& tr = doc["train"];
  t.iterations = static_cast<long>(get_int(tr["iterations"], "train.iterations"));
  t.batch_size = static_cast<Index>(get_int(tr["batch_size"], "train.batch_size"));
  t.lr0 = get_real(tr["lr0"], "train.lr0");
  t.momentum = get_real(tr["momentum"], "train.momentum");
  t.weight_decay = get_real(tr["weight_decay"], "train.weight_decay");
  t.schedule.gamma = get_real(tr["schedule_gamma"], "train.schedule_gamma");
  t.schedule.power = get_real(tr["schedule_power"], "train.schedule_power");
  try {
    t.method = method_from_string(get_string(tr["method"], "train.method"));
  } catch (const ContractError& e) {
    bad("train.method", e.what());
  }
  t.seed = get_seed(tr["seed"], "train.seed");
  t.paired_sampler = get_bool(tr["paired_sampler"], "train.paired_sampler");

  const json& al = doc["alignment"];
  t.alignment.threshold_T = get_real(al["threshold_T"], "alignment.threshold_T");
  t.alignment.alpha_cos = get_real(al["alpha_cos"], "alignment.alpha_cos");
  t.alignment.gamma_scale = get_real(al["gamma_scale"], "alignment.gamma_scale");
  t.alignment.prepend_intercept = get_bool(al["prepend_intercept"], "alignment.prepend_intercept");

  const json& mo = doc["model"];
  t.model.widths = get_int_array(mo["widths"], "model.widths");
  try {
    t.model.activation = activation_from_string(get_string(mo["activation"], "model.activation"));
  } catch (const ContractError& e) {
    bad("model.activation", e.what());
  }
  t.model.sigmoid_head = get_bool(mo["sigmoid_head"], "model.sigmoid_head");

  DataConfig& d = c.data;
  const json& da = doc["data"];
  d.shift.seed = get_seed(da["seed"], "data.seed");
  d.dim = static_cast<Index>(get_int(da["dim"], "data.dim"));
  d.n_source = static_cast<Index>(get_int(da["n_source"], "data.n_source"));
  d.n_target = static_cast<Index>(get_int(da["n_target"], "data.n_target"));
  d.task.n_outputs = static_cast<Index>(get_int(da["n_outputs"], "data.n_outputs"));
  d.task.signal_dims = static_cast<Index>(get_int(da["signal_dims"], "data.signal_dims"));
  d.task.nuisance_scale = get_real(da["nuisance_scale"], "data.nuisance_scale");
  d.task.pooled_label_range = get_bool(da["pooled_label_range"], "data.pooled_label_range");
  d.shift.mean_shift = get_real_array(da["mean_shift"], "data.mean_shift");
  d.shift.scale_factor = get_real_array(da["scale_factor"], "data.scale_factor");
  d.shift.rotation_angle = get_real(da["rotation_angle"], "data.rotation_angle");
  const auto plane = get_int_array(da["rotation_plane"], "data.rotation_plane");
  if (plane.size() != 2) bad("data.rotation_plane", "expected two axis indices");
  d.shift.rotation_plane = {plane[0], plane[1]};
  d.shift.noise_sigma = get_real(da["noise_sigma"], "data.noise_sigma");
  d.source_csv = get_string(da["source_csv"], "data.source_csv");
  d.target_csv = get_string(da["target_csv"], "data.target_csv");

  c.output_dir = get_string(doc["output"]["dir"], "output.dir");
  if (c.output_dir.empty()) bad("output.dir", "must not be empty");
  return c;
}

/// Maps a library validation message onto the config key it mentions.
void validate(const CliConfig& c) {
  const auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ContractError& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    } catch (const InvalidInputError& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("train", [&] { c.train.validate(); });
  if (c.data.source_csv.empty() != c.data.target_csv.empty())
    throw ConfigError("data.source_csv and data.target_csv must be set together");
  if (c.data.source_csv.empty()) {
    if (c.data.n_source < 4) bad("data.n_source", "must be >= 4");
    if (c.data.n_target < 4) bad("data.n_target", "must be >= 4");
    if (c.data.dim < 2) bad("data.dim", "must be >= 2");
    if (c.data.shift.mean_shift.size() != c.data.dim)
      bad("data.mean_shift", "length must equal data.dim");
    if (c.data.shift.scale_factor.size() != c.data.dim)
      bad("data.scale_factor", "length must equal data.dim");
    wrap("data", [&] {
      c.data.shift.validate(c.data.dim);
      c.data.task.validate(c.data.dim);
    });
  }
}

}  // namespace

std::string default_config_json() { return defaults().dump(2) + "\n"; }

std::vector<Override> parse_override_tokens(const std::vector<std::string>& tokens) {
  std::vector<Override> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok.rfind("--", 0) != 0 || tok.size() <= 2)
      throw ConfigError("unexpected argument '" + tok + "'");
    std::string name = tok.substr(2);
    const auto eq = name.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(name.substr(0, eq), name.substr(eq + 1));
      continue;
    }
    if (i + 1 >= tokens.size()) throw ConfigError("missing value for --" + name);
    out.emplace_back(name, tokens[++i]);
  }
  return out;
}

CliConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<Override>& overrides, std::ostream& notices) {
  const json defs = defaults();
  json doc = defs;
  json seen = json::object();
  for (const auto& [section, keys] : defs.items()) seen[section] = json::object();

  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file '" + file->string() + "'");
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + file->string() + "' is not valid JSON: " + e.what());
    }
    if (!user.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [section, keys] : user.items()) {
      if (!defs.contains(section)) throw ConfigError("unknown section '" + section + "'");
      if (!keys.is_object()) throw ConfigError("section '" + section + "' must be an object");
      for (const auto& [key, value] : keys.items()) {
        if (!defs[section].contains(key))
          throw ConfigError("unknown key '" + section + "." + key + "'");
        doc[section][key] = value;
        seen[section][key] = true;
      }
    }
  }

  for (const auto& [name, text] : overrides) {
    const std::string full = resolve_key(defs, name);
    const auto dot = full.find('.');
    const std::string section = full.substr(0, dot);
    const std::string key = full.substr(dot + 1);
    doc[section][key] = override_value(defs[section][key], text);
    seen[section][key] = true;
  }

  for (const auto& [section, keys] : defs.items())
    for (const auto& [key, value] : keys.items())
      if (!seen[section].contains(key))
        notices << "notice: " << section << '.' << key << " not set, using default "
                << value.dump() << '\n';

  CliConfig c = from_json(doc);
  validate(c);
  return c;
}

Domains make_domains(const DataConfig& data) {
  if (!data.source_csv.empty()) {
    Domains d{load_domain(data.source_csv), load_domain(data.target_csv)};
    d.target.labels_evaluation_only = true;
    return d;
  }
  RegressionTask task = gen_regression_task(data.n_source, data.n_target, data.dim, data.shift,
                                            data.task);
  return {std::move(task.source), std::move(task.target)};
}

}  // namespace daregram::cli
