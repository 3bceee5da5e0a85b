#include "melpatch/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "melpatch/errors.hpp"

namespace melpatch {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config: " + key + ": expected an integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config: " + key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + ": expected true/false, got '" + v + "'");
}

using Setter = std::function<void(CodecConfig&, const std::string& key, const std::string& v)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_int<std::uint64_t>(k, v); }},
      {"frontend.sample_rate",
       [](auto& c, auto& k, auto& v) { c.frontend.sample_rate = parse_int<int>(k, v); }},
      {"frontend.n_fft", [](auto& c, auto& k, auto& v) { c.frontend.n_fft = parse_int<int>(k, v); }},
      {"frontend.hop", [](auto& c, auto& k, auto& v) { c.frontend.hop = parse_int<int>(k, v); }},
      {"frontend.win_length",
       [](auto& c, auto& k, auto& v) { c.frontend.win_length = parse_int<int>(k, v); }},
      {"frontend.n_mels", [](auto& c, auto& k, auto& v) { c.frontend.n_mels = parse_int<int>(k, v); }},
      {"frontend.fmin", [](auto& c, auto& k, auto& v) { c.frontend.fmin = parse_double(k, v); }},
      {"frontend.fmax", [](auto& c, auto& k, auto& v) { c.frontend.fmax = parse_double(k, v); }},
      {"frontend.log_floor",
       [](auto& c, auto& k, auto& v) { c.frontend.log_floor = parse_double(k, v); }},
      {"grid.patch_t", [](auto& c, auto& k, auto& v) { c.patch_t = parse_int<int>(k, v); }},
      {"grid.patch_f", [](auto& c, auto& k, auto& v) { c.patch_f = parse_int<int>(k, v); }},
      {"grid.pad_value", [](auto& c, auto& k, auto& v) { c.pad_value = parse_double(k, v); }},
      {"codebook.k", [](auto& c, auto& k, auto& v) { c.k = parse_int<std::uint32_t>(k, v); }},
      {"model.latent_dim",
       [](auto& c, auto& k, auto& v) { c.latent_dim = parse_int<std::size_t>(k, v); }},
      {"model.hidden", [](auto& c, auto& k, auto& v) { c.hidden = parse_int<std::size_t>(k, v); }},
      {"model.identity_mode",
       [](auto& c, auto& k, auto& v) { c.identity_mode = parse_bool(k, v); }},
      {"train.lr_peak", [](auto& c, auto& k, auto& v) { c.train.lr_peak = parse_double(k, v); }},
      {"train.warmup_steps",
       [](auto& c, auto& k, auto& v) { c.train.warmup_steps = parse_int<long>(k, v); }},
      {"train.total_steps",
       [](auto& c, auto& k, auto& v) { c.train.total_steps = parse_int<long>(k, v); }},
      {"train.beta1", [](auto& c, auto& k, auto& v) { c.train.beta1 = parse_double(k, v); }},
      {"train.beta2", [](auto& c, auto& k, auto& v) { c.train.beta2 = parse_double(k, v); }},
      {"train.weight_decay",
       [](auto& c, auto& k, auto& v) { c.train.weight_decay = parse_double(k, v); }},
      {"train.adam_eps", [](auto& c, auto& k, auto& v) { c.train.adam_eps = parse_double(k, v); }},
      {"train.batch_size",
       [](auto& c, auto& k, auto& v) { c.train.batch_size = parse_int<std::size_t>(k, v); }},
      {"train.commitment_beta",
       [](auto& c, auto& k, auto& v) { c.train.commitment_beta = parse_double(k, v); }},
      {"train.kmeans_iters", [](auto& c, auto& k, auto& v) { c.kmeans_iters = parse_int<int>(k, v); }},
      {"train.kmeans_tol", [](auto& c, auto& k, auto& v) { c.kmeans_tol = parse_double(k, v); }},
      {"decode.griffin_lim_iters",
       [](auto& c, auto& k, auto& v) { c.griffin_lim_iters = parse_int<int>(k, v); }},
  };
  return table;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig CodecConfig::desk_train_defaults() {
  TrainConfig t;
  t.warmup_steps = 20;
  t.total_steps = 200;
  return t;
}

PatchGridSpec CodecConfig::grid() const {
  return {patch_t, patch_f, pad_value.value_or(std::log(frontend.log_floor))};
}

void CodecConfig::validate() const {
  frontend.validate();
  grid().validate();
  train.validate();
  if (frontend.n_mels % patch_f != 0) {
    throw ConfigError("config: frontend.n_mels must be divisible by grid.patch_f");
  }
  if (k < 1) throw ConfigError("config: codebook.k must be >= 1");
  if (identity_mode && latent_dim != grid().patch_size()) {
    throw ConfigError("config: identity mode requires model.latent_dim == patch_t * patch_f");
  }
  if (latent_dim < 1 || (!identity_mode && hidden < 1)) {
    throw ConfigError("config: model dimensions must be >= 1");
  }
  if (kmeans_iters < 0) throw ConfigError("config: train.kmeans_iters must be >= 0");
  if (griffin_lim_iters < 0) throw ConfigError("config: decode.griffin_lim_iters must be >= 0");
}

CodecConfig parse_config(const std::string& text) {
  CodecConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("config: line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

CodecConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_config_text(const CodecConfig& c) {
  std::ostringstream out;
  out << "seed = " << c.seed << '\n'
      << "frontend.sample_rate = " << c.frontend.sample_rate << '\n'
      << "frontend.n_fft = " << c.frontend.n_fft << '\n'
      << "frontend.hop = " << c.frontend.hop << '\n'
      << "frontend.win_length = " << c.frontend.win_length << '\n'
      << "frontend.n_mels = " << c.frontend.n_mels << '\n'
      << "frontend.fmin = " << fmt_double(c.frontend.fmin) << '\n';
  if (c.frontend.fmax) out << "frontend.fmax = " << fmt_double(*c.frontend.fmax) << '\n';
  out << "frontend.log_floor = " << fmt_double(c.frontend.log_floor) << '\n'
      << "grid.patch_t = " << c.patch_t << '\n'
      << "grid.patch_f = " << c.patch_f << '\n';
  if (c.pad_value) out << "grid.pad_value = " << fmt_double(*c.pad_value) << '\n';
  out << "codebook.k = " << c.k << '\n'
      << "model.latent_dim = " << c.latent_dim << '\n'
      << "model.hidden = " << c.hidden << '\n'
      << "model.identity_mode = " << (c.identity_mode ? "true" : "false") << '\n'
      << "train.lr_peak = " << fmt_double(c.train.lr_peak) << '\n'
      << "train.warmup_steps = " << c.train.warmup_steps << '\n'
      << "train.total_steps = " << c.train.total_steps << '\n'
      << "train.beta1 = " << fmt_double(c.train.beta1) << '\n'
      << "train.beta2 = " << fmt_double(c.train.beta2) << '\n'
      << "train.weight_decay = " << fmt_double(c.train.weight_decay) << '\n'
      << "train.adam_eps = " << fmt_double(c.train.adam_eps) << '\n'
      << "train.batch_size = " << c.train.batch_size << '\n'
      << "train.commitment_beta = " << fmt_double(c.train.commitment_beta) << '\n'
      << "train.kmeans_iters = " << c.kmeans_iters << '\n'
      << "train.kmeans_tol = " << fmt_double(c.kmeans_tol) << '\n'
      << "decode.griffin_lim_iters = " << c.griffin_lim_iters << '\n';
  return out.str();
}

}  // namespace melpatch
