#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "melpatch/frontend.hpp"
#include "melpatch/patch_grid.hpp"
#include "melpatch/train.hpp"

namespace melpatch {

/// Everything the CLI can configure. Text form is one `dotted.key = value`
/// per line; `#` starts a comment; unknown keys are rejected.
struct CodecConfig {
  FrontendConfig frontend;
  int patch_t = 4;
  int patch_f = 4;
  /// Unset means ln(frontend.log_floor).
  std::optional<double> pad_value;
  std::uint32_t k = 4096;
  std::size_t latent_dim = 16;
  std::size_t hidden = 64;
  bool identity_mode = false;
  TrainConfig train = desk_train_defaults();
  int kmeans_iters = 20;
  double kmeans_tol = 1e-4;
  int griffin_lim_iters = 32;
  std::uint64_t seed = 0;

  PatchGridSpec grid() const;
  void validate() const;

  /// Default optimizer settings with a schedule short enough for a CPU.
  static TrainConfig desk_train_defaults();
};

CodecConfig parse_config(const std::string& text);
CodecConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const CodecConfig& cfg);

}  // namespace melpatch
