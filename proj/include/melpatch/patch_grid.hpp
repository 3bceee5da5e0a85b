#pragma once

#include <cmath>
#include <cstddef>

#include "melpatch/frontend.hpp"
#include "melpatch/matrix.hpp"

namespace melpatch {

struct PatchGridSpec {
  int patch_t = 4;
  int patch_f = 4;
  /// Value used for trailing time padding; silence at the default log floor.
  double pad_value = std::log(1e-5);

  std::size_t patch_size() const { return static_cast<std::size_t>(patch_t) * patch_f; }
  void validate() const;
};

struct GridDims {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const GridDims&) const = default;
};

/// Non-overlapping patches of a spectrogram. Patch (i, j) is row i * cols + j
/// of `patches`; within a patch, elements are frame-major
/// (frame 0 bands 0..patch_f-1, then frame 1, ...).
struct PatchSet {
  Matrix patches;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t original_t = 0;

  std::size_t count() const { return rows * cols; }
};

/// rows = ceil(frames / patch_t), cols = bands / patch_f. The band axis is
/// never padded, so bands must divide evenly.
GridDims grid_dims(std::size_t frames, std::size_t bands, const PatchGridSpec& spec);

PatchSet patchify(const Matrix& mel_values, const PatchGridSpec& spec);
PatchSet patchify(const MelSpectrogram& m, const PatchGridSpec& spec);

/// Inverse tiling. Frames past original_t are dropped. The result carries
/// `cfg` (whose n_mels must equal cols * patch_f).
MelSpectrogram unpatchify(const PatchSet& p, const PatchGridSpec& spec,
                          const FrontendConfig& cfg = {});

/// Same as unpatchify but returns only the value grid.
Matrix unpatchify_values(const PatchSet& p, const PatchGridSpec& spec);

}  // namespace melpatch
