#include "melpatch/patch_grid.hpp"

#include <string>

#include "melpatch/errors.hpp"

namespace melpatch {

void PatchGridSpec::validate() const {
  if (patch_t < 1 || patch_f < 1) throw ConfigError("grid: patch sizes must be >= 1");
}

GridDims grid_dims(std::size_t frames, std::size_t bands, const PatchGridSpec& spec) {
  spec.validate();
  const auto pt = static_cast<std::size_t>(spec.patch_t);
  const auto pf = static_cast<std::size_t>(spec.patch_f);
  if (bands % pf != 0) {
    throw std::invalid_argument("grid_dims: " + std::to_string(bands) +
                                " bands not divisible by patch_f " + std::to_string(pf));
  }
  return {(frames + pt - 1) / pt, bands / pf};
}

PatchSet patchify(const Matrix& mel, const PatchGridSpec& spec) {
  const GridDims dims = grid_dims(mel.rows(), mel.cols(), spec);
  const auto pt = static_cast<std::size_t>(spec.patch_t);
  const auto pf = static_cast<std::size_t>(spec.patch_f);

  PatchSet out{Matrix(dims.rows * dims.cols, pt * pf), dims.rows, dims.cols, mel.rows()};
  for (std::size_t i = 0; i < dims.rows; ++i) {
    for (std::size_t j = 0; j < dims.cols; ++j) {
      auto patch = out.patches.row(i * dims.cols + j);
      for (std::size_t dt = 0; dt < pt; ++dt) {
        const std::size_t t = i * pt + dt;
        for (std::size_t df = 0; df < pf; ++df) {
          patch[dt * pf + df] = t < mel.rows() ? mel(t, j * pf + df) : spec.pad_value;
        }
      }
    }
  }
  return out;
}

PatchSet patchify(const MelSpectrogram& m, const PatchGridSpec& spec) {
  return patchify(m.values, spec);
}

Matrix unpatchify_values(const PatchSet& p, const PatchGridSpec& spec) {
  spec.validate();
  const auto pt = static_cast<std::size_t>(spec.patch_t);
  const auto pf = static_cast<std::size_t>(spec.patch_f);
  if (p.patches.rows() != p.rows * p.cols || p.patches.cols() != pt * pf) {
    throw std::invalid_argument("unpatchify: patch matrix does not match grid shape");
  }
  if (p.original_t > p.rows * pt || (p.rows > 0 && p.original_t <= (p.rows - 1) * pt)) {
    throw std::invalid_argument("unpatchify: original_t " + std::to_string(p.original_t) +
                                " inconsistent with " + std::to_string(p.rows) + " rows");
  }

  Matrix mel(p.original_t, p.cols * pf);
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t j = 0; j < p.cols; ++j) {
      const auto patch = p.patches.row(i * p.cols + j);
      for (std::size_t dt = 0; dt < pt; ++dt) {
        const std::size_t t = i * pt + dt;
        if (t >= p.original_t) break;
        for (std::size_t df = 0; df < pf; ++df) mel(t, j * pf + df) = patch[dt * pf + df];
      }
    }
  }
  return mel;
}

MelSpectrogram unpatchify(const PatchSet& p, const PatchGridSpec& spec,
                          const FrontendConfig& cfg) {
  Matrix values = unpatchify_values(p, spec);
  if (values.cols() != static_cast<std::size_t>(cfg.n_mels)) {
    throw std::invalid_argument("unpatchify: grid has " + std::to_string(values.cols()) +
                                " bands, config expects " + std::to_string(cfg.n_mels));
  }
  return {std::move(values), cfg};
}

}  // namespace melpatch
