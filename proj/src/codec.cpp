#include "melpatch/codec.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include "melpatch/errors.hpp"

namespace melpatch {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("codebook/config mismatch: " + what);
}

void check_stream(bool ok, const std::string& what) {
  if (!ok) throw FormatError("stream/config mismatch: " + what);
}

/// Moves codes that received no assignment to the latents of `batch_latents`
/// that sit farthest from their assigned code. Returns how many moved.
std::size_t reseed_dead_codes(Codebook& cb, AdamWState& opt, std::vector<std::uint64_t>& usage,
                              const Matrix& batch_latents,
                              std::span<const std::uint32_t> batch_codes) {
  std::vector<std::size_t> dead;
  for (std::size_t c = 0; c < usage.size(); ++c) {
    if (usage[c] == 0) dead.push_back(c);
  }
  if (dead.empty() || batch_latents.rows() == 0) return 0;

  std::vector<double> dist(batch_latents.rows());
  for (std::size_t n = 0; n < batch_latents.rows(); ++n) {
    dist[n] = vq_loss(batch_latents.row(n), cb.entry(batch_codes[n])).codebook_term;
  }
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });

  std::size_t moved = 0;
  for (std::size_t i = 0; i < dead.size() && i < order.size(); ++i) {
    if (!(dist[order[i]] > 0.0)) break;
    const std::size_t code = dead[i];
    const auto src = batch_latents.row(order[i]);
    std::copy(src.begin(), src.end(), cb.entries().row(code).begin());
    std::fill(opt.codebook_m.row(code).begin(), opt.codebook_m.row(code).end(), 0.0);
    std::fill(opt.codebook_v.row(code).begin(), opt.codebook_v.row(code).end(), 0.0);
    ++moved;
  }
  return moved;
}

}  // namespace

Codec::Codec(CodecConfig cfg, CodebookFile file) : cfg_(std::move(cfg)), file_(std::move(file)) {
  cfg_.validate();
  const std::size_t patch = cfg_.grid().patch_size();
  require(file_.codebook.k() == cfg_.k, "codebook has K=" + std::to_string(file_.codebook.k()) +
                                            ", config codebook.k=" + std::to_string(cfg_.k));
  require(file_.projection.empty() == cfg_.identity_mode,
          cfg_.identity_mode ? "config is identity mode but codebook carries a projection"
                             : "config expects a projection but codebook has none");
  if (cfg_.identity_mode) {
    params_ = AutoencoderParams::identity(patch);
  } else {
    try {
      params_ = AutoencoderParams::from_tensors(file_.projection);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("codebook projection block: ") + e.what());
    }
  }
  require(params_.input_dim() == patch, "projection input size differs from patch size");
  require(params_.latent_dim() == file_.codebook.dim(), "latent size differs from codebook D");
  require(file_.codebook.dim() == cfg_.latent_dim,
          "codebook D=" + std::to_string(file_.codebook.dim()) +
              ", config model.latent_dim=" + std::to_string(cfg_.latent_dim));
  digest_ = codebook_digest(serialize_codebook(file_));
}

Codec Codec::load(const CodecConfig& cfg, const std::filesystem::path& codebook_path) {
  return Codec(cfg, load_codebook(codebook_path));
}

MelSpectrogram Codec::analyze(const Waveform& w) const {
  const Waveform at_rate = w.sample_rate == cfg_.frontend.sample_rate
                               ? w
                               : resample(w, cfg_.frontend.sample_rate);
  return mel_spectrogram(at_rate, cfg_.frontend);
}

TokenGrid Codec::tokens(const MelSpectrogram& m) const {
  return encode_tokens(params_, file_.codebook, m, cfg_.grid());
}

CodecHeader Codec::header_for(std::size_t original_t) const {
  CodecHeader h;
  h.sample_rate = static_cast<std::uint32_t>(cfg_.frontend.sample_rate);
  h.n_mels = static_cast<std::uint16_t>(cfg_.frontend.n_mels);
  h.hop = static_cast<std::uint16_t>(cfg_.frontend.hop);
  h.win_length = static_cast<std::uint16_t>(cfg_.frontend.win_length);
  h.patch_t = static_cast<std::uint16_t>(cfg_.patch_t);
  h.patch_f = static_cast<std::uint16_t>(cfg_.patch_f);
  h.k = cfg_.k;
  h.codebook_id = digest_;
  h.original_t = static_cast<std::uint32_t>(original_t);
  return h;
}

std::vector<unsigned char> Codec::encode(const Waveform& w) const {
  const MelSpectrogram m = analyze(w);
  return pack(tokens(m), header_for(m.frames()));
}

MelSpectrogram Codec::decode_mel(const TokenGrid& g) const {
  const Matrix decoded = params_.decode_all(dequantize(file_.codebook, g));
  MelSpectrogram m =
      unpatchify(PatchSet{decoded, g.rows, g.cols, g.original_t}, cfg_.grid(), cfg_.frontend);
  const double floor = std::log(cfg_.frontend.log_floor);
  for (double& v : m.values.data()) v = std::max(v, floor);
  return m;
}

Waveform Codec::decode(std::span<const unsigned char> stream) const {
  const Unpacked u = unpack(stream);
  const CodecHeader& h = u.header;
  check_stream(h.codebook_id == digest_, "codebook digest differs");
  check_stream(h.k == cfg_.k, "k");
  check_stream(h.sample_rate == static_cast<std::uint32_t>(cfg_.frontend.sample_rate),
               "sample_rate");
  check_stream(h.n_mels == cfg_.frontend.n_mels, "n_mels");
  check_stream(h.hop == cfg_.frontend.hop, "hop");
  check_stream(h.win_length == cfg_.frontend.win_length, "win_length");
  check_stream(h.patch_t == cfg_.patch_t && h.patch_f == cfg_.patch_f, "patch size");

  if (h.original_t == 0) return Waveform{{}, cfg_.frontend.sample_rate};
  const MelSpectrogram m = decode_mel(u.grid);
  const std::size_t frames = m.frames();
  const std::size_t limit = (frames - 1) * cfg_.frontend.hop + cfg_.frontend.n_fft / 2;
  const std::size_t length = std::min(frames * cfg_.frontend.hop, limit);
  return griffin_lim(m, cfg_.griffin_lim_iters, length);
}

TrainOutcome train_codec(const CodecConfig& cfg, std::span<const MelSpectrogram> corpus,
                         const StepCallback& on_step) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("train: empty corpus");
  const PatchGridSpec spec = cfg.grid();

  std::vector<PatchSet> sets;
  std::size_t total = 0;
  for (const MelSpectrogram& m : corpus) {
    sets.push_back(patchify(m, spec));
    total += sets.back().count();
  }
  if (total < cfg.k) {
    throw ConfigError("train: K=" + std::to_string(cfg.k) + " exceeds the " +
                      std::to_string(total) + " training patches");
  }
  Matrix pool(total, spec.patch_size());
  std::size_t row = 0;
  for (const PatchSet& ps : sets) {
    std::copy(ps.patches.data().begin(), ps.patches.data().end(),
              pool.data().begin() + static_cast<std::ptrdiff_t>(row * spec.patch_size()));
    row += ps.count();
  }

  AutoencoderParams params = cfg.identity_mode
                                 ? AutoencoderParams::identity(spec.patch_size())
                                 : init_params_from_data(cfg.hidden, cfg.latent_dim, pool, cfg.seed);
  const KMeansResult km =
      kmeans_fit(params.encode_all(pool), cfg.k, {cfg.kmeans_iters, cfg.seed, cfg.kmeans_tol});
  Codebook cb = km.codebook;

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  AdamWState opt = AdamWState::init(params, cb);
  TrainOutcome out;
  out.training_patches = total;

  const std::size_t n = corpus.size();
  const std::size_t bs = std::min(tc.batch_size, n);
  const std::size_t steps_per_pass = (n + bs - 1) / bs;
  std::vector<std::uint64_t> usage(cfg.k, 0);
  std::vector<MelSpectrogram> batch;
  std::vector<TokenGrid> tokens;
  for (long step = 0; step < tc.total_steps; ++step) {
    batch.clear();
    const std::size_t start = (static_cast<std::size_t>(step) * bs) % n;
    for (std::size_t i = 0; i < bs; ++i) batch.push_back(corpus[(start + i) % n]);

    const LossReport r = train_step(params, cb, batch, opt, step, tc, spec, &tokens);
    out.history.push_back(r);
    if (on_step) on_step(step, r);
    for (const TokenGrid& g : tokens) {
      for (std::uint32_t idx : g.indices) ++usage[idx];
    }

    if ((static_cast<std::size_t>(step) + 1) % steps_per_pass == 0) {
      Matrix latents(0, 0);
      std::vector<std::uint32_t> codes;
      std::vector<double> flat;
      for (const MelSpectrogram& m : batch) {
        const Matrix z = params.encode_all(patchify(m, spec).patches);
        flat.insert(flat.end(), z.data().begin(), z.data().end());
      }
      for (const TokenGrid& g : tokens) codes.insert(codes.end(), g.indices.begin(), g.indices.end());
      latents = Matrix(codes.size(), cb.dim(), std::move(flat));
      out.reseeded_codes += reseed_dead_codes(cb, opt, usage, latents, codes);
      std::fill(usage.begin(), usage.end(), 0);
    }
  }

  for (Matrix& t : params.tensors()) t = round_to_float32(t);
  cb = Codebook(round_to_float32(cb.entries()));

  std::vector<TokenGrid> grids;
  for (const MelSpectrogram& m : corpus) grids.push_back(encode_tokens(params, cb, m, spec));
  out.usage = utilization(grids, cb.k());
  out.file = CodebookFile{std::move(cb), params.tensors()};
  return out;
}

std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".wav") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace melpatch
