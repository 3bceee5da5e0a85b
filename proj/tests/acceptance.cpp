// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "melpatch/bitstream.hpp"
#include "melpatch/codec.hpp"
#include "melpatch/metrics.hpp"
#include "melpatch/rng.hpp"
#include "melpatch/synth.hpp"

namespace fs = std::filesystem;
using namespace melpatch;

namespace {

class Criterion {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool passed() const { return failures_.empty(); }
  std::string summary() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int run_cli(const std::string& args, std::string* out) {
  const std::string cmd = std::string(MELPATCH_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return -1;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) *out += buf.data();
  const int status = ::pclose(pipe);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::uint32_t brute_nearest(const Matrix& cb, std::span<const double> v) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.rows(); ++k) {
    double d = 0;
    for (std::size_t i = 0; i < v.size(); ++i) d += (v[i] - cb(k, i)) * (v[i] - cb(k, i));
    if (d < best_d) best_d = d, best = static_cast<std::uint32_t>(k);
  }
  return best;
}

double mel_l1(const MelSpectrogram& a, const MelSpectrogram& b) {
  const std::size_t t = std::min(a.frames(), b.frames());
  double s = 0;
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t f = 0; f < a.bands(); ++f) s += std::abs(a.values(i, f) - b.values(i, f));
  }
  return s / static_cast<double>(t * a.bands());
}

MelSpectrogram random_mel(std::size_t frames, std::size_t bands, Rng& rng) {
  MelSpectrogram m{Matrix(frames, bands), FrontendConfig{.n_mels = static_cast<int>(bands)}};
  for (double& v : m.values.data()) v = rng.uniform(-9.0, 2.0);
  return m;
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("melpatch_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

// ------------------------------------------------------------------ 1

void bitrate_identity(Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const double a = bitrate_bps({16000, 128, 4, 4, 80, 4096});
  const double b = bitrate_bps({16000, 128, 4, 4, 80, 1024});
  const double d = bitrate_bps({8000, 128, 4, 4, 80, 4096});
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  c.check(a == 7500.0, "defaults gave " + fmt("%.17g", a));
  c.check(b == 6250.0, "K=1024 gave " + fmt("%.17g", b));
  c.check(d == 3750.0, "sr=8000 gave " + fmt("%.17g", d));
  c.check(ms < 1.0, "took " + fmt("%.3f ms", ms));
  c.note("7500 / 6250 / 3750 bps");
}

// ------------------------------------------------------------------ 2

void grid_geometry(Criterion& c) {
  const FrontendConfig fe;
  const PatchGridSpec spec;
  const double frames_per_s = static_cast<double>(fe.sample_rate) / fe.hop;
  const GridDims one_s = grid_dims(static_cast<std::size_t>(frames_per_s), fe.n_mels, spec);
  const double tokens_per_s = frames_per_s / spec.patch_t * one_s.cols;
  c.check(frames_per_s == 125.0, "frames/s " + fmt("%g", frames_per_s));
  c.check(frames_per_s / spec.patch_t == 31.25, "rows/s");
  c.check(one_s.cols == 20, "cols");
  c.check(tokens_per_s == 625.0, "tokens/s " + fmt("%g", tokens_per_s));

  // End to end through the CLI with a default-shaped (K = 4096) codebook.
  const fs::path dir = workdir() / "c2";
  fs::create_directories(dir);
  Rng rng(2);
  Matrix e(4096, 16);
  for (double& v : e.data()) v = rng.uniform(-11.5, 1.0);
  save_codebook(dir / "id.mpcb", CodebookFile{Codebook(round_to_float32(e)), {}});
  std::ofstream(dir / "id.cfg") << "model.identity_mode = true\n";
  save_wav(dir / "ten.wav", synth_utterance(10.0, 16000, 10));
  std::string out;
  const int code = run_cli("--config " + (dir / "id.cfg").string() + " encode --codebook " +
                               (dir / "id.mpcb").string() + " " + (dir / "ten.wav").string() + " " +
                               (dir / "ten.mpc").string(),
                           &out);
  c.check(code == 0, "encode exit " + std::to_string(code) + ": " + out);
  if (code != 0) return;
  const Unpacked u = unpack(read_file(dir / "ten.mpc"));
  const long tokens = static_cast<long>(u.grid.indices.size());
  c.check(std::abs(tokens - 6250) <= static_cast<long>(u.grid.cols), "10 s gave " + std::to_string(tokens) + " tokens");
  c.check(out.find("tokens: " + std::to_string(tokens)) != std::string::npos, "CLI token count missing");
  c.note("10 s -> " + std::to_string(tokens) + " tokens (" + std::to_string(u.grid.rows) + "x" +
         std::to_string(u.grid.cols) + ")");
}

// ------------------------------------------------------------------ 3

void bitstream_soundness(Criterion& c) {
  Rng rng(3);
  int round_trips = 0;
  for (int trial = 0; trial < 1200; ++trial) {
    CodecHeader h;
    h.patch_t = static_cast<std::uint16_t>(1 + rng.next() % 6);
    h.patch_f = static_cast<std::uint16_t>(1 + rng.next() % 6);
    h.n_mels = static_cast<std::uint16_t>(h.patch_f * (1 + rng.next() % 24));
    h.sample_rate = 8000 + static_cast<std::uint32_t>(rng.next() % 40000);
    h.k = 2 + static_cast<std::uint32_t>(rng.next() % 4095);
    h.original_t = static_cast<std::uint32_t>(rng.next() % 80);
    for (auto& b : h.codebook_id) b = static_cast<unsigned char>(rng.next());
    TokenGrid g{h.rows(), h.cols(), h.original_t, {}};
    for (std::size_t i = 0; i < g.rows * g.cols; ++i) g.indices.push_back(static_cast<std::uint32_t>(rng.next() % h.k));
    const auto bytes = pack(g, h);
    const Unpacked u = unpack(bytes);
    const bool size_ok = bytes.size() == 40 + (payload_bits(g.rows, g.cols, h.k) + 7) / 8;
    if (u.header == h && u.grid == g && size_ok) ++round_trips;
  }
  c.check(round_trips == 1200, std::to_string(1200 - round_trips) + " round trips differ");

  std::ifstream in(std::string(MELPATCH_TEST_DATA) + "/golden_k4096_1_2.mpc", std::ios::binary);
  const std::vector<unsigned char> golden{std::istreambuf_iterator<char>(in), {}};
  CodecHeader gh;
  gh.n_mels = 8;
  gh.original_t = 4;
  for (int i = 0; i < 8; ++i) gh.codebook_id[i] = static_cast<unsigned char>(i + 1);
  const auto mine = pack(TokenGrid{1, 2, 4, {1, 2}}, gh);
  c.check(mine == golden, "golden file differs");
  c.check(mine.size() == 43 && mine[40] == 0x00 && mine[41] == 0x10 && mine[42] == 0x02, "payload bytes");

  const AutoencoderParams mlp = AutoencoderParams::random(16, 16, 8, 1);
  Matrix e(256, 8);
  for (double& v : e.data()) v = rng.normal();
  const Codebook cb(e);
  int exact = 0, cases = 0;
  for (int trial = 0; trial < 60; ++trial, ++cases) {
    const std::size_t frames = 1 + rng.next() % 150;
    MelSpectrogram m{Matrix(frames, 80), FrontendConfig{}};
    for (double& v : m.values.data()) v = rng.uniform(-11.0, 3.0);
    StreamEncoder enc(mlp, cb, 80);
    std::vector<std::uint32_t> streamed;
    for (std::size_t pos = 0; pos < frames;) {
      const std::size_t n = std::min<std::size_t>(frames - pos, 1 + rng.next() % 9);
      Matrix chunk(n, 80);
      for (std::size_t t = 0; t < n; ++t) std::copy(m.values.row(pos + t).begin(), m.values.row(pos + t).end(), chunk.row(t).begin());
      for (const auto& row : enc.push_frames(chunk)) streamed.insert(streamed.end(), row.begin(), row.end());
      pos += n;
    }
    for (const auto& row : enc.flush()) streamed.insert(streamed.end(), row.begin(), row.end());
    exact += streamed == encode_tokens(mlp, cb, m).indices;
  }
  c.check(exact == cases, std::to_string(cases - exact) + " streaming/batch mismatches");
  c.note("1200 round trips, golden bytes 00 10 02, " + std::to_string(cases) + " streaming cases");
}

// ------------------------------------------------------------------ 4

void quantizer_correctness(Criterion& c) {
  Rng rng(4);
  int agree = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.next() % 64;
    const std::size_t d = 1 + rng.next() % 16;
    Matrix e(k, d), z(640, d);
    for (double& v : e.data()) v = rng.normal();
    for (double& v : z.data()) v = 1.3 * rng.normal();
    const Codebook cb(e);
    const TokenGrid g = quantize(cb, z, 32, 20, 128);
    bool ok = true;
    for (std::size_t n = 0; n < z.rows(); ++n) ok = ok && g.indices[n] == brute_nearest(e, z.row(n));
    agree += ok;
  }
  c.check(agree == 100, std::to_string(100 - agree) + " grids disagree with the oracle");

  Matrix pts(800, 4);
  for (double& v : pts.data()) v = rng.normal();
  const KMeansResult km = kmeans_fit(pts, 32, {60, 7, 0.0});
  bool monotone = true;
  for (std::size_t i = 1; i < km.inertia_history.size(); ++i) {
    monotone = monotone && km.inertia_history[i] <= km.inertia_history[i - 1] * (1 + 1e-12);
  }
  c.check(monotone, "k-means inertia increased");
  c.check(km.inertia_history.size() >= 2, "k-means ran fewer than two passes");

  const Codebook tie(Matrix(3, 2, std::vector<double>{0, 0, 1, 1, 0, 0}));
  const std::vector<double> mid{0.5, 0.5};
  const std::vector<double> dup{0.1, 0.0};
  bool ties = true;
  for (int i = 0; i < 10; ++i) ties = ties && nearest(tie, mid).index == 0 && nearest(tie, dup).index == 0;
  c.check(ties, "tie-break not lowest index");
  c.note("100/100 grids exact, " + std::to_string(km.inertia_history.size()) + " monotone k-means passes");
}

// ------------------------------------------------------------------ 5

void loss_gradient_fidelity(Criterion& c) {
  const std::vector<double> z{1, 0}, e{0, 0};
  const VqLossTerms t = vq_loss(z, e, 0.25);
  c.check(t.codebook_term == 1.0 && t.commitment_term == 0.25, "vq_loss((1,0),(0,0))");
  const VqLossTerms zero = vq_loss(z, z, 0.25);
  c.check(zero.codebook_term == 0.0 && zero.commitment_term == 0.0, "vq_loss(z,z)");
  c.check(vq_loss(z, e, 0.5).commitment_term == 0.5 && vq_loss(z, e, 0.5).codebook_term == 1.0, "beta linearity");

  Rng rng(5);
  const std::vector<MelSpectrogram> batch{random_mel(8, 16, rng), random_mel(7, 16, rng)};
  const PatchGridSpec spec;

  const AutoencoderParams net = AutoencoderParams::random(16, 8, 4, 3);
  Matrix ce(6, 4);
  for (double& v : ce.data()) v = rng.normal();
  const GradCheckResult full = grad_check(net, Codebook(ce), batch, spec);
  c.check(full.all_finite, "full mode produced non-finite gradients");
  c.check(full.max_rel_error < 1e-3, "full mode rel error " + fmt("%.3g", full.max_rel_error));
  c.check(full.probed >= 100, "full mode probed only " + std::to_string(full.probed));

  Matrix ie(6, 16);
  for (double& v : ie.data()) v = 3.0 * rng.normal();
  const GradCheckResult ident = grad_check(AutoencoderParams::identity(16), Codebook(ie), batch, spec);
  c.check(ident.all_finite, "identity mode produced non-finite gradients");
  c.check(ident.max_rel_error < 1e-4, "identity mode rel error " + fmt("%.3g", ident.max_rel_error));
  c.check(ident.probed >= 50, "identity mode probed only " + std::to_string(ident.probed));

  const LossReport r = evaluate_loss(net, Codebook(ce), batch, spec, 0.25);
  c.check(r.total == r.recon_l1 + r.codebook_loss + r.commitment_loss, "total does not decompose");
  c.note("max rel error full " + fmt("%.2e", full.max_rel_error) + " (" + std::to_string(full.probed) +
         " probes), identity " + fmt("%.2e", ident.max_rel_error) + " (" + std::to_string(ident.probed) + " probes)");
}

// ------------------------------------------------------------------ 6

std::unique_ptr<Codec> g_trained;  // reused by criterion 8

void training_descent(Criterion& c) {
  CodecConfig cfg;
  cfg.k = 256;
  cfg.seed = 6;
  std::vector<MelSpectrogram> corpus;
  for (int i = 0; i < 8; ++i) corpus.push_back(mel_spectrogram(synth_utterance(2.0, 16000, 600 + i), cfg.frontend));
  const TrainOutcome out = train_codec(cfg, corpus);
  c.check(out.history.size() == 200, "ran " + std::to_string(out.history.size()) + " steps");
  const double first = out.history.front().total;
  g_trained = std::make_unique<Codec>(cfg, out.file);
  const LossReport after = evaluate_loss(g_trained->params(), g_trained->codebook(), corpus, cfg.grid(),
                                         cfg.train.commitment_beta);
  c.check(after.total < first, "loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", after.total));

  CodecConfig two;
  two.k = 2;
  two.identity_mode = true;
  two.seed = 6;
  std::vector<MelSpectrogram> onoff;
  for (int i = 0; i < 8; ++i) {
    onoff.push_back(mel_spectrogram(synth_utterance(2.0, 16000, 700 + i, SynthKind::OnOff), two.frontend));
  }
  const TrainOutcome k2 = train_codec(two, onoff);
  c.check(k2.usage.perplexity > 1.9, "K=2 perplexity " + fmt("%.4f", k2.usage.perplexity));
  c.note("total " + fmt("%.4f", first) + " -> " + fmt("%.4f", after.total) + ", K=2 perplexity " +
         fmt("%.4f", k2.usage.perplexity));
}

// ------------------------------------------------------------------ 7

void metric_sanity(Criterion& c) {
  const Waveform a = synth_utterance(3.0, 16000, 70);
  c.check(mcd(a, a) == 0.0, "mcd(a,a) != 0");
  Matrix c1(10, 13), c2(10, 13);
  for (std::size_t t = 0; t < 10; ++t) c2(t, (3 * t) % 13) = 1.0;
  const double closed = 10.0 / std::log(10.0) * std::sqrt(2.0);
  c.check(std::abs(mcd_from_cepstra(c1, c2) - closed) < 1e-9, "sqrt(2) case " + fmt("%.12f", mcd_from_cepstra(c1, c2)));
  const double self = stoi(a, a);
  c.check(std::abs(self - 1.0) < 1e-6, "stoi(a,a) = " + fmt("%.9f", self));

  Rng rng(71);
  std::vector<double> noise(a.samples.size());
  double px = 0, pn = 0;
  for (std::size_t i = 0; i < noise.size(); ++i) {
    noise[i] = rng.normal();
    px += a.samples[i] * a.samples[i];
    pn += noise[i] * noise[i];
  }
  std::vector<double> scores;
  for (double snr : {20.0, 0.0, -20.0}) {
    const double g = std::sqrt(px / pn / std::pow(10.0, snr / 10.0));
    Waveform y = a;
    for (std::size_t i = 0; i < noise.size(); ++i) y.samples[i] += g * noise[i];
    scores.push_back(stoi(a, y));
  }
  c.check(scores[0] > scores[1] && scores[1] > scores[2], "stoi not decreasing with SNR");
  c.note("stoi at 20/0/-20 dB: " + fmt("%.3f", scores[0]) + " / " + fmt("%.3f", scores[1]) + " / " +
         fmt("%.3f", scores[2]));
}

// ------------------------------------------------------------------ 8

void end_to_end(Criterion& c) {
  if (!g_trained) {
    c.check(false, "no trained codec (criterion 6 did not finish)");
    return;
  }
  const Codec& codec = *g_trained;
  int better = 0;
  const int n = 6;
  double worst_margin = std::numeric_limits<double>::infinity();
  double enc_time = 0, dur = 0;
  for (int i = 0; i < n; ++i) {
    const Waveform w = synth_utterance(2.0 + 0.37 * i, 16000, 800 + i);
    const auto t0 = std::chrono::steady_clock::now();
    const auto stream = codec.encode(w);
    enc_time += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    dur += w.duration_s();
    const Waveform y = codec.decode(stream);
    const MelSpectrogram ref = codec.analyze(w);
    const double rec = mel_l1(ref, codec.analyze(y));
    const double sil = mel_l1(ref, silent_mel(ref.frames(), codec.config().frontend));
    better += rec < sil;
    worst_margin = std::min(worst_margin, sil - rec);
  }
  const double enc_rtf = rtf(enc_time, dur);
  c.check(better == n, std::to_string(n - better) + " utterances no better than silence");
  c.check(enc_rtf < 1.0, "encode RTF " + fmt("%.3f", enc_rtf));
  c.note(std::to_string(better) + "/" + std::to_string(n) + " better than silence (min margin " +
         fmt("%.3f", worst_margin) + "), encode RTF " + fmt("%.4f", enc_rtf));
}

}  // namespace

int main() {
  struct Entry {
    int id;
    const char* name;
    double budget_s;
    std::function<void(Criterion&)> fn;
  };
  const std::vector<Entry> entries = {
      {1, "bitrate identity", 1.0, bitrate_identity},
      {2, "grid geometry", 60.0, grid_geometry},
      {3, "bitstream soundness", 10.0, bitstream_soundness},
      {4, "quantizer correctness", 30.0, quantizer_correctness},
      {5, "loss/gradient fidelity", 60.0, loss_gradient_fidelity},
      {6, "desk-scale training descent", 300.0, training_descent},
      {7, "metric sanity", 60.0, metric_sanity},
      {8, "end-to-end better than silence", 120.0, end_to_end},
  };
  int failed = 0;
  for (const Entry& e : entries) {
    Criterion c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      e.fn(c);
    } catch (const std::exception& ex) {
      c.check(false, std::string("exception: ") + ex.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.check(s < e.budget_s, "over time budget");
    std::printf("%s criterion %d (%s) [%.3f s]: %s\n", c.passed() ? "PASS" : "FAIL", e.id, e.name, s,
                c.summary().c_str());
    std::fflush(stdout);
    failed += !c.passed();
  }
  fs::remove_all(workdir());
  return failed == 0 ? 0 : 1;
}
