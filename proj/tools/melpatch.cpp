// melpatch: train, encode, decode, evaluate and inspect the patch VQ codec.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "melpatch/bitstream.hpp"
#include "melpatch/codec.hpp"
#include "melpatch/errors.hpp"
#include "melpatch/metrics.hpp"
#include "melpatch/synth.hpp"

namespace fs = std::filesystem;
using namespace melpatch;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumerical = 4;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

CodecConfig load_cli_config(const Globals& g) {
  CodecConfig cfg = g.config_path.empty() ? CodecConfig{} : load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

std::string hex(const Digest& d) {
  std::string out;
  char buf[3];
  for (unsigned char b : d) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    out += buf;
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

MelSpectrogram analyze_file(const fs::path& p, const CodecConfig& cfg) {
  Waveform w = load_wav(p);
  if (w.sample_rate != cfg.frontend.sample_rate) w = resample(w, cfg.frontend.sample_rate);
  return mel_spectrogram(w, cfg.frontend);
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string corpus;
  std::string out;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const CodecConfig cfg = load_cli_config(g);
  const auto paths = list_wavs(a.corpus);
  if (paths.empty()) throw ConfigError("train: no .wav files in " + a.corpus);
  std::vector<MelSpectrogram> corpus;
  for (const auto& p : paths) corpus.push_back(analyze_file(p, cfg));

  const TrainOutcome out = train_codec(cfg, corpus, [&](long step, const LossReport& r) {
    if (g.verbose) {
      std::fprintf(stderr, "step %ld  total %.6f  l1 %.6f  codebook %.6f  commit %.6f\n", step,
                   r.total, r.recon_l1, r.codebook_loss, r.commitment_loss);
    }
  });

  save_codebook(a.out, out.file);
  const Digest digest = codebook_digest(serialize_codebook(out.file));
  {
    std::ofstream meta(a.out + ".meta");
    meta << to_config_text(cfg) << "# trained\n"
         << "# steps = " << out.history.size() << '\n'
         << "# utterances = " << corpus.size() << '\n'
         << "# training_patches = " << out.training_patches << '\n'
         << "# codebook_id = " << hex(digest) << '\n'
         << "# perplexity = " << out.usage.perplexity << '\n';
  }
  {
    std::ofstream csv(a.out + ".loss.csv");
    csv << "step,recon_l1,codebook_loss,commitment_loss,total\n";
    csv.precision(10);
    for (const LossReport& r : out.history) {
      csv << r.step << ',' << r.recon_l1 << ',' << r.codebook_loss << ',' << r.commitment_loss
          << ',' << r.total << '\n';
    }
  }

  std::printf("utterances: %zu  patches: %zu  K: %u  steps: %zu\n", corpus.size(),
              out.training_patches, cfg.k, out.history.size());
  if (!out.history.empty()) {
    const LossReport& first = out.history.front();
    const LossReport& last = out.history.back();
    std::printf("loss step %ld: total %.6f (l1 %.6f, codebook %.6f, commit %.6f)\n", first.step,
                first.total, first.recon_l1, first.codebook_loss, first.commitment_loss);
    std::printf("loss step %ld: total %.6f (l1 %.6f, codebook %.6f, commit %.6f)\n", last.step,
                last.total, last.recon_l1, last.codebook_loss, last.commitment_loss);
  }
  std::printf("perplexity: %.4f  dead codes: %zu  reseeded: %zu\n", out.usage.perplexity,
              out.usage.dead_count, out.reseeded_codes);
  std::printf("codebook: %s (id %s)\n", a.out.c_str(), hex(digest).c_str());
  return 0;
}

// ---------------------------------------------------------------- encode/decode

struct CodecArgs {
  std::string codebook;
  std::string in;
  std::string out;
};

int cmd_encode(const Globals& g, const CodecArgs& a) {
  const Codec codec = Codec::load(load_cli_config(g), a.codebook);
  const Waveform w = load_wav(a.in);
  const auto stream = codec.encode(w);
  write_file(a.out, stream);

  const CodecHeader h = decode_header(stream);
  const std::size_t tokens = h.rows() * h.cols();
  const double dur = w.duration_s();
  const std::uint64_t bits = payload_bits(h.rows(), h.cols(), h.k);
  std::printf("frames: %u  grid: %zux%zu  tokens: %zu\n", h.original_t, h.rows(), h.cols(),
              tokens);
  std::printf("payload: %llu bits  file: %zu bytes\n", static_cast<unsigned long long>(bits),
              stream.size());
  if (dur > 0.0) {
    std::printf("tokens/s: %.3f  measured: %.2f bps (nominal %.2f bps)\n", tokens / dur,
                static_cast<double>(bits) / dur, bitrate_bps(bitrate_spec(h)));
  }
  return 0;
}

int cmd_decode(const Globals& g, const CodecArgs& a) {
  const Codec codec = Codec::load(load_cli_config(g), a.codebook);
  const auto stream = read_file(a.in);
  const Waveform w = codec.decode(stream);
  save_wav(a.out, w);
  std::printf("samples: %zu  duration: %.4f s  rate: %d\n", w.samples.size(), w.duration_s(),
              w.sample_rate);
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string codebook;
  std::string corpus;
  std::string report;
  bool bypass = false;
};

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MELPATCH_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

MetricReport evaluate_one(const Codec& codec, const fs::path& p, bool bypass) {
  Waveform ref = load_wav(p);
  const int sr = codec.config().frontend.sample_rate;
  if (ref.sample_rate != sr) ref = resample(ref, sr);

  MetricReport r;
  r.utterance_id = p.stem().string();
  r.duration_s = ref.duration_s();
  Waveform deg = ref;
  if (!bypass) {
    auto t0 = std::chrono::steady_clock::now();
    const auto stream = codec.encode(ref);
    r.rtf_encode = rtf(seconds_since(t0), r.duration_s);
    t0 = std::chrono::steady_clock::now();
    deg = codec.decode(stream);
    r.rtf_decode = rtf(seconds_since(t0), r.duration_s);
    const CodecHeader h = decode_header(stream);
    r.bitrate_bps = static_cast<double>(payload_bits(h.rows(), h.cols(), h.k)) / r.duration_s;
  }
  deg.samples.resize(ref.samples.size(), 0.0);
  r.mcd = mcd(ref, deg);
  r.stoi = stoi(ref, deg);
  return r;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const Codec codec = Codec::load(load_cli_config(g), a.codebook);
  const auto paths = list_wavs(a.corpus);
  if (paths.empty()) throw ConfigError("eval: no .wav files in " + a.corpus);

  std::vector<std::optional<MetricReport>> results(paths.size());
  std::vector<std::string> failures(paths.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < paths.size(); i = next++) {
      try {
        results[i] = evaluate_one(codec, paths[i], a.bypass);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t workers = worker_count(paths.size());
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  std::vector<MetricReport> rows;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    if (results[i]) {
      rows.push_back(*results[i]);
    } else {
      std::fprintf(stderr, "eval: %s failed: %s\n", paths[i].string().c_str(),
                   failures[i].c_str());
    }
  }
  if (rows.empty()) throw FormatError("eval: every utterance failed");

  std::ofstream out(a.report);
  if (!out) throw ConfigError("eval: cannot write " + a.report);
  write_report_csv(out, rows);
  std::printf("evaluated %zu/%zu utterances with %zu worker(s); report: %s\n", rows.size(),
              paths.size(), workers, a.report.c_str());
  return 0;
}

// ---------------------------------------------------------------- info

int cmd_info(const std::string& in) {
  const auto bytes = read_file(in);
  const Unpacked u = unpack(bytes);
  const CodecHeader& h = u.header;
  std::printf("version: %u\n", CodecHeader::kVersion);
  std::printf("sample_rate: %u\n", h.sample_rate);
  std::printf("n_mels: %u\n", h.n_mels);
  std::printf("hop: %u\n", h.hop);
  std::printf("win_length: %u\n", h.win_length);
  std::printf("patch: %ux%u\n", h.patch_t, h.patch_f);
  std::printf("k: %u (%d bits/index)\n", h.k, bits_per_index(h.k));
  std::printf("codebook_id: %s\n", hex(h.codebook_id).c_str());
  std::printf("original_t: %u\n", h.original_t);
  std::printf("grid: %zux%zu (%zu tokens)\n", h.rows(), h.cols(), u.grid.indices.size());
  std::printf("bitrate: %g bps\n", bitrate_bps(bitrate_spec(h)));

  const TokenGrid grids[] = {u.grid};
  const Utilization use = utilization(grids, h.k);
  std::vector<std::pair<std::uint64_t, std::uint32_t>> top;
  for (std::uint32_t i = 0; i < use.histogram.size(); ++i) {
    if (use.histogram[i] > 0) top.emplace_back(use.histogram[i], i);
  }
  std::sort(top.begin(), top.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::printf("distinct codes: %zu  perplexity: %.3f\n", top.size(), use.perplexity);
  std::printf("most frequent:");
  for (std::size_t i = 0; i < std::min<std::size_t>(5, top.size()); ++i) {
    std::printf(" %u(x%llu)", top[i].second, static_cast<unsigned long long>(top[i].first));
  }
  std::printf("\n");
  return 0;
}

// ---------------------------------------------------------------- misc

int cmd_bitrate(const BitrateSpec& s) {
  std::printf("tokens/s: %g\n", tokens_per_second(s));
  std::printf("%g bps\n", bitrate_bps(s));
  return 0;
}

struct SynthArgs {
  std::string out;
  std::size_t count = 8;
  double duration = 2.0;
  int sample_rate = 16000;
  std::string kind = "speech";
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const auto paths = write_synth_corpus(a.out, a.count, a.duration, a.sample_rate,
                                        g.seed.value_or(0), parse_synth_kind(a.kind));
  std::printf("wrote %zu files to %s\n", paths.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"melpatch: mel-spectrogram patch VQ speech codec"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Config file (dotted key = value lines)");
  app.add_option_function<std::uint64_t>("--seed", [&](std::uint64_t s) { g.seed = s; },
                                         "Override the config seed");
  app.add_flag("--verbose,-v", g.verbose, "Per-step progress on stderr");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Fit a codebook (and projection) on a WAV directory");
  train->add_option("--corpus", ta.corpus, "Directory of .wav files")->required();
  train->add_option("--out", ta.out, "Output codebook file")->required();

  CodecArgs ea;
  auto* encode = app.add_subcommand("encode", "WAV -> token stream");
  encode->add_option("--codebook", ea.codebook)->required();
  encode->add_option("in", ea.in)->required();
  encode->add_option("out", ea.out)->required();

  CodecArgs da;
  auto* decode = app.add_subcommand("decode", "Token stream -> WAV");
  decode->add_option("--codebook", da.codebook)->required();
  decode->add_option("in", da.in)->required();
  decode->add_option("out", da.out)->required();

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Round-trip a corpus and write a metric CSV");
  eval->add_option("--codebook", va.codebook)->required();
  eval->add_option("--corpus", va.corpus)->required();
  eval->add_option("--report", va.report)->required();
  eval->add_flag("--bypass-codec", va.bypass, "Debug: score each reference against itself");

  std::string info_in;
  auto* info = app.add_subcommand("info", "Print a stream's header and token statistics");
  info->add_option("in", info_in)->required();

  BitrateSpec bs;
  auto* bitrate = app.add_subcommand("bitrate", "Nominal bitrate for a configuration");
  bitrate->add_option("--sr", bs.sample_rate)->capture_default_str();
  bitrate->add_option("--hop", bs.hop)->capture_default_str();
  bitrate->add_option("--dt", bs.downsample_t)->capture_default_str();
  bitrate->add_option("--df", bs.downsample_f)->capture_default_str();
  bitrate->add_option("--mels", bs.n_mels)->capture_default_str();
  bitrate->add_option("--k", bs.k)->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth-corpus", "Write deterministic synthetic WAVs");
  synth->add_option("--out", sa.out)->required();
  synth->add_option("--count", sa.count)->capture_default_str();
  synth->add_option("--duration", sa.duration, "Seconds per file")->capture_default_str();
  synth->add_option("--sr", sa.sample_rate)->capture_default_str();
  synth->add_option("--kind", sa.kind, "speech | on-off")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) return cmd_train(g, ta);
    if (*encode) return cmd_encode(g, ea);
    if (*decode) return cmd_decode(g, da);
    if (*eval) return cmd_eval(g, va);
    if (*info) return cmd_info(info_in);
    if (*bitrate) {
      if (bs.k < 1 || bs.downsample_t < 1 || bs.downsample_f < 1 || !(bs.hop > 0) ||
          !(bs.sample_rate > 0)) {
        throw ConfigError("bitrate: every parameter must be positive");
      }
      return cmd_bitrate(bs);
    }
    if (*synth) return cmd_synth(g, sa);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFormat;
  }
  return kExitConfig;
}
