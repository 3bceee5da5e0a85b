#include <cmath>
#include <limits>

#include "doctest.h"
#include "melpatch/autoencoder.hpp"
#include "melpatch/errors.hpp"
#include "melpatch/rng.hpp"
#include "melpatch/train.hpp"

using namespace melpatch;

namespace {

MelSpectrogram random_mel(std::size_t frames, std::uint64_t seed, std::size_t bands = 80) {
  Rng rng(seed);
  MelSpectrogram m{Matrix(frames, bands), FrontendConfig{.n_mels = static_cast<int>(bands)}};
  for (double& v : m.values.data()) v = rng.uniform(-9.0, 2.0);
  return m;
}

Codebook random_codebook(std::size_t k, std::size_t d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix e(k, d);
  for (double& v : e.data()) v = scale * rng.normal();
  return Codebook(e);
}

Codebook codebook_of(const Matrix& rows) { return Codebook(rows); }

}  // namespace

TEST_CASE("recon loss") {
  const MelSpectrogram x = random_mel(12, 1);
  CHECK(recon_loss(x, x) == 0.0);
  MelSpectrogram y = x;
  for (double& v : y.values.data()) v += 0.5;
  CHECK(recon_loss(x, y) == doctest::Approx(0.5).epsilon(1e-14));
  const MelSpectrogram z = random_mel(12, 2);
  double s = 0;
  for (std::size_t t = 0; t < 12; ++t) {
    for (std::size_t f = 0; f < 80; ++f) s += std::abs(x.values(t, f) - z.values(t, f));
  }
  CHECK(recon_loss(x, z) == doctest::Approx(s / (12 * 80)).epsilon(1e-13));
  CHECK_THROWS(recon_loss(x, random_mel(11, 1)));
}

TEST_CASE("forward: lossless identity case, shapes, mean-patch case") {
  const PatchGridSpec spec;
  const MelSpectrogram m = random_mel(128, 3);
  const AutoencoderParams id = AutoencoderParams::identity(16);
  const PatchSet ps = patchify(m, spec);
  const ForwardResult exact = forward(id, codebook_of(ps.patches), m, spec);
  CHECK(exact.report.recon_l1 == 0.0);
  CHECK(exact.reconstruction.values == m.values);
  CHECK(exact.tokens.rows == 32);
  CHECK(exact.tokens.cols == 20);

  // K = 1, entry = mean patch: l1 = mean absolute deviation from the mean patch.
  Matrix mean(1, 16);
  for (std::size_t n = 0; n < ps.count(); ++n) {
    for (std::size_t i = 0; i < 16; ++i) mean(0, i) += ps.patches(n, i) / ps.count();
  }
  double mad = 0;
  for (std::size_t n = 0; n < ps.count(); ++n) {
    for (std::size_t i = 0; i < 16; ++i) mad += std::abs(ps.patches(n, i) - mean(0, i));
  }
  mad /= static_cast<double>(ps.count() * 16);
  const ForwardResult r = forward(id, Codebook(mean), m, spec);
  CHECK(r.report.recon_l1 == doctest::Approx(mad).epsilon(1e-12));
  for (auto i : r.tokens.indices) CHECK(i == 0);
  CHECK(r.report.total == r.report.recon_l1 + r.report.codebook_loss + r.report.commitment_loss);
  CHECK(r.report.commitment_loss == doctest::Approx(0.25 * r.report.codebook_loss).epsilon(1e-15));

  CHECK_THROWS(forward(id, Codebook(mean), random_mel(8, 1, 78), spec));
}

TEST_CASE("autoencoder params: shapes, tensors, validation") {
  const AutoencoderParams p = AutoencoderParams::random(16, 8, 4, 1);
  CHECK(!p.identity_mode());
  CHECK(p.tensors().size() == 8);
  CHECK(p.tensors()[AutoencoderParams::kEncW1].rows() == 8);
  CHECK(p.tensors()[AutoencoderParams::kEncW1].cols() == 16);
  CHECK(p.tensors()[AutoencoderParams::kDecW2].rows() == 16);
  CHECK(AutoencoderParams::from_tensors(p.tensors()) == p);
  auto broken = p.tensors();
  broken[AutoencoderParams::kEncB2] = Matrix(3, 1);
  CHECK_THROWS(AutoencoderParams::from_tensors(broken));

  // Hand-evaluated encoder for a single patch.
  std::vector<double> x(16);
  for (int i = 0; i < 16; ++i) x[i] = 0.1 * i - 0.7;
  std::vector<double> z(4);
  p.encode(x, z);
  const auto& t = p.tensors();
  for (int d = 0; d < 4; ++d) {
    double acc = t[AutoencoderParams::kEncB2](d, 0);
    for (int h = 0; h < 8; ++h) {
      double a = t[AutoencoderParams::kEncB1](h, 0);
      for (int i = 0; i < 16; ++i) a += t[AutoencoderParams::kEncW1](h, i) * x[i];
      acc += t[AutoencoderParams::kEncW2](d, h) * std::tanh(a);
    }
    CHECK(z[d] == doctest::Approx(acc).epsilon(1e-13));
  }
}

TEST_CASE("lr schedule") {
  TrainConfig c;
  CHECK(lr_schedule(0, c) == 0.0);
  CHECK(lr_schedule(500, c) == doctest::Approx(1.5e-4));
  CHECK(lr_schedule(1000, c) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(lr_schedule(1000 + (150000 - 1000) / 2, c) == doctest::Approx(1.5e-4).epsilon(1e-12));
  CHECK(lr_schedule(150000, c) == doctest::Approx(0.0).epsilon(1e-18));
  CHECK_THROWS(lr_schedule(-1, c));
  CHECK_THROWS(lr_schedule(150001, c));
  TrainConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.warmup_steps = bad.total_steps + 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train step: null update, identity mode, decomposition, determinism") {
  const PatchGridSpec spec;
  const std::vector<MelSpectrogram> batch{random_mel(16, 4), random_mel(13, 5)};
  const AutoencoderParams p0 = AutoencoderParams::random(16, 12, 6, 9);
  const Codebook cb0 = random_codebook(32, 6, 10);

  TrainConfig zero;
  zero.lr_peak = 0.0;
  zero.warmup_steps = 0;
  zero.total_steps = 10;
  AutoencoderParams p = p0;
  Codebook cb = cb0;
  AdamWState opt = AdamWState::init(p, cb);
  const LossReport r = train_step(p, cb, batch, opt, 3, zero, spec);
  CHECK(p == p0);
  CHECK(cb == cb0);
  CHECK(r.total == r.recon_l1 + r.codebook_loss + r.commitment_loss);
  CHECK(r.step == 3);

  TrainConfig cfg;
  cfg.warmup_steps = 0;
  cfg.total_steps = 10;
  cfg.lr_peak = 1e-2;
  const AutoencoderParams id0 = AutoencoderParams::identity(16);
  AutoencoderParams id = id0;
  Codebook icb = random_codebook(8, 16, 11);
  const Codebook icb0 = icb;
  AdamWState iopt = AdamWState::init(id, icb);
  train_step(id, icb, batch, iopt, 0, cfg, spec);
  CHECK(id == id0);
  CHECK(!(icb == icb0));

  auto run = [&] {
    AutoencoderParams q = p0;
    Codebook c = cb0;
    AdamWState o = AdamWState::init(q, c);
    std::vector<double> totals;
    for (long s = 0; s < 5; ++s) totals.push_back(train_step(q, c, batch, o, s, cfg, spec).total);
    return std::make_pair(totals, q);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("train step: non-finite input throws and leaves state untouched") {
  const PatchGridSpec spec;
  std::vector<MelSpectrogram> batch{random_mel(8, 4)};
  batch[0].values(2, 5) = std::numeric_limits<double>::quiet_NaN();
  AutoencoderParams p = AutoencoderParams::random(16, 8, 4, 1);
  Codebook cb = random_codebook(4, 4, 2);
  const AutoencoderParams p0 = p;
  const Codebook cb0 = cb;
  AdamWState opt = AdamWState::init(p, cb);
  TrainConfig cfg;
  cfg.warmup_steps = 0;
  cfg.total_steps = 10;
  CHECK_THROWS_AS(train_step(p, cb, batch, opt, 1, cfg, spec), NumericalError);
  CHECK(p == p0);
  CHECK(cb == cb0);
  CHECK(opt.updates == 0);
}

TEST_CASE("weight decay is decoupled and skips the codebook") {
  // Same step with and without decay differs by exactly lr * wd * w.
  const PatchGridSpec spec;
  AutoencoderParams p = AutoencoderParams::random(16, 8, 16, 3);
  const PatchSet ps = patchify(random_mel(8, 7).values, spec);
  const std::vector<MelSpectrogram> batch{random_mel(8, 7)};
  Codebook cb(p.encode_all(ps.patches));
  TrainConfig a;
  a.warmup_steps = 0;
  a.total_steps = 10;
  a.lr_peak = 1e-3;
  TrainConfig b = a;
  b.weight_decay = 0.0;
  AutoencoderParams pa = p, pb = p;
  Codebook ca = cb, cbb = cb;
  AdamWState oa = AdamWState::init(pa, ca), ob = AdamWState::init(pb, cbb);
  train_step(pa, ca, batch, oa, 0, a, spec);
  train_step(pb, cbb, batch, ob, 0, b, spec);
  CHECK(ca == cbb);
  const double lr = lr_schedule(0, a);
  for (std::size_t t = 0; t < p.tensors().size(); ++t) {
    for (std::size_t i = 0; i < p.tensors()[t].size(); ++i) {
      const double w = p.tensors()[t].data()[i];
      CHECK(pa.tensors()[t].data()[i] ==
            doctest::Approx(pb.tensors()[t].data()[i] - lr * a.weight_decay * w).epsilon(1e-12));
    }
  }
}

TEST_CASE("straight-through gradient equals plain autoencoder when codebook holds every latent") {
  const PatchGridSpec spec;
  const std::vector<MelSpectrogram> batch{random_mel(8, 21), random_mel(12, 22)};
  const AutoencoderParams p = AutoencoderParams::random(16, 10, 5, 4);
  Matrix all(0, 5);
  std::vector<double> flat;
  for (const auto& m : batch) {
    const Matrix z = p.encode_all(patchify(m, spec).patches);
    flat.insert(flat.end(), z.data().begin(), z.data().end());
  }
  const Codebook cb(Matrix(flat.size() / 5, 5, flat));
  const LossAndGradients st = loss_and_gradients(p, cb, batch, spec, 0.25, GradientMode::StraightThrough);
  const LossAndGradients ae = loss_and_gradients(p, cb, batch, spec, 0.25, GradientMode::Unquantized);
  CHECK(st.report.codebook_loss == 0.0);
  CHECK(st.report.recon_l1 == ae.report.recon_l1);
  for (std::size_t t = 0; t < p.tensors().size(); ++t) {
    for (std::size_t i = 0; i < p.tensors()[t].size(); ++i) {
      CHECK(std::abs(st.grads.params[t].data()[i] - ae.grads.params[t].data()[i]) <= 1e-10);
    }
  }
}

TEST_CASE("codebook gradient routes only the codebook term") {
  // Identity mode, K = 1: d/de of mean_n ||z_n - e||^2 = 2 (e - mean z) / ... per patch mean.
  const PatchGridSpec spec;
  const std::vector<MelSpectrogram> batch{random_mel(8, 31)};
  const AutoencoderParams id = AutoencoderParams::identity(16);
  const PatchSet ps = patchify(batch[0], spec);
  const Codebook cb = random_codebook(1, 16, 5);
  const LossAndGradients st = loss_and_gradients(id, cb, batch, spec, 0.25, GradientMode::StraightThrough);
  const double n = static_cast<double>(ps.count());
  for (std::size_t i = 0; i < 16; ++i) {
    double g = 0;
    for (std::size_t p = 0; p < ps.count(); ++p) g += 2.0 * (cb.entries()(0, i) - ps.patches(p, i)) / n;
    CHECK(st.grads.codebook(0, i) == doctest::Approx(g).epsilon(1e-12));
  }
}

TEST_CASE("grad check: identity mode, toy network, degenerate case") {
  const PatchGridSpec spec;
  const std::vector<MelSpectrogram> batch{random_mel(8, 41, 16), random_mel(7, 42, 16)};

  const AutoencoderParams id = AutoencoderParams::identity(16);
  const Codebook icb = random_codebook(6, 16, 7, 3.0);
  const GradCheckResult ri = grad_check(id, icb, batch, spec);
  CHECK(ri.all_finite);
  CHECK(ri.probed > 50);
  CHECK(ri.max_rel_error < 1e-4);
  MESSAGE("identity: probed ", ri.probed, " skipped ", ri.skipped, " max rel ", ri.max_rel_error);

  const AutoencoderParams p = AutoencoderParams::random(16, 8, 4, 3);
  const Codebook cb = random_codebook(6, 4, 8);
  const GradCheckResult rf = grad_check(p, cb, batch, spec);
  CHECK(rf.all_finite);
  CHECK(rf.probed > 100);
  CHECK(rf.max_rel_error < 1e-3);
  MESSAGE("full: probed ", rf.probed, " skipped ", rf.skipped, " max rel ", rf.max_rel_error);

  std::vector<Matrix> zeros;
  for (const Matrix& t : p.tensors()) zeros.emplace_back(t.rows(), t.cols());
  const AutoencoderParams zp = AutoencoderParams::from_tensors(zeros);
  MelSpectrogram zm{Matrix(8, 16), FrontendConfig{.n_mels = 16}};
  const std::vector<MelSpectrogram> zb{zm};
  const GradCheckResult rz = grad_check(zp, Codebook(Matrix(2, 4)), zb, spec);
  CHECK(rz.all_finite);
}

TEST_CASE("training reduces loss on a fixed batch") {
  const PatchGridSpec spec;
  std::vector<MelSpectrogram> batch;
  for (int i = 0; i < 8; ++i) {
    MelSpectrogram m = random_mel(24, 100 + i);
    // Smooth structure so the small network has something to learn.
    for (std::size_t t = 0; t < 24; ++t) {
      for (std::size_t f = 0; f < 80; ++f) {
        m.values(t, f) = -6.0 + 3.0 * std::sin(0.15 * f + 0.3 * t + i) + 0.2 * m.values(t, f) / 9.0;
      }
    }
    batch.push_back(m);
  }
  Matrix pool(0, 16);
  std::vector<double> flat;
  for (const auto& m : batch) {
    const PatchSet ps = patchify(m, spec);
    flat.insert(flat.end(), ps.patches.data().begin(), ps.patches.data().end());
  }
  pool = Matrix(flat.size() / 16, 16, flat);
  AutoencoderParams p = init_params_from_data(32, 8, pool, 1);
  Codebook cb = kmeans_fit(p.encode_all(pool), 32, {10, 1, 1e-6}).codebook;
  TrainConfig cfg;
  cfg.warmup_steps = 20;
  cfg.total_steps = 200;
  cfg.lr_peak = 3e-3;
  AdamWState opt = AdamWState::init(p, cb);
  double first = 0, last = 0;
  for (long s = 0; s < 200; ++s) {
    const LossReport r = train_step(p, cb, batch, opt, s, cfg, spec);
    if (s == 0) first = r.total;
    last = r.total;
  }
  const double after = evaluate_loss(p, cb, batch, spec, cfg.commitment_beta).total;
  CHECK(last < first);
  CHECK(after < first);
}
