#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mnvae/train.hpp"
#include "mnvae/window.hpp"

using namespace mnvae;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::size_t input_dim = 8, std::size_t nodes = 1) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.enc_hidden = 10;
  cfg.dec_hidden = 10;
  cfg.latent_dim = 4;
  cfg.num_nodes = nodes;
  cfg.context_dim = 4;
  return cfg;
}

Spectrogram spectrogram_from(Matrix mag) {
  Spectrogram s;
  s.phase = Matrix(mag.rows, mag.cols);
  s.mag = std::move(mag);
  s.config.fft_size = 2 * s.mag.cols;
  s.config.hop = s.mag.cols / 2;
  return s;
}

// Frames alternate between two "speech" templates; the top bins carry a
// constant "music" floor.
Spectrogram speech_plus_music(std::size_t frames, std::size_t bins, std::uint64_t seed) {
  Rng rng(seed);
  Matrix mag(frames, bins);
  for (std::size_t t = 0; t < frames; ++t) {
    const bool alt = (t / 4) % 2 == 0;
    for (std::size_t j = 0; j < bins / 2; ++j)
      mag(t, j) = (alt == (j % 2 == 0) ? 1.2 : 0.15) + 0.05 * std::abs(rng.normal());
    for (std::size_t j = bins / 2; j < bins; ++j) mag(t, j) = 0.8;
  }
  return spectrogram_from(std::move(mag));
}

}  // namespace

TEST(AnnealWeight, Boundaries) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(anneal_weight(0, cfg), cfg.kl_weight_start);
  EXPECT_DOUBLE_EQ(anneal_weight(cfg.epochs - 1, cfg), cfg.kl_weight_end);
  EXPECT_THROW(anneal_weight(cfg.epochs, cfg), std::invalid_argument);
}

TEST(AnnealWeight, ScheduleFormulaAtEpoch24) {
  TrainConfig cfg;  // 1e-4 -> 1.0 over 50 epochs
  EXPECT_NEAR(anneal_weight(24, cfg), 0.009102981779915217, 1e-15);
}

TEST(AnnealWeight, StrictlyIncreasing) {
  TrainConfig cfg;
  for (std::size_t e = 1; e < cfg.epochs; ++e)
    EXPECT_GT(anneal_weight(e, cfg), anneal_weight(e - 1, cfg));
}

TEST(AnnealWeight, ConstantWhenEndpointsEqual) {
  TrainConfig cfg;
  cfg.kl_weight_start = 0.0;
  cfg.kl_weight_end = 0.0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) EXPECT_DOUBLE_EQ(anneal_weight(e, cfg), 0.0);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  VaeModel model = init_model(tiny_config(), 1);
  VaeModel before = model;
  VaeGradients g = zeros_like_model(model.cfg);
  AdamState st = make_adam_state(model);
  adam_step(model, g, st, AdamConfig{});
  std::vector<std::vector<double>*> a, b;
  for_each_tensor(model, [&](const std::string&, std::vector<double>& t) { a.push_back(&t); });
  for_each_tensor(before, [&](const std::string&, std::vector<double>& t) { b.push_back(&t); });
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i]->size(); ++j) EXPECT_EQ((*a[i])[j], (*b[i])[j]);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  std::vector<double> p = {5.0, -3.0}, g = {0.2, -7.0}, m(2, 0.0), v(2, 0.0);
  AdamConfig cfg;
  adam_update(p, g, m, v, 1, cfg);
  EXPECT_NEAR(std::abs(p[0] - 5.0), cfg.lr, 1e-6);
  EXPECT_NEAR(std::abs(p[1] - -3.0), cfg.lr, 1e-6);
  EXPECT_LT(p[0], 5.0);  // moves against the gradient
  EXPECT_GT(p[1], -3.0);
}

TEST(Adam, QuadraticTrajectoryMatchesScalarOracle) {
  // Minimize (a-1)^2 + 2(b+0.5)^2 from (0.6, -0.1).
  AdamConfig cfg;
  cfg.lr = 0.05;
  std::vector<double> p = {0.6, -0.1}, m(2, 0.0), v(2, 0.0);

  // Independent scalar oracle state.
  double op[2] = {0.6, -0.1}, om[2] = {0, 0}, ov[2] = {0, 0};

  for (std::uint64_t t = 1; t <= 100; ++t) {
    std::vector<double> g = {2.0 * (p[0] - 1.0), 4.0 * (p[1] + 0.5)};
    adam_update(p, g, m, v, t, cfg);

    const double og[2] = {2.0 * (op[0] - 1.0), 4.0 * (op[1] + 0.5)};
    for (int i = 0; i < 2; ++i) {
      om[i] = 0.9 * om[i] + 0.1 * og[i];
      ov[i] = 0.999 * ov[i] + 0.001 * og[i] * og[i];
      const double mh = om[i] / (1.0 - std::pow(0.9, static_cast<double>(t)));
      const double vh = ov[i] / (1.0 - std::pow(0.999, static_cast<double>(t)));
      op[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    EXPECT_NEAR(p[0], op[0], 1e-10);
    EXPECT_NEAR(p[1], op[1], 1e-10);
  }
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -0.5, 1e-3);
}

TEST(Train, SmokeRunReducesReconstructionError) {
  ModelConfig mc = tiny_config(8);
  VaeModel model = init_model(mc, 11);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 2;
  cfg.segment_frames = 20;
  cfg.seed = 4;
  std::vector<Spectrogram> data = {speech_plus_music(40, 8, 3)};
  LossTrace trace = train(model, data, cfg);
  ASSERT_EQ(trace.records.size(), 5u);
  EXPECT_LT(trace.records[4].mse, trace.records[0].mse);
}

TEST(Train, DeterministicTraceForFixedSeed) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.segment_frames = 16;
  cfg.seed = 99;
  std::vector<Spectrogram> data = {speech_plus_music(48, 8, 5)};

  VaeModel m1 = init_model(tiny_config(8), 42);
  VaeModel m2 = init_model(tiny_config(8), 42);
  LossTrace t1 = train(m1, data, cfg);
  LossTrace t2 = train(m2, data, cfg);
  ASSERT_EQ(t1.records.size(), t2.records.size());
  for (std::size_t i = 0; i < t1.records.size(); ++i) {
    EXPECT_EQ(t1.records[i].mse, t2.records[i].mse);
    EXPECT_EQ(t1.records[i].kl, t2.records[i].kl);
    EXPECT_EQ(t1.records[i].kl_weight, t2.records[i].kl_weight);
  }
}

TEST(Train, AutoencoderAblationKeepsMusicEnergy) {
  // kl weights pinned to zero: the model reconstructs everything, music
  // included, so output energy stays close to input energy.
  ModelConfig mc = tiny_config(12);
  mc.enc_hidden = 16;
  mc.dec_hidden = 16;
  VaeModel model = init_model(mc, 7);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.adam.lr = 3e-3;
  cfg.batch_size = 2;
  cfg.segment_frames = 40;
  cfg.kl_weight_start = 0.0;
  cfg.kl_weight_end = 0.0;
  cfg.seed = 6;
  Spectrogram spec = speech_plus_music(80, 12, 9);
  std::vector<Spectrogram> data = {spec};
  LossTrace trace = train(model, data, cfg);

  ForwardTrace ft;
  Matrix noise(spec.mag.rows, mc.latent_total());
  ForwardResult res = run_forward(model, spec.mag, noise, 0.0, ft);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < spec.mag.size(); ++i) {
    num += res.x_r.data[i] * res.x_r.data[i];
    den += spec.mag.data[i] * spec.mag.data[i];
  }
  EXPECT_GT(num / den, 0.9);
  // KL was recorded but never penalized; the posterior drifted off the prior.
  EXPECT_GT(trace.records.back().kl, 0.0);
}

TEST(Train, MonotoneLossOnRankOneDataWithoutKl) {
  ModelConfig mc = tiny_config(6);
  VaeModel model = init_model(mc, 13);
  // Pin the posterior variance near zero so the sampled path is effectively
  // deterministic; otherwise sigma ~ 1 reparameterization noise swamps the
  // per-epoch loss on this scale of data.
  for (auto& head : model.logvar_heads)
    for (double& b : head.b) b = -10.0;
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.adam.lr = 2e-4;  // gentle rate keeps the descent smooth on easy data
  cfg.batch_size = 4;
  cfg.segment_frames = 10;
  cfg.kl_weight_start = 0.0;
  cfg.kl_weight_end = 0.0;
  cfg.seed = 17;

  Matrix mag(40, 6);
  const double tmpl[6] = {1.0, 0.4, 0.7, 0.2, 0.9, 0.1};
  for (std::size_t t = 0; t < mag.rows; ++t)
    for (std::size_t j = 0; j < 6; ++j) mag(t, j) = tmpl[j];
  std::vector<Spectrogram> data = {spectrogram_from(std::move(mag))};

  LossTrace trace = train(model, data, cfg);
  for (std::size_t i = 1; i < trace.records.size(); ++i)
    EXPECT_LE(trace.records[i].mse, trace.records[i - 1].mse * 1.01);
}

TEST(Train, EmptyDatasetThrows) {
  VaeModel model = init_model(tiny_config(), 1);
  TrainConfig cfg;
  std::vector<Spectrogram> data;
  EXPECT_THROW(train(model, data, cfg), std::invalid_argument);
}

TEST(Checkpoint, RoundTripAtStoredPrecision) {
  ModelConfig mc = tiny_config(8, 2);
  VaeModel model = init_model(mc, 21);
  AdamState st = make_adam_state(model);
  st.step = 17;
  for (auto& t : st.m)
    for (double& v : t) v = 0.25;

  const fs::path dir = fs::temp_directory_path() / "mnvae_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.mnvae").string();
  save_checkpoint(model, &st, path);
  Checkpoint ck = load_checkpoint(path);
  EXPECT_TRUE(ck.has_adam);
  EXPECT_EQ(ck.state.step, 17u);

  std::vector<std::vector<double>*> a, b;
  for_each_tensor(model, [&](const std::string&, std::vector<double>& t) { a.push_back(&t); });
  for_each_tensor(ck.model, [&](const std::string&, std::vector<double>& t) { b.push_back(&t); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i]->size(), b[i]->size());
    for (std::size_t j = 0; j < a[i]->size(); ++j)
      EXPECT_EQ(static_cast<double>(static_cast<float>((*a[i])[j])), (*b[i])[j]);
  }

  // Saving the loaded model again is byte-identical.
  const std::string path2 = (dir / "model2.mnvae").string();
  save_checkpoint(ck.model, &ck.state, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(c1, c2);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  VaeModel model = init_model(tiny_config(), 23);
  const fs::path dir = fs::temp_directory_path() / "mnvae_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "trunc.mnvae").string();
  save_checkpoint(model, nullptr, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  out.close();
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(Checkpoint, ArchitectureMismatchIsRejected) {
  VaeModel model = init_model(tiny_config(8, 3), 25);
  const fs::path dir = fs::temp_directory_path() / "mnvae_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "k3.mnvae").string();
  save_checkpoint(model, nullptr, path);
  EXPECT_NO_THROW(load_checkpoint(path, tiny_config(8, 3)));
  EXPECT_THROW(load_checkpoint(path, tiny_config(8, 2)), std::runtime_error);
}

TEST(Checkpoint, GarbageFileIsRejected) {
  const fs::path dir = fs::temp_directory_path() / "mnvae_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "garbage.mnvae").string();
  std::ofstream(path) << "not a checkpoint at all";
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}
