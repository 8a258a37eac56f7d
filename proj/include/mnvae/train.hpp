#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnvae/adam.hpp"
#include "mnvae/stft.hpp"
#include "mnvae/vae.hpp"

namespace mnvae {

struct TrainConfig {
  std::size_t epochs = 50;
  AdamConfig adam;                 // lr 1e-3, betas (0.9, 0.999), eps 1e-8
  double kl_weight_start = 1e-4;
  double kl_weight_end = 1.0;
  std::size_t batch_size = 16;     // segments per optimizer step
  std::size_t segment_frames = 100;
  double clip_grad_norm = 5.0;     // <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (kl_weight_start < 0.0 || kl_weight_end < kl_weight_start)
      throw std::invalid_argument("TrainConfig: need 0 <= kl_weight_start <= kl_weight_end");
    if (kl_weight_start == 0.0 && kl_weight_end > 0.0)
      throw std::invalid_argument(
          "TrainConfig: geometric annealing needs kl_weight_start > 0 (or both weights zero)");
    if (batch_size == 0 || segment_frames == 0)
      throw std::invalid_argument("TrainConfig: batch_size and segment_frames must be positive");
  }
};

/// Per-epoch loss record under the reporting conventions of elbo_loss.
struct LossTrace {
  struct Record {
    std::size_t epoch;
    double mse;
    double kl;
    double kl_weight;
  };
  std::vector<Record> records;
};

/// Geometric schedule from kl_weight_start at epoch 0 to kl_weight_end at the
/// final epoch. All latent nodes share the weight.
inline double anneal_weight(std::size_t epoch, const TrainConfig& cfg) {
  cfg.validate();
  if (epoch >= cfg.epochs) throw std::invalid_argument("anneal_weight: epoch out of range");
  if (cfg.kl_weight_start == cfg.kl_weight_end) return cfg.kl_weight_start;
  if (cfg.epochs == 1) return cfg.kl_weight_end;
  const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return cfg.kl_weight_start * std::pow(cfg.kl_weight_end / cfg.kl_weight_start, frac);
}

/// Fixed-length training segment; frames past `valid` are zero padding and
/// excluded from the loss.
struct Segment {
  Matrix x;
  std::size_t valid = 0;
};

/// Cut spectrogram magnitudes into fixed-length segments, zero-padding the
/// final short piece.
inline std::vector<Segment> make_segments(const std::vector<Spectrogram>& data,
                                          std::size_t segment_frames) {
  std::vector<Segment> segments;
  for (const auto& spec : data) {
    const Matrix& mag = spec.mag;
    for (std::size_t start = 0; start < mag.rows; start += segment_frames) {
      const std::size_t len = std::min(segment_frames, mag.rows - start);
      Segment seg;
      seg.x = Matrix(segment_frames, mag.cols);
      for (std::size_t t = 0; t < len; ++t)
        std::copy(mag.row(start + t), mag.row(start + t) + mag.cols, seg.x.row(t));
      seg.valid = len;
      segments.push_back(std::move(seg));
    }
  }
  return segments;
}

using CheckpointSink =
    std::function<void(std::size_t epoch, const VaeModel& model, const AdamState& state)>;

/// Shuffled mini-batch training with the annealed KL weight; one trace record
/// and one sink call per epoch. Deterministic for a fixed seed.
inline LossTrace train(VaeModel& model, const std::vector<Spectrogram>& data,
                       const TrainConfig& cfg, const CheckpointSink& sink = nullptr) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  std::vector<Segment> segments = make_segments(data, cfg.segment_frames);
  if (segments.empty()) throw std::invalid_argument("train: dataset has no frames");
  for (const auto& seg : segments)
    if (seg.x.cols != model.cfg.input_dim)
      throw std::invalid_argument("train: spectrogram bins do not match model input_dim");

  AdamState state = make_adam_state(model);
  LossTrace trace;
  const std::size_t latent_cols = model.cfg.latent_total();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double klw = anneal_weight(epoch, cfg);
    std::vector<std::size_t> order(segments.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::mix(cfg.seed, 1000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
    Rng noise_rng(Rng::mix(cfg.seed, 2000 + epoch));

    double mse_num = 0.0, kl_num = 0.0, frames_den = 0.0;

    for (std::size_t batch_start = 0; batch_start < order.size();
         batch_start += cfg.batch_size) {
      const std::size_t batch_end = std::min(batch_start + cfg.batch_size, order.size());
      VaeGradients batch_grads = zeros_like_model(model.cfg);
      double batch_valid = 0.0;
      for (std::size_t b = batch_start; b < batch_end; ++b)
        batch_valid += static_cast<double>(segments[order[b]].valid);

      double batch_loss = 0.0;
      for (std::size_t b = batch_start; b < batch_end; ++b) {
        const Segment& seg = segments[order[b]];
        Matrix eps(seg.x.rows, latent_cols);
        for (double& v : eps.data) v = noise_rng.normal();

        ForwardTrace ft;
        ForwardResult res = run_forward(model, seg.x, eps, klw, ft, seg.valid);
        VaeGradients g = backward(model, ft, seg.x, klw, seg.valid);

        const double weight = static_cast<double>(seg.valid) / batch_valid;
        batch_loss += weight * res.losses.total;
        std::vector<std::vector<double>*> acc, src;
        for_each_tensor(batch_grads,
                        [&](const std::string&, std::vector<double>& t) { acc.push_back(&t); });
        for_each_tensor(g, [&](const std::string&, std::vector<double>& t) { src.push_back(&t); });
        for (std::size_t i = 0; i < acc.size(); ++i)
          for (std::size_t j = 0; j < acc[i]->size(); ++j)
            (*acc[i])[j] += weight * (*src[i])[j];

        mse_num += static_cast<double>(seg.valid) * res.losses.mse;
        kl_num += static_cast<double>(seg.valid) * res.losses.kl;
        frames_den += static_cast<double>(seg.valid);
      }

      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " (diverged; lower the learning rate or check the data)");

      if (cfg.clip_grad_norm > 0.0) {
        double norm_sq = 0.0;
        for_each_tensor(batch_grads, [&](const std::string&, std::vector<double>& t) {
          for (double v : t) norm_sq += v * v;
        });
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.clip_grad_norm) {
          const double scale = cfg.clip_grad_norm / norm;
          for_each_tensor(batch_grads, [&](const std::string&, std::vector<double>& t) {
            for (double& v : t) v *= scale;
          });
        }
      }
      adam_step(model, batch_grads, state, cfg.adam);
    }

    trace.records.push_back({epoch, mse_num / frames_den, kl_num / frames_den, klw});
    if (sink) sink(epoch, model, state);
  }
  return trace;
}

/// CSV with header epoch,mse,kl,kl_weight. %.17g keeps round trips exact.
inline void write_loss_csv(const LossTrace& trace, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_loss_csv: cannot open " + path);
  os << "epoch,mse,kl,kl_weight\n";
  char buf[128];
  for (const auto& r : trace.records) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", r.epoch, r.mse, r.kl, r.kl_weight);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "MNVAE001", six little-endian uint32 config fields
// (input_dim, enc_hidden, dec_hidden, latent_dim, num_nodes, context_dim),
// parameter tensors as float32 in for_each_tensor order, then a uint8 flag
// and, when set, the Adam step counter (uint64) and both moment blocks in the
// same order/precision.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  out.insert(out.end(), b, b + n);
}

inline void put_f32_block(std::vector<unsigned char>& out, const std::vector<double>& v) {
  for (double d : v) {
    const float f = static_cast<float>(d);
    put_bytes(out, &f, 4);
  }
}

struct ByteReader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;
  void read(void* dst, std::size_t len, const char* what) {
    if (pos + len > n)
      throw std::runtime_error(std::string("load_checkpoint: truncated file while reading ") +
                               what);
    std::memcpy(dst, p + pos, len);
    pos += len;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }
  void f32_block(std::vector<double>& v, const char* what) {
    for (double& d : v) {
      float f;
      read(&f, 4, what);
      d = static_cast<double>(f);
    }
  }
};

}  // namespace detail

constexpr char kCheckpointMagic[8] = {'M', 'N', 'V', 'A', 'E', '0', '0', '1'};

inline void save_checkpoint(const VaeModel& model, const AdamState* state,
                            const std::string& path) {
  std::vector<unsigned char> out;
  detail::put_bytes(out, kCheckpointMagic, 8);
  const std::uint32_t fields[6] = {
      static_cast<std::uint32_t>(model.cfg.input_dim),
      static_cast<std::uint32_t>(model.cfg.enc_hidden),
      static_cast<std::uint32_t>(model.cfg.dec_hidden),
      static_cast<std::uint32_t>(model.cfg.latent_dim),
      static_cast<std::uint32_t>(model.cfg.num_nodes),
      static_cast<std::uint32_t>(model.cfg.context_dim)};
  detail::put_bytes(out, fields, sizeof(fields));
  for_each_tensor(const_cast<VaeModel&>(model),
                  [&](const std::string&, std::vector<double>& t) { detail::put_f32_block(out, t); });
  const unsigned char has_adam = state != nullptr ? 1 : 0;
  out.push_back(has_adam);
  if (state) {
    std::uint64_t step = state->step;
    detail::put_bytes(out, &step, 8);
    for (const auto& t : state->m) detail::put_f32_block(out, t);
    for (const auto& t : state->v) detail::put_f32_block(out, t);
  }

  // Write-temp-then-rename keeps partially written files invisible.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("save_checkpoint: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

struct Checkpoint {
  VaeModel model;
  AdamState state;
  bool has_adam = false;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  detail::ByteReader r{bytes.data(), bytes.size()};

  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a model checkpoint");

  ModelConfig cfg;
  cfg.input_dim = r.u32("input_dim");
  cfg.enc_hidden = r.u32("enc_hidden");
  cfg.dec_hidden = r.u32("dec_hidden");
  cfg.latent_dim = r.u32("latent_dim");
  cfg.num_nodes = r.u32("num_nodes");
  cfg.context_dim = r.u32("context_dim");
  cfg.validate();

  Checkpoint ck;
  ck.model = zeros_like_model(cfg);
  for_each_tensor(ck.model, [&](const std::string& name, std::vector<double>& t) {
    r.f32_block(t, name.c_str());
  });

  unsigned char has_adam;
  r.read(&has_adam, 1, "adam flag");
  if (has_adam) {
    ck.has_adam = true;
    ck.state = make_adam_state(ck.model);
    r.read(&ck.state.step, 8, "adam step");
    for (auto& t : ck.state.m) r.f32_block(t, "adam m");
    for (auto& t : ck.state.v) r.f32_block(t, "adam v");
  }
  return ck;
}

/// Loader that insists the stored architecture matches an expected config.
inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  if (!(ck.model.cfg == expected))
    throw std::runtime_error("load_checkpoint: " + path +
                             " was trained with a different architecture than configured");
  return ck;
}

}  // namespace mnvae
