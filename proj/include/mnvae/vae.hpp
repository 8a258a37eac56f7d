#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mnvae/matrix.hpp"
#include "mnvae/rng.hpp"

namespace mnvae {

/// Architecture hyperparameters. Defaults follow the full-scale profile
/// (512-bin spectrogram, 512-wide recurrent nets, 64-dim latent nodes).
struct ModelConfig {
  std::size_t input_dim = 512;
  std::size_t enc_hidden = 512;  // per direction
  std::size_t dec_hidden = 512;
  std::size_t latent_dim = 64;  // per node
  std::size_t num_nodes = 1;    // K
  std::size_t context_dim = 64;

  std::size_t latent_total() const { return latent_dim * num_nodes; }
  std::size_t dec_input() const { return context_dim + latent_total(); }

  void validate() const {
    if (input_dim == 0 || enc_hidden == 0 || dec_hidden == 0 || latent_dim == 0 ||
        num_nodes == 0 || context_dim == 0)
      throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

struct Affine {
  Matrix w;               // [out x in]
  std::vector<double> b;  // [out]
};

/// Gate rows stacked as [input; forget; candidate; output], each H wide.
struct LstmParams {
  Matrix wx;              // [4H x in]
  Matrix wh;              // [4H x H]
  std::vector<double> b;  // [4H]
};

/// Bidirectional recurrent encoder, K Gaussian latent heads, autoregressive
/// recurrent decoder with a learned context path and learnable initial state.
struct VaeModel {
  ModelConfig cfg;
  LstmParams enc_fwd, enc_bwd;
  std::vector<Affine> mu_heads;      // K, [latent x 2*enc_hidden]
  std::vector<Affine> logvar_heads;  // K
  LstmParams dec;                    // input = [phi; z_1..z_K]
  Affine context_head;               // [context x dec_hidden]
  Affine output_head;                // [input_dim x dec_hidden]
  std::vector<double> init_hidden, init_cell;  // [dec_hidden]
};

/// Per-frame posterior moments, nodes stored contiguously per row:
/// column block k*latent_dim..(k+1)*latent_dim holds node k.
struct LatentPosterior {
  Matrix mu;      // [T x K*latent_dim]
  Matrix logvar;  // clamped to [-10, 10]
};

constexpr double kLogvarMin = -10.0;
constexpr double kLogvarMax = 10.0;

/// Per-sequence activations kept for backpropagation through time.
struct LstmTrace {
  Matrix in;                  // inputs in processing order [T x in_dim]
  Matrix gi, gf, gg, go;      // post-activation gates [T x H]
  Matrix c, h;                // states [T x H]
};

struct ForwardTrace {
  ModelConfig cfg;
  Matrix x;  // [T x input_dim]
  LstmTrace enc_fwd;
  LstmTrace enc_bwd;  // processing order: step s handles frame T-1-s
  Matrix h_enc;       // [T x 2*enc_hidden]
  Matrix mu, logvar_raw, logvar;
  Matrix eps, z;  // [T x K*latent_dim]
  Matrix phi;     // [T x context_dim]
  LstmTrace dec;
  Matrix x_r;  // [T x input_dim]
  bool has_encoder = false;
  bool has_decoder = false;
};

/// Reconstruction / divergence split of the training objective.
struct Losses {
  double total = 0.0;
  double mse = 0.0;  // squared error summed over bins, averaged over frames
  double kl = 0.0;   // summed over latent dims, averaged over nodes and frames
};

namespace detail {

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline void affine_apply(const Affine& a, const double* x, double* y) {
  for (std::size_t i = 0; i < a.w.rows; ++i) {
    const double* wi = a.w.row(i);
    double acc = a.b[i];
    for (std::size_t j = 0; j < a.w.cols; ++j) acc += wi[j] * x[j];
    y[i] = acc;
  }
}

inline void matvec_acc(const Matrix& w, const double* x, double* y) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double* wi = w.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) acc += wi[j] * x[j];
    y[i] += acc;
  }
}

inline void matvec_t_acc(const Matrix& w, const double* d, double* y) {
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double di = d[i];
    if (di == 0.0) continue;
    const double* wi = w.row(i);
    for (std::size_t j = 0; j < w.cols; ++j) y[j] += wi[j] * di;
  }
}

inline void outer_acc(Matrix& dw, const double* d, const double* x) {
  for (std::size_t i = 0; i < dw.rows; ++i) {
    const double di = d[i];
    if (di == 0.0) continue;
    double* wi = dw.row(i);
    for (std::size_t j = 0; j < dw.cols; ++j) wi[j] += di * x[j];
  }
}

inline void add_vec(std::vector<double>& acc, const double* d, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) acc[i] += d[i];
}

// One LSTM step. pre is scratch of size 4H.
inline void lstm_step(const LstmParams& p, const double* x, const double* h_prev,
                      const double* c_prev, std::size_t hidden, double* pre, double* gi,
                      double* gf, double* gg, double* go, double* c, double* h) {
  for (std::size_t i = 0; i < 4 * hidden; ++i) pre[i] = p.b[i];
  matvec_acc(p.wx, x, pre);
  matvec_acc(p.wh, h_prev, pre);
  for (std::size_t i = 0; i < hidden; ++i) {
    gi[i] = sigmoid(pre[i]);
    gf[i] = sigmoid(pre[hidden + i]);
    gg[i] = std::tanh(pre[2 * hidden + i]);
    go[i] = sigmoid(pre[3 * hidden + i]);
    c[i] = gf[i] * c_prev[i] + gi[i] * gg[i];
    h[i] = go[i] * std::tanh(c[i]);
  }
}

// Run a whole sequence; inputs already in processing order.
inline LstmTrace lstm_forward(const LstmParams& p, Matrix inputs, const double* h0,
                              const double* c0, std::size_t hidden) {
  const std::size_t steps = inputs.rows;
  LstmTrace tr;
  tr.in = std::move(inputs);
  tr.gi = Matrix(steps, hidden);
  tr.gf = Matrix(steps, hidden);
  tr.gg = Matrix(steps, hidden);
  tr.go = Matrix(steps, hidden);
  tr.c = Matrix(steps, hidden);
  tr.h = Matrix(steps, hidden);
  std::vector<double> pre(4 * hidden);
  for (std::size_t s = 0; s < steps; ++s) {
    const double* h_prev = s == 0 ? h0 : tr.h.row(s - 1);
    const double* c_prev = s == 0 ? c0 : tr.c.row(s - 1);
    lstm_step(p, tr.in.row(s), h_prev, c_prev, hidden, pre.data(), tr.gi.row(s), tr.gf.row(s),
              tr.gg.row(s), tr.go.row(s), tr.c.row(s), tr.h.row(s));
  }
  return tr;
}

// Gradient of one LSTM step given accumulated dh and carried dc.
// Fills dpre (4H) and updates dc in place to dc_prev; caller routes dpre.
inline void lstm_step_backward(const double* gi, const double* gf, const double* gg,
                               const double* go, const double* c, const double* c_prev,
                               std::size_t hidden, const double* dh, double* dc, double* dpre) {
  for (std::size_t i = 0; i < hidden; ++i) {
    const double tc = std::tanh(c[i]);
    const double d_o = dh[i] * tc;
    const double dci = dc[i] + dh[i] * go[i] * (1.0 - tc * tc);
    const double d_i = dci * gg[i];
    const double d_f = dci * c_prev[i];
    const double d_g = dci * gi[i];
    dpre[i] = d_i * gi[i] * (1.0 - gi[i]);
    dpre[hidden + i] = d_f * gf[i] * (1.0 - gf[i]);
    dpre[2 * hidden + i] = d_g * (1.0 - gg[i] * gg[i]);
    dpre[3 * hidden + i] = d_o * go[i] * (1.0 - go[i]);
    dc[i] = dci * gf[i];
  }
}

// Full-sequence BPTT for a plain (non-autoregressive) LSTM with constant
// initial state. dh_ext rows are external gradients per processing step.
inline void lstm_backward(const LstmParams& p, const LstmTrace& tr, const Matrix& dh_ext,
                          const double* h0, const double* c0, std::size_t hidden,
                          LstmParams& grads, Matrix& dinputs) {
  const std::size_t steps = tr.in.rows;
  std::vector<double> dh(hidden), dc(hidden, 0.0), dpre(4 * hidden), dh_rec(hidden, 0.0);
  for (std::size_t si = steps; si-- > 0;) {
    for (std::size_t i = 0; i < hidden; ++i) dh[i] = dh_ext(si, i) + dh_rec[i];
    const double* c_prev = si == 0 ? c0 : tr.c.row(si - 1);
    lstm_step_backward(tr.gi.row(si), tr.gf.row(si), tr.gg.row(si), tr.go.row(si), tr.c.row(si),
                       c_prev, hidden, dh.data(), dc.data(), dpre.data());
    const double* h_prev = si == 0 ? h0 : tr.h.row(si - 1);
    outer_acc(grads.wx, dpre.data(), tr.in.row(si));
    outer_acc(grads.wh, dpre.data(), h_prev);
    add_vec(grads.b, dpre.data(), 4 * hidden);
    matvec_t_acc(p.wx, dpre.data(), dinputs.row(si));
    std::fill(dh_rec.begin(), dh_rec.end(), 0.0);
    matvec_t_acc(p.wh, dpre.data(), dh_rec.data());
  }
}

}  // namespace detail

/// Model with every tensor allocated to cfg's shapes and zero-filled.
inline VaeModel zeros_like_model(const ModelConfig& cfg) {
  cfg.validate();
  VaeModel m;
  m.cfg = cfg;
  auto lstm = [](std::size_t hidden, std::size_t in) {
    LstmParams p;
    p.wx = Matrix(4 * hidden, in);
    p.wh = Matrix(4 * hidden, hidden);
    p.b.assign(4 * hidden, 0.0);
    return p;
  };
  m.enc_fwd = lstm(cfg.enc_hidden, cfg.input_dim);
  m.enc_bwd = lstm(cfg.enc_hidden, cfg.input_dim);
  for (std::size_t k = 0; k < cfg.num_nodes; ++k) {
    m.mu_heads.push_back({Matrix(cfg.latent_dim, 2 * cfg.enc_hidden),
                          std::vector<double>(cfg.latent_dim, 0.0)});
    m.logvar_heads.push_back({Matrix(cfg.latent_dim, 2 * cfg.enc_hidden),
                              std::vector<double>(cfg.latent_dim, 0.0)});
  }
  m.dec = lstm(cfg.dec_hidden, cfg.dec_input());
  m.context_head = {Matrix(cfg.context_dim, cfg.dec_hidden),
                    std::vector<double>(cfg.context_dim, 0.0)};
  m.output_head = {Matrix(cfg.input_dim, cfg.dec_hidden),
                   std::vector<double>(cfg.input_dim, 0.0)};
  m.init_hidden.assign(cfg.dec_hidden, 0.0);
  m.init_cell.assign(cfg.dec_hidden, 0.0);
  return m;
}

/// Visit every parameter tensor in the fixed checkpoint order.
template <class Model, class Fn>
void for_each_tensor(Model& m, Fn&& fn) {
  auto lstm = [&](auto& p, const char* base) {
    fn(std::string(base) + ".wx", p.wx.data);
    fn(std::string(base) + ".wh", p.wh.data);
    fn(std::string(base) + ".b", p.b);
  };
  lstm(m.enc_fwd, "enc_fwd");
  lstm(m.enc_bwd, "enc_bwd");
  for (std::size_t k = 0; k < m.mu_heads.size(); ++k) {
    fn("mu_head" + std::to_string(k) + ".w", m.mu_heads[k].w.data);
    fn("mu_head" + std::to_string(k) + ".b", m.mu_heads[k].b);
    fn("logvar_head" + std::to_string(k) + ".w", m.logvar_heads[k].w.data);
    fn("logvar_head" + std::to_string(k) + ".b", m.logvar_heads[k].b);
  }
  lstm(m.dec, "dec");
  fn("context_head.w", m.context_head.w.data);
  fn("context_head.b", m.context_head.b);
  fn("output_head.w", m.output_head.w.data);
  fn("output_head.b", m.output_head.b);
  fn("init_hidden", m.init_hidden);
  fn("init_cell", m.init_cell);
}

/// Uniform +-1/sqrt(fan_in) init for weights, zero biases except the forget
/// gate (biased to +1 so memory persists early in training), zero initial
/// decoder state.
inline VaeModel init_model(const ModelConfig& cfg, std::uint64_t seed) {
  VaeModel m = zeros_like_model(cfg);
  Rng rng(seed);
  auto fill = [&](Matrix& w) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
  };
  fill(m.enc_fwd.wx);
  fill(m.enc_fwd.wh);
  fill(m.enc_bwd.wx);
  fill(m.enc_bwd.wh);
  for (std::size_t k = 0; k < cfg.num_nodes; ++k) {
    fill(m.mu_heads[k].w);
    fill(m.logvar_heads[k].w);
  }
  fill(m.dec.wx);
  fill(m.dec.wh);
  fill(m.context_head.w);
  fill(m.output_head.w);
  for (std::size_t i = 0; i < cfg.enc_hidden; ++i) {
    m.enc_fwd.b[cfg.enc_hidden + i] = 1.0;
    m.enc_bwd.b[cfg.enc_hidden + i] = 1.0;
  }
  for (std::size_t i = 0; i < cfg.dec_hidden; ++i) m.dec.b[cfg.dec_hidden + i] = 1.0;
  return m;
}

/// Bidirectional encoder pass plus the K posterior head pairs.
inline LatentPosterior encode(const VaeModel& model, const Matrix& x, ForwardTrace& trace) {
  const ModelConfig& cfg = model.cfg;
  cfg.validate();
  if (x.cols != cfg.input_dim) throw std::invalid_argument("encode: input_dim mismatch");
  if (x.rows == 0) throw std::invalid_argument("encode: need at least one frame");

  const std::size_t frames = x.rows;
  trace.cfg = cfg;
  trace.x = x;

  std::vector<double> zero_state(cfg.enc_hidden, 0.0);
  trace.enc_fwd =
      detail::lstm_forward(model.enc_fwd, x, zero_state.data(), zero_state.data(), cfg.enc_hidden);
  Matrix x_rev(frames, cfg.input_dim);
  for (std::size_t t = 0; t < frames; ++t)
    std::copy(x.row(frames - 1 - t), x.row(frames - 1 - t) + cfg.input_dim, x_rev.row(t));
  trace.enc_bwd = detail::lstm_forward(model.enc_bwd, std::move(x_rev), zero_state.data(),
                                       zero_state.data(), cfg.enc_hidden);

  trace.h_enc = Matrix(frames, 2 * cfg.enc_hidden);
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy(trace.enc_fwd.h.row(t), trace.enc_fwd.h.row(t) + cfg.enc_hidden, trace.h_enc.row(t));
    std::copy(trace.enc_bwd.h.row(frames - 1 - t), trace.enc_bwd.h.row(frames - 1 - t) + cfg.enc_hidden,
              trace.h_enc.row(t) + cfg.enc_hidden);
  }

  LatentPosterior post;
  post.mu = Matrix(frames, cfg.latent_total());
  trace.logvar_raw = Matrix(frames, cfg.latent_total());
  post.logvar = Matrix(frames, cfg.latent_total());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < cfg.num_nodes; ++k) {
      detail::affine_apply(model.mu_heads[k], trace.h_enc.row(t),
                           post.mu.row(t) + k * cfg.latent_dim);
      detail::affine_apply(model.logvar_heads[k], trace.h_enc.row(t),
                           trace.logvar_raw.row(t) + k * cfg.latent_dim);
    }
    for (std::size_t j = 0; j < cfg.latent_total(); ++j)
      post.logvar(t, j) = std::clamp(trace.logvar_raw(t, j), kLogvarMin, kLogvarMax);
  }
  trace.mu = post.mu;
  trace.logvar = post.logvar;
  trace.has_encoder = true;
  return post;
}

/// Reparameterized draw z = mu + exp(logvar / 2) * noise.
inline Matrix sample_latent(const LatentPosterior& post, const Matrix& noise) {
  check_same_shape(post.mu, noise, "sample_latent");
  check_same_shape(post.mu, post.logvar, "sample_latent");
  Matrix z = post.mu;
  for (std::size_t i = 0; i < z.size(); ++i)
    z.data[i] += std::exp(0.5 * post.logvar.data[i]) * noise.data[i];
  return z;
}

/// Autoregressive decoder: each step consumes [phi_t; z_1..z_K] where phi_t
/// is computed from the previous hidden state (the learnable init state at
/// t = 0).
inline Matrix decode(const VaeModel& model, const Matrix& z, std::size_t frames,
                     ForwardTrace& trace) {
  const ModelConfig& cfg = model.cfg;
  if (z.rows != frames || z.cols != cfg.latent_total())
    throw std::invalid_argument("decode: latent tensor shape mismatch");
  if (frames == 0) throw std::invalid_argument("decode: need at least one frame");

  trace.z = z;
  trace.phi = Matrix(frames, cfg.context_dim);
  LstmTrace dec;
  const std::size_t hidden = cfg.dec_hidden;
  dec.in = Matrix(frames, cfg.dec_input());
  dec.gi = Matrix(frames, hidden);
  dec.gf = Matrix(frames, hidden);
  dec.gg = Matrix(frames, hidden);
  dec.go = Matrix(frames, hidden);
  dec.c = Matrix(frames, hidden);
  dec.h = Matrix(frames, hidden);

  std::vector<double> pre(4 * hidden);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* h_prev = t == 0 ? model.init_hidden.data() : dec.h.row(t - 1);
    const double* c_prev = t == 0 ? model.init_cell.data() : dec.c.row(t - 1);
    detail::affine_apply(model.context_head, h_prev, trace.phi.row(t));
    double* u = dec.in.row(t);
    std::copy(trace.phi.row(t), trace.phi.row(t) + cfg.context_dim, u);
    std::copy(z.row(t), z.row(t) + cfg.latent_total(), u + cfg.context_dim);
    detail::lstm_step(model.dec, u, h_prev, c_prev, hidden, pre.data(), dec.gi.row(t),
                      dec.gf.row(t), dec.gg.row(t), dec.go.row(t), dec.c.row(t), dec.h.row(t));
  }

  Matrix x_r(frames, cfg.input_dim);
  for (std::size_t t = 0; t < frames; ++t)
    detail::affine_apply(model.output_head, dec.h.row(t), x_r.row(t));

  trace.dec = std::move(dec);
  trace.x_r = x_r;
  trace.has_decoder = true;
  return x_r;
}

/// KL(q || N(0, I)) summed over latent dimensions, averaged over nodes and
/// frames. mu/logvar columns hold num_nodes blocks of latent_dim.
/// valid_frames = 0 means every row counts; otherwise only the leading rows
/// contribute (zero-padded segment tails are excluded).
inline double kl_gaussian_standard(const Matrix& mu, const Matrix& logvar,
                                   std::size_t num_nodes = 1, std::size_t valid_frames = 0) {
  check_same_shape(mu, logvar, "kl_gaussian_standard");
  if (mu.rows == 0) return 0.0;
  const std::size_t v = valid_frames == 0 ? mu.rows : std::min(valid_frames, mu.rows);
  double acc = 0.0;
  for (std::size_t t = 0; t < v; ++t) {
    const double* mrow = mu.row(t);
    const double* lrow = logvar.row(t);
    for (std::size_t j = 0; j < mu.cols; ++j)
      acc += 0.5 * (mrow[j] * mrow[j] + std::exp(lrow[j]) - 1.0 - lrow[j]);
  }
  return acc / (static_cast<double>(v) * static_cast<double>(num_nodes));
}

/// total = mse + kl_weight * kl under the reporting conventions above.
inline Losses elbo_loss(const Matrix& x, const Matrix& x_r, const LatentPosterior& post,
                        double kl_weight, std::size_t num_nodes = 1,
                        std::size_t valid_frames = 0) {
  check_same_shape(x, x_r, "elbo_loss");
  if (kl_weight < 0.0) throw std::invalid_argument("elbo_loss: negative kl_weight");
  const std::size_t v = valid_frames == 0 ? x.rows : std::min(valid_frames, x.rows);
  Losses out;
  double se = 0.0;
  for (std::size_t t = 0; t < v; ++t) {
    const double* xr = x.row(t);
    const double* rr = x_r.row(t);
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double d = xr[j] - rr[j];
      se += d * d;
    }
  }
  out.mse = se / static_cast<double>(v);
  out.kl = kl_gaussian_standard(post.mu, post.logvar, num_nodes, v);
  out.total = out.mse + kl_weight * out.kl;
  return out;
}

/// Gradients share the model's layout.
using VaeGradients = VaeModel;

/// Exact reverse-mode gradient of elbo_loss(total) through the decoder
/// recurrence (including the context path and learnable initial state), the
/// reparameterization, the posterior heads and both encoder directions.
inline VaeGradients backward(const VaeModel& model, const ForwardTrace& trace, const Matrix& x,
                             double kl_weight, std::size_t valid_frames = 0) {
  const ModelConfig& cfg = model.cfg;
  if (!trace.has_encoder || !trace.has_decoder)
    throw std::invalid_argument("backward: trace is incomplete");
  if (trace.cfg != cfg) throw std::invalid_argument("backward: trace built with another config");
  if (x.rows != trace.x.rows || x.cols != trace.x.cols)
    throw std::invalid_argument("backward: stale trace (input shape changed)");
  if (trace.eps.rows != trace.mu.rows || trace.eps.cols != trace.mu.cols)
    throw std::invalid_argument("backward: trace is missing the noise tensor");
  if (kl_weight < 0.0) throw std::invalid_argument("backward: negative kl_weight");

  const std::size_t frames = x.rows;
  const std::size_t v = valid_frames == 0 ? frames : std::min(valid_frames, frames);
  const double inv_frames = 1.0 / static_cast<double>(v);
  const double kl_scale =
      kl_weight / (static_cast<double>(v) * static_cast<double>(cfg.num_nodes));

  VaeGradients g = zeros_like_model(cfg);

  // d total / d x_r = 2 (x_r - x) / valid frames, zero on padded tails.
  Matrix dxr(frames, cfg.input_dim);
  for (std::size_t t = 0; t < v; ++t)
    for (std::size_t j = 0; j < cfg.input_dim; ++j)
      dxr(t, j) = 2.0 * (trace.x_r(t, j) - x(t, j)) * inv_frames;

  // Output head.
  Matrix dh_dec(frames, cfg.dec_hidden);
  for (std::size_t t = 0; t < frames; ++t) {
    detail::outer_acc(g.output_head.w, dxr.row(t), trace.dec.h.row(t));
    detail::add_vec(g.output_head.b, dxr.row(t), cfg.input_dim);
    detail::matvec_t_acc(model.output_head.w, dxr.row(t), dh_dec.row(t));
  }

  // Decoder BPTT with the autoregressive context path: phi_t depends on
  // h_{t-1}, so each step also routes gradient to the previous hidden state
  // through the context head.
  Matrix dz(frames, cfg.latent_total());
  std::vector<double> dh(cfg.dec_hidden), dc(cfg.dec_hidden, 0.0), dpre(4 * cfg.dec_hidden);
  std::vector<double> dh_carry(cfg.dec_hidden, 0.0);
  std::vector<double> du(cfg.dec_input());
  for (std::size_t ti = frames; ti-- > 0;) {
    for (std::size_t i = 0; i < cfg.dec_hidden; ++i) dh[i] = dh_dec(ti, i) + dh_carry[i];
    const double* c_prev = ti == 0 ? model.init_cell.data() : trace.dec.c.row(ti - 1);
    const double* h_prev = ti == 0 ? model.init_hidden.data() : trace.dec.h.row(ti - 1);
    detail::lstm_step_backward(trace.dec.gi.row(ti), trace.dec.gf.row(ti), trace.dec.gg.row(ti),
                               trace.dec.go.row(ti), trace.dec.c.row(ti), c_prev, cfg.dec_hidden,
                               dh.data(), dc.data(), dpre.data());
    detail::outer_acc(g.dec.wx, dpre.data(), trace.dec.in.row(ti));
    detail::outer_acc(g.dec.wh, dpre.data(), h_prev);
    detail::add_vec(g.dec.b, dpre.data(), 4 * cfg.dec_hidden);

    std::fill(du.begin(), du.end(), 0.0);
    detail::matvec_t_acc(model.dec.wx, dpre.data(), du.data());
    for (std::size_t j = 0; j < cfg.latent_total(); ++j) dz(ti, j) += du[cfg.context_dim + j];

    // Context path: du[0..context) is d phi_t.
    detail::outer_acc(g.context_head.w, du.data(), h_prev);
    detail::add_vec(g.context_head.b, du.data(), cfg.context_dim);

    std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
    detail::matvec_t_acc(model.dec.wh, dpre.data(), dh_carry.data());
    detail::matvec_t_acc(model.context_head.w, du.data(), dh_carry.data());

    if (ti == 0) {
      for (std::size_t i = 0; i < cfg.dec_hidden; ++i) {
        g.init_hidden[i] += dh_carry[i];
        g.init_cell[i] += dc[i];
      }
    }
  }

  // Latent path: reparameterization plus the KL term.
  Matrix dmu(frames, cfg.latent_total());
  Matrix dlogvar(frames, cfg.latent_total());
  for (std::size_t i = 0; i < dz.size(); ++i) {
    const double std_half = std::exp(0.5 * trace.logvar.data[i]);
    dmu.data[i] = dz.data[i];
    dlogvar.data[i] = dz.data[i] * trace.eps.data[i] * 0.5 * std_half;
  }
  if (kl_weight > 0.0) {
    for (std::size_t t = 0; t < v; ++t) {
      for (std::size_t j = 0; j < cfg.latent_total(); ++j) {
        dmu(t, j) += kl_scale * trace.mu(t, j);
        dlogvar(t, j) += kl_scale * 0.5 * (std::exp(trace.logvar(t, j)) - 1.0);
      }
    }
  }
  // Clamp: gradient passes only where the raw value was inside the range.
  for (std::size_t i = 0; i < dlogvar.size(); ++i) {
    const double raw = trace.logvar_raw.data[i];
    if (raw <= kLogvarMin || raw >= kLogvarMax) dlogvar.data[i] = 0.0;
  }

  // Posterior heads.
  Matrix dh_enc(frames, 2 * cfg.enc_hidden);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < cfg.num_nodes; ++k) {
      const double* dm = dmu.row(t) + k * cfg.latent_dim;
      const double* dl = dlogvar.row(t) + k * cfg.latent_dim;
      detail::outer_acc(g.mu_heads[k].w, dm, trace.h_enc.row(t));
      detail::add_vec(g.mu_heads[k].b, dm, cfg.latent_dim);
      detail::matvec_t_acc(model.mu_heads[k].w, dm, dh_enc.row(t));
      detail::outer_acc(g.logvar_heads[k].w, dl, trace.h_enc.row(t));
      detail::add_vec(g.logvar_heads[k].b, dl, cfg.latent_dim);
      detail::matvec_t_acc(model.logvar_heads[k].w, dl, dh_enc.row(t));
    }
  }

  // Encoder BPTT, one direction at a time. The backward stream was traced in
  // its own processing order (frame T-1-s at step s).
  std::vector<double> zero_state(cfg.enc_hidden, 0.0);
  Matrix dh_fwd(frames, cfg.enc_hidden), dh_bwd(frames, cfg.enc_hidden);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < cfg.enc_hidden; ++i) {
      dh_fwd(t, i) = dh_enc(t, i);
      dh_bwd(frames - 1 - t, i) = dh_enc(t, cfg.enc_hidden + i);
    }
  }
  Matrix dx_fwd(frames, cfg.input_dim), dx_bwd(frames, cfg.input_dim);
  detail::lstm_backward(model.enc_fwd, trace.enc_fwd, dh_fwd, zero_state.data(),
                        zero_state.data(), cfg.enc_hidden, g.enc_fwd, dx_fwd);
  detail::lstm_backward(model.enc_bwd, trace.enc_bwd, dh_bwd, zero_state.data(),
                        zero_state.data(), cfg.enc_hidden, g.enc_bwd, dx_bwd);
  return g;
}

struct ForwardResult {
  LatentPosterior post;
  Matrix x_r;
  Losses losses;
};

/// encode -> sample -> decode -> elbo with the trace fully populated for a
/// later backward() call. Fixing the noise makes the whole pass deterministic.
inline ForwardResult run_forward(const VaeModel& model, const Matrix& x, const Matrix& noise,
                                 double kl_weight, ForwardTrace& trace,
                                 std::size_t valid_frames = 0) {
  ForwardResult r;
  r.post = encode(model, x, trace);
  trace.eps = noise;
  Matrix z = sample_latent(r.post, noise);
  r.x_r = decode(model, z, x.rows, trace);
  r.losses = elbo_loss(x, r.x_r, r.post, kl_weight, model.cfg.num_nodes, valid_frames);
  return r;
}

}  // namespace mnvae
