#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mnvae/vae.hpp"

namespace mnvae {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, one flat vector per model tensor in
/// checkpoint order.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;
};

inline AdamState make_adam_state(const VaeModel& model) {
  AdamState st;
  for_each_tensor(const_cast<VaeModel&>(model),
                  [&](const std::string&, std::vector<double>& t) {
                    st.m.emplace_back(t.size(), 0.0);
                    st.v.emplace_back(t.size(), 0.0);
                  });
  return st;
}

/// Bias-corrected update of one flat parameter block; t is the 1-based step.
inline void adam_update(std::vector<double>& params, const std::vector<double>& grads,
                        std::vector<double>& m, std::vector<double>& v, std::uint64_t t,
                        const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
    throw std::invalid_argument("adam_update: size mismatch");
  const double corr1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double corr2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = m[i] / corr1;
    const double vhat = v[i] / corr2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

/// One optimizer step over every model tensor.
inline void adam_step(VaeModel& model, const VaeGradients& grads, AdamState& state,
                      const AdamConfig& cfg) {
  std::vector<std::vector<double>*> params, gvecs;
  for_each_tensor(model, [&](const std::string&, std::vector<double>& t) { params.push_back(&t); });
  for_each_tensor(const_cast<VaeGradients&>(grads),
                  [&](const std::string&, std::vector<double>& t) { gvecs.push_back(&t); });
  if (params.size() != gvecs.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state/model layout mismatch");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->size() != gvecs[i]->size())
      throw std::invalid_argument("adam_step: tensor shape mismatch");
    adam_update(*params[i], *gvecs[i], state.m[i], state.v[i], state.step, cfg);
  }
}

}  // namespace mnvae
