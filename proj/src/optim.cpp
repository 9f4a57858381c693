#include "nvsd/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace nvsd {

AdamW::AdamW(std::vector<Group> groups, float beta1, float beta2,
             float weight_decay, float epsilon)
    : groups_(std::move(groups)),
      beta1_(beta1),
      beta2_(beta2),
      weight_decay_(weight_decay),
      epsilon_(epsilon) {
  slots_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    slots_[g].resize(groups_[g].params.size());
    for (std::size_t i = 0; i < groups_[g].params.size(); ++i) {
      std::size_t n = groups_[g].params[i].tensor.numel();
      slots_[g][i].m.assign(n, 0.0f);
      slots_[g][i].v.assign(n, 0.0f);
    }
  }
}

void AdamW::step() {
  ++step_count_;
  float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(step_count_));
  float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(step_count_));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    float lr = groups_[g].lr;
    for (std::size_t i = 0; i < groups_[g].params.size(); ++i) {
      NamedParam& p = groups_[g].params[i];
      if (!p.tensor.has_grad())
        throw std::runtime_error("adam_step: parameter '" + p.name +
                                 "' has no gradient");
      Slot& s = slots_[g][i];
      auto& w = p.tensor.data();
      auto& gr = p.tensor.grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        s.m[j] = beta1_ * s.m[j] + (1.0f - beta1_) * gr[j];
        s.v[j] = beta2_ * s.v[j] + (1.0f - beta2_) * gr[j] * gr[j];
        float mhat = s.m[j] / bc1;
        float vhat = s.v[j] / bc2;
        w[j] -= lr * (mhat / (std::sqrt(vhat) + epsilon_) + weight_decay_ * w[j]);
      }
      p.tensor.zero_grad();
    }
  }
}

}  // namespace nvsd
