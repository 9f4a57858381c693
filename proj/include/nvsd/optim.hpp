#pragma once

#include <string>
#include <vector>

#include "nvsd/tensor.hpp"

namespace nvsd {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Decoupled-weight-decay Adam over named parameter groups. Each group can
// carry its own learning rate (the pose encoder trains hotter than the rest).
class AdamW {
 public:
  struct Group {
    std::vector<NamedParam> params;
    float lr;
  };

  AdamW(std::vector<Group> groups, float beta1 = 0.9f, float beta2 = 0.999f,
        float weight_decay = 0.0f, float epsilon = 1e-8f);

  // Bias-corrected update; zeroes grads afterwards. Throws if any
  // parameter is missing its gradient.
  void step();

  long step_count() const { return step_count_; }

  // Moment buffers, exposed for checkpointing.
  struct Slot {
    std::vector<float> m;
    std::vector<float> v;
  };
  std::vector<std::vector<Slot>>& slots() { return slots_; }
  void set_step_count(long n) { step_count_ = n; }

 private:
  std::vector<Group> groups_;
  std::vector<std::vector<Slot>> slots_;
  float beta1_, beta2_, weight_decay_, epsilon_;
  long step_count_ = 0;
};

}  // namespace nvsd
