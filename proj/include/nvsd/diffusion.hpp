#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nvsd/dataset.hpp"
#include "nvsd/model.hpp"
#include "nvsd/optim.hpp"

namespace nvsd {

struct NoiseSchedule {
  int T = 0;
  // 1-indexed; slot 0 is unused padding so beta[t] reads naturally.
  std::vector<float> beta, alpha, alpha_bar;
};

// Linear betas, cumulative-product alpha_bar. Throws std::invalid_argument
// unless 0 < beta_start <= beta_end < 1 and T >= 1.
NoiseSchedule make_schedule(int T, float beta_start = 1e-4f,
                            float beta_end = 0.02f);

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& s);

struct GuidanceScales {
  float alpha = 1.0f;  // image guidance
  float beta = 1.0f;   // text guidance
};

struct TrainConfig {
  int batch_size = 4;
  long total_steps = 0;
  float text_drop = 0.5f;
  float image_drop = 0.1f;
  float lr_main = 1e-4f;
  float lr_pose = 1e-3f;
  std::uint64_t seed = 0;
  int t_min = 1;  // expert fine-tuning narrows this window
  int t_max = 1000;
};

// One scene's worth of training material: every view plus the caption.
struct ViewExample {
  Tensor image;  // [3 x res x res] in [-1, 1]
  CameraPose pose;
};
struct SceneExamples {
  std::vector<ViewExample> views;
  std::vector<int> caption;
};

std::vector<SceneExamples> make_training_scenes(const Dataset& ds,
                                                const Tokenizer& tok,
                                                int max_caption_len,
                                                bool train_split,
                                                Granularity g = Granularity::Fine);

// Per-sample condition dropout decision, pure in (seed, step, sample).
// Exposed so the rates are measurable in isolation.
struct CondDrop {
  bool text;
  bool image;
};
CondDrop condition_drop(const TrainConfig& cfg, long step, int sample);

// One optimizer step: sample a batch of (condition view, target view) pairs,
// noise the targets at uniform t in [t_min, t_max], apply condition dropout,
// minimize MSE to the injected noise. Returns the batch loss. When t_log is
// given, every sampled t is appended (expert-training histogram).
float training_step(Denoiser& model, AdamW& opt,
                    const std::vector<SceneExamples>& pool,
                    const TrainConfig& cfg, const NoiseSchedule& sched,
                    long step, std::vector<int>* t_log = nullptr);

// Convenience: fresh optimizer with the hot pose group.
AdamW make_optimizer(Denoiser& model, const TrainConfig& cfg);

// Denoiser with identical config and bit-identical parameters.
std::shared_ptr<Denoiser> clone_model(const Denoiser& src);

struct ExpertPair {
  std::shared_ptr<Denoiser> high, low;
  int boundary = 800;
};

using Predictor = std::function<Tensor(
    const Tensor& x_t, int t, const Tensor& x_c, const RelativePose& pose,
    const std::vector<int>& caption)>;

Predictor make_predictor(const Denoiser& model);
// Dispatch purely on t: t > boundary -> high, else low.
Predictor make_predictor(const ExpertPair& pair);

// Composed guidance: eps0 + alpha (eps1 - eps0) + beta (eps2 - eps1) over the
// branches eps0 = (null image, pose, null text), eps1 = (image, pose, null
// text), eps2 = (image, pose, text). Evaluated in the coefficient form
// (1-alpha) eps0 + (alpha-beta) eps1 + beta eps2, so alpha = beta = 1 returns
// eps2 bit-exactly and alpha = beta = 0 returns eps0.
Tensor cfg_score(const Predictor& pred, const Tensor& x_t, int t,
                 const Tensor& x_c, const RelativePose& pose,
                 const std::vector<int>& caption, GuidanceScales scales,
                 int max_caption_len);

// Strided ancestral sampling from pure Gaussian noise; `steps` must divide
// the schedule length. The returned image lives in [0, 1].
Image sample_loop(const Predictor& pred, const NoiseSchedule& sched,
                  const Tensor& x_c, const RelativePose& pose,
                  const std::vector<int>& caption, GuidanceScales scales,
                  int steps, int resolution, int max_caption_len,
                  SeededRng rng);

// Fine-tune two copies of `base` on disjoint timestep ranges split at
// `boundary`; step budgets keep the 1:4 (high:low) ratio via steps_high.
ExpertPair train_expert_pair(const Denoiser& base,
                             const std::vector<SceneExamples>& pool,
                             TrainConfig cfg, const NoiseSchedule& sched,
                             int boundary, long steps_high,
                             std::vector<int>* t_hist_high = nullptr,
                             std::vector<int>* t_hist_low = nullptr);

struct InversionResult {
  Tensor embedding;           // S*
  std::vector<float> losses;  // per-step training loss
  float eval_before = 0;      // fixed-noise loss before/after optimization
  float eval_after = 0;
};

// Optimize a single token embedding so that "prefix words + S*" reconstructs
// x_c at zero relative pose. Every model weight is bit-identical afterwards.
InversionResult textual_inversion(Denoiser& model, const Tensor& x_c,
                                  const std::vector<std::string>& prefix_words,
                                  int steps, float lr, std::uint64_t seed,
                                  const NoiseSchedule& sched);

}  // namespace nvsd
