#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "nvsd/dataset.hpp"
#include "nvsd/diffusion.hpp"
#include "nvsd/metrics.hpp"
#include "nvsd/model.hpp"

namespace nvsd {

struct MetricReport {
  std::vector<float> psnr_items, ssim_items;
  float psnr_mean = 0, ssim_mean = 0;
  int count = 0;
  std::string fingerprint;
};

// Produces the target view from its identifiers; the caption is already
// resolved (real or <null>). Stubs in tests can peek at the ground truth;
// real generators only read the condition view.
using Generator =
    std::function<Image(const Dataset& ds, int scene, int cond_view,
                        int tgt_view, const std::vector<int>& caption)>;

// Wraps a denoiser predictor into a Generator: reads the condition view,
// computes the relative pose, samples with composed guidance. The sampler
// seed is forked per (scene, cond, target) so items are order-independent.
Generator make_model_generator(const Predictor& pred, const NoiseSchedule& sched,
                               GuidanceScales scales, int steps, int resolution,
                               int max_caption_len, std::uint64_t seed);

// Evaluates generated target views against ground-truth renders on held-out
// scenes. Every index must point at a test-split scene (throws otherwise —
// a train/test leak is not a recoverable condition). Condition view is view
// 0; targets are the next `targets_per_scene` views. with_text picks the
// fine caption or the <null> sequence.
MetricReport nvs_eval(const Generator& gen, const Dataset& ds,
                      const std::vector<int>& scene_indices, bool with_text,
                      const Tokenizer& tok, int max_caption_len,
                      int targets_per_scene, const std::string& fingerprint);

struct ProbeResult {
  std::array<std::array<int, 6>, 6> confusion{};  // [captioned][classified]
  int trials = 0;
  float accuracy = 0;
};

// Nearest-palette classification of the mean RGB over the masked region.
// Throws std::invalid_argument on an empty mask.
int classify_marker_color(const Image& img, const std::vector<std::uint8_t>& mask);

// Generates the rear view of a marker scene given a front condition view.
using ProbeGenerator = std::function<Image(
    const SceneSpec& scene, const CameraPose& front, const CameraPose& rear,
    const std::vector<int>& caption)>;

ProbeGenerator make_model_probe_generator(const Predictor& pred,
                                          const NoiseSchedule& sched,
                                          GuidanceScales scales, int steps,
                                          int resolution, int max_caption_len,
                                          std::uint64_t seed);

// For `scenes` fresh marker scenes: render a front condition view, pick a
// rear target pose, and for each of the 6 palette colors build the fine
// caption with that marker color and ask the generator for the rear view.
// The marker region (ground-truth geometric mask) is classified by nearest
// palette color. trials = scenes * 6.
ProbeResult controllability_probe(const ProbeGenerator& gen, int scenes,
                                  std::uint64_t seed, const Tokenizer& tok,
                                  int max_caption_len, int resolution);

struct SweepCell {
  float alpha, beta, psnr, ssim, probe_acc;
};

using ScaledGenerator = std::function<Generator(GuidanceScales)>;
using ScaledProbeGenerator = std::function<ProbeGenerator(GuidanceScales)>;

// Full Cartesian grid over (alphas x betas); per-cell seeds are fixed, so a
// rerun reproduces identical numbers.
std::vector<SweepCell> guidance_sweep(
    const ScaledGenerator& gen_at, const ScaledProbeGenerator& probe_at,
    const Dataset& ds, const std::vector<int>& scene_indices,
    const std::vector<float>& alphas, const std::vector<float>& betas,
    const Tokenizer& tok, int max_caption_len, int targets_per_scene,
    int probe_scenes, std::uint64_t seed);

// Header row + one line per cell; CRLF line ends, '.' decimal separator.
std::string sweep_to_csv(const std::vector<SweepCell>& cells);

// The four-config conditioning ladder: input-concat without text, dense
// cross-attention without text, + text, + pose token.
std::vector<DenoiserConfig> make_ablation_ladder(const DenoiserConfig& trunk);

struct AblationRow {
  std::string label;
  DenoiserConfig config;
  float psnr = 0, ssim = 0;
  float delta_psnr = 0;  // vs previous row; first row 0
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::string fingerprint;
};

// Trains every ladder config with identical trunk, seed, and budget, then
// evaluates each with nvs_eval under the same scales. Ladder configs whose
// trunks differ abort (the comparison would be uncontrolled). The trained
// models are handed back so callers can persist them.
AblationTable ablation_report(const Dataset& ds,
                              const std::vector<DenoiserConfig>& ladder,
                              const TrainConfig& tcfg,
                              const NoiseSchedule& sched, GuidanceScales scales,
                              int sample_steps, int targets_per_scene,
                              std::uint64_t eval_seed,
                              std::vector<std::shared_ptr<Denoiser>>* models = nullptr);

std::string report_to_json(const MetricReport& r);
std::string ablation_to_json(const AblationTable& t);

}  // namespace nvsd
