#include "nvsd/evalsuite.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace nvsd {

Generator make_model_generator(const Predictor& pred, const NoiseSchedule& sched,
                               GuidanceScales scales, int steps, int resolution,
                               int max_caption_len, std::uint64_t seed) {
  return [pred, sched, scales, steps, resolution, max_caption_len, seed](
             const Dataset& ds, int scene, int cond_view, int tgt_view,
             const std::vector<int>& caption) {
    const DatasetScene& sc = ds.scenes[scene];
    Tensor x_c = image_to_tensor(sc.views[cond_view].image);
    RelativePose pose =
        relative_pose(sc.views[cond_view].pose, sc.views[tgt_view].pose);
    std::uint64_t sub = (std::uint64_t(scene) << 20) |
                        (std::uint64_t(cond_view) << 10) |
                        std::uint64_t(tgt_view);
    SeededRng rng = SeededRng(seed, RngStream::SamplerNoise).fork(sub);
    return sample_loop(pred, sched, x_c, pose, caption, scales, steps,
                       resolution, max_caption_len, rng);
  };
}

MetricReport nvs_eval(const Generator& gen, const Dataset& ds,
                      const std::vector<int>& scene_indices, bool with_text,
                      const Tokenizer& tok, int max_caption_len,
                      int targets_per_scene, const std::string& fingerprint) {
  MetricReport rep;
  rep.fingerprint = fingerprint + "|with_text=" + (with_text ? "1" : "0");
  for (int si : scene_indices) {
    if (si < 0 || si >= static_cast<int>(ds.scenes.size()))
      throw std::invalid_argument("nvs_eval: scene index out of range");
    const DatasetScene& sc = ds.scenes[si];
    if (!sc.test)
      throw std::invalid_argument(
          "nvs_eval: scene " + std::to_string(sc.scene_id) +
          " is in the training split; refusing to evaluate on it");
    std::vector<int> caption =
        with_text ? tok.encode(make_caption(sc.spec, Granularity::Fine).tokens,
                               max_caption_len)
                  : Tokenizer::null_sequence(max_caption_len);
    int n = static_cast<int>(sc.views.size());
    for (int k = 1; k <= targets_per_scene && k < n; ++k) {
      Image out = gen(ds, si, 0, k, caption);
      const Image& gt = sc.views[k].image;
      rep.psnr_items.push_back(psnr(out, gt));
      rep.ssim_items.push_back(ssim(out, gt));
    }
  }
  rep.count = static_cast<int>(rep.psnr_items.size());
  if (rep.count == 0) throw std::invalid_argument("nvs_eval: no items");
  double ps = 0, ss = 0;
  for (int i = 0; i < rep.count; ++i) {
    ps += rep.psnr_items[i];
    ss += rep.ssim_items[i];
  }
  rep.psnr_mean = static_cast<float>(ps / rep.count);
  rep.ssim_mean = static_cast<float>(ss / rep.count);
  return rep;
}

int classify_marker_color(const Image& img,
                          const std::vector<std::uint8_t>& mask) {
  const int n = img.res * img.res;
  if (static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("classify_marker_color: mask size mismatch");
  double r = 0, g = 0, b = 0;
  int count = 0;
  for (int i = 0; i < n; ++i)
    if (mask[i]) {
      r += img.chw[i];
      g += img.chw[n + i];
      b += img.chw[2 * n + i];
      ++count;
    }
  if (count == 0)
    throw std::invalid_argument("classify_marker_color: empty marker mask");
  r /= count;
  g /= count;
  b /= count;
  int best = 0;
  double best_d = 1e30;
  for (int c = 0; c < 6; ++c) {
    double dr = r - kPalette[c].x, dg = g - kPalette[c].y, db = b - kPalette[c].z;
    double d = dr * dr + dg * dg + db * db;
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

ProbeGenerator make_model_probe_generator(const Predictor& pred,
                                          const NoiseSchedule& sched,
                                          GuidanceScales scales, int steps,
                                          int resolution, int max_caption_len,
                                          std::uint64_t seed) {
  return [pred, sched, scales, steps, resolution, max_caption_len, seed](
             const SceneSpec& scene, const CameraPose& front,
             const CameraPose& rear, const std::vector<int>& caption) {
    Image cond = render_view(scene, front, resolution);
    Tensor x_c = image_to_tensor(cond);
    RelativePose pose = relative_pose(front, rear);
    std::uint64_t sub = mix64(scene.seed ^ std::uint64_t(caption[0] * 977 + 1));
    SeededRng rng = SeededRng(seed, RngStream::SamplerNoise).fork(sub);
    return sample_loop(pred, sched, x_c, pose, caption, scales, steps,
                       resolution, max_caption_len, rng);
  };
}

ProbeResult controllability_probe(const ProbeGenerator& gen, int scenes,
                                  std::uint64_t seed, const Tokenizer& tok,
                                  int max_caption_len, int resolution) {
  ProbeResult res;
  SeededRng scene_rng(seed, RngStream::EvalSampling);
  for (int s = 0; s < scenes; ++s) {
    SeededRng srng = scene_rng.fork(2 * s);
    SceneSpec scene = sample_scene(srng);
    scene.seed = mix64(seed ^ std::uint64_t(s));
    SeededRng prng = scene_rng.fork(2 * s + 1);
    CameraPose front{prng.uniform(60.0f, 120.0f), prng.uniform(-60.0f, 60.0f),
                     prng.uniform(1.6f, 2.0f)};
    if (front.phi_deg < 0) front.phi_deg += 360.0f;
    CameraPose rear{prng.uniform(60.0f, 120.0f), prng.uniform(135.0f, 225.0f),
                    prng.uniform(1.6f, 2.0f)};
    // Geometric ground truth; independent of the captioned marker color.
    RenderOutput gt = render_view_full(scene, rear, resolution);
    bool any = false;
    for (std::uint8_t m : gt.marker_mask) any = any || m;
    if (!any)
      throw std::runtime_error("controllability_probe: marker mask empty");
    for (int c = 0; c < 6; ++c) {
      SceneSpec captioned = scene;
      captioned.marker.color = c;
      std::vector<int> caption = tok.encode(
          make_caption(captioned, Granularity::Fine).tokens, max_caption_len);
      Image out = gen(scene, front, rear, caption);
      int got = classify_marker_color(out, gt.marker_mask);
      res.confusion[c][got]++;
      ++res.trials;
    }
  }
  int correct = 0;
  for (int c = 0; c < 6; ++c) correct += res.confusion[c][c];
  res.accuracy = res.trials ? float(correct) / res.trials : 0.0f;
  return res;
}

std::vector<SweepCell> guidance_sweep(
    const ScaledGenerator& gen_at, const ScaledProbeGenerator& probe_at,
    const Dataset& ds, const std::vector<int>& scene_indices,
    const std::vector<float>& alphas, const std::vector<float>& betas,
    const Tokenizer& tok, int max_caption_len, int targets_per_scene,
    int probe_scenes, std::uint64_t seed) {
  if (alphas.empty() || betas.empty())
    throw std::invalid_argument("guidance_sweep: empty grid");
  std::vector<SweepCell> cells;
  for (float a : alphas)
    for (float b : betas) {
      GuidanceScales sc{a, b};
      MetricReport rep = nvs_eval(gen_at(sc), ds, scene_indices, true, tok,
                                  max_caption_len, targets_per_scene, "sweep");
      ProbeResult probe = controllability_probe(probe_at(sc), probe_scenes,
                                                seed, tok, max_caption_len,
                                                ds.resolution);
      cells.push_back({a, b, rep.psnr_mean, rep.ssim_mean, probe.accuracy});
    }
  return cells;
}

std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::string out = "alpha,beta,psnr,ssim,probe_acc\r\n";
  char line[160];
  for (const auto& c : cells) {
    std::snprintf(line, sizeof(line), "%g,%g,%.4f,%.4f,%.4f\r\n", c.alpha,
                  c.beta, c.psnr, c.ssim, c.probe_acc);
    out += line;
  }
  return out;
}

std::vector<DenoiserConfig> make_ablation_ladder(const DenoiserConfig& trunk) {
  DenoiserConfig a = trunk;
  a.mechanism = Mechanism::Concat;
  a.text = false;
  a.pose_token = false;
  DenoiserConfig b = trunk;
  b.mechanism = Mechanism::DenseXAttn;
  b.text = false;
  b.pose_token = false;
  DenoiserConfig c = b;
  c.text = true;
  DenoiserConfig d = c;
  d.pose_token = true;
  return {a, b, c, d};
}

AblationTable ablation_report(const Dataset& ds,
                              const std::vector<DenoiserConfig>& ladder,
                              const TrainConfig& tcfg,
                              const NoiseSchedule& sched, GuidanceScales scales,
                              int sample_steps, int targets_per_scene,
                              std::uint64_t eval_seed,
                              std::vector<std::shared_ptr<Denoiser>>* models) {
  if (ladder.empty()) throw std::invalid_argument("ablation_report: no configs");
  for (const auto& c : ladder) {
    if (c.base_channels != ladder[0].base_channels ||
        c.channel_mult != ladder[0].channel_mult ||
        c.resolution != ladder[0].resolution)
      throw std::invalid_argument(
          "ablation_report: ladder configs differ in trunk size; the "
          "comparison would be uncontrolled");
  }

  Tokenizer tok = Tokenizer::standard();
  AblationTable table;
  table.fingerprint = "seed=" + std::to_string(tcfg.seed) +
                      ",steps=" + std::to_string(tcfg.total_steps);
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    SeededRng init(tcfg.seed, RngStream::ParamInit);
    auto model = std::make_shared<Denoiser>(ladder[i], init);
    auto pool = make_training_scenes(ds, model->tokenizer(),
                                     ladder[i].max_caption_len, true);
    AdamW opt = make_optimizer(*model, tcfg);
    for (long s = 0; s < tcfg.total_steps; ++s)
      training_step(*model, opt, pool, tcfg, sched, s);

    Predictor pred = make_predictor(*model);
    Generator gen = make_model_generator(pred, sched, scales, sample_steps,
                                         ladder[i].resolution,
                                         ladder[i].max_caption_len, eval_seed);
    MetricReport rep =
        nvs_eval(gen, ds, ds.test_indices(), ladder[i].text, tok,
                 ladder[i].max_caption_len, targets_per_scene,
                 std::string("ablation:") + mechanism_name(ladder[i].mechanism));

    AblationRow row;
    row.label = std::string(mechanism_name(ladder[i].mechanism)) +
                (ladder[i].text ? "+text" : "") +
                (ladder[i].pose_token ? "+pose_token" : "");
    row.config = ladder[i];
    row.psnr = rep.psnr_mean;
    row.ssim = rep.ssim_mean;
    row.delta_psnr = i == 0 ? 0.0f : rep.psnr_mean - table.rows.back().psnr;
    table.rows.push_back(row);
    if (models) models->push_back(model);
  }
  return table;
}

std::string report_to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["fingerprint"] = r.fingerprint;
  j["count"] = r.count;
  j["psnr_mean"] = r.psnr_mean;
  j["ssim_mean"] = r.ssim_mean;
  j["psnr_items"] = r.psnr_items;
  j["ssim_items"] = r.ssim_items;
  return j.dump(2);
}

std::string ablation_to_json(const AblationTable& t) {
  nlohmann::ordered_json j;
  j["fingerprint"] = t.fingerprint;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : t.rows) {
    nlohmann::ordered_json row;
    row["label"] = r.label;
    row["mechanism"] = mechanism_name(r.config.mechanism);
    row["text"] = r.config.text;
    row["pose_token"] = r.config.pose_token;
    row["psnr"] = r.psnr;
    row["ssim"] = r.ssim;
    row["delta_psnr"] = r.delta_psnr;
    j["rows"].push_back(row);
  }
  return j.dump(2);
}

}  // namespace nvsd
