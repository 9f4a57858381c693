#include "nvsd/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace nvsd {

NoiseSchedule make_schedule(int T, float beta_start, float beta_end) {
  if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
  if (!(beta_start > 0.0f) || !(beta_start <= beta_end) || !(beta_end < 1.0f))
    throw std::invalid_argument("need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0f);
  s.alpha.assign(T + 1, 0.0f);
  s.alpha_bar.assign(T + 1, 0.0f);
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    float b = T == 1 ? beta_start
                     : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.beta[t] = b;
    s.alpha[t] = 1.0f - b;
    prod *= s.alpha[t];
    s.alpha_bar[t] = static_cast<float>(prod);
  }
  return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& s) {
  if (t < 1 || t > s.T) throw std::invalid_argument("q_sample: t out of range");
  check_same_shape(x0, eps, "q_sample");
  float ab = s.alpha_bar[t];
  return add(scale(x0, std::sqrt(ab)), scale(eps, std::sqrt(1.0f - ab)));
}

std::vector<SceneExamples> make_training_scenes(const Dataset& ds,
                                                const Tokenizer& tok,
                                                int max_caption_len,
                                                bool train_split,
                                                Granularity g) {
  std::vector<SceneExamples> out;
  auto idx = train_split ? ds.train_indices() : ds.test_indices();
  for (int si : idx) {
    const DatasetScene& sc = ds.scenes[si];
    SceneExamples ex;
    ex.caption = tok.encode(make_caption(sc.spec, g).tokens, max_caption_len);
    for (const auto& v : sc.views)
      ex.views.push_back({image_to_tensor(v.image), v.pose});
    out.push_back(std::move(ex));
  }
  return out;
}

CondDrop condition_drop(const TrainConfig& cfg, long step, int sample) {
  SeededRng t(cfg.seed, RngStream::TextDropout);
  SeededRng i(cfg.seed, RngStream::ImageDropout);
  CondDrop d;
  d.text = t.fork(step).fork(sample).next_float() < cfg.text_drop;
  d.image = i.fork(step).fork(sample).next_float() < cfg.image_drop;
  return d;
}

AdamW make_optimizer(Denoiser& model, const TrainConfig& cfg) {
  return AdamW({{model.pose_group(), cfg.lr_pose},
                {model.main_group(), cfg.lr_main}});
}

float training_step(Denoiser& model, AdamW& opt,
                    const std::vector<SceneExamples>& pool,
                    const TrainConfig& cfg, const NoiseSchedule& sched,
                    long step, std::vector<int>* t_log) {
  if (pool.empty() || cfg.batch_size < 1)
    throw std::invalid_argument("training_step: empty batch");
  if (cfg.t_min < 1 || cfg.t_max > sched.T || cfg.t_min > cfg.t_max)
    throw std::invalid_argument("training_step: bad timestep window");
  SeededRng batch_rng = SeededRng(cfg.seed, RngStream::BatchSampling).fork(step);
  SeededRng t_rng = SeededRng(cfg.seed, RngStream::TimestepDraw).fork(step);
  SeededRng eps_rng = SeededRng(cfg.seed, RngStream::NoiseDraw).fork(step);

  const int max_len = model.config().max_caption_len;
  Tensor total;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const SceneExamples& sc = pool[batch_rng.next_below(pool.size())];
    int n = static_cast<int>(sc.views.size());
    int ci = static_cast<int>(batch_rng.next_below(n));
    int ti = static_cast<int>(batch_rng.next_below(n - 1));
    if (ti >= ci) ++ti;
    const ViewExample& cond = sc.views[ci];
    const ViewExample& tgt = sc.views[ti];
    RelativePose pose = relative_pose(cond.pose, tgt.pose);

    int t = cfg.t_min + static_cast<int>(
                            t_rng.next_below(cfg.t_max - cfg.t_min + 1));
    if (t_log) t_log->push_back(t);
    Tensor eps = Tensor::randn(tgt.image.shape(), eps_rng, 1.0f);
    Tensor x_t = q_sample(tgt.image, t, eps, sched);

    CondDrop drop = condition_drop(cfg, step, b);
    Tensor x_c = drop.image ? Tensor() : cond.image;
    std::vector<int> caption =
        drop.text ? Tokenizer::null_sequence(max_len) : sc.caption;

    Tensor e = model.predict_noise(x_t, t, x_c, pose, caption);
    Tensor li = scale(mse(e, eps), 1.0f / cfg.batch_size);
    total = total.defined() ? add(total, li) : li;
  }
  backward(total);
  // Pathways skipped by dropout this step still need (zero) gradients so the
  // optimizer can walk the full group.
  for (auto& p : model.parameters())
    if (!p.tensor.has_grad()) p.tensor.zero_grad();
  opt.step();
  return total.item();
}

std::shared_ptr<Denoiser> clone_model(const Denoiser& src) {
  SeededRng scratch(0, RngStream::ParamInit);
  auto dst = std::make_shared<Denoiser>(src.config(), scratch);
  const auto& a = src.parameters();
  auto& b = dst->parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name)
      throw std::logic_error("clone_model: parameter order mismatch");
    b[i].tensor.data() = a[i].tensor.data();
  }
  return dst;
}

Predictor make_predictor(const Denoiser& model) {
  return [&model](const Tensor& x_t, int t, const Tensor& x_c,
                  const RelativePose& pose, const std::vector<int>& caption) {
    return model.predict_noise(x_t, t, x_c, pose, caption);
  };
}

Predictor make_predictor(const ExpertPair& pair) {
  if (!pair.high || !pair.low)
    throw std::invalid_argument("expert pair is incomplete");
  return [&pair](const Tensor& x_t, int t, const Tensor& x_c,
                 const RelativePose& pose, const std::vector<int>& caption) {
    const Denoiser& m = t > pair.boundary ? *pair.high : *pair.low;
    return m.predict_noise(x_t, t, x_c, pose, caption);
  };
}

Tensor cfg_score(const Predictor& pred, const Tensor& x_t, int t,
                 const Tensor& x_c, const RelativePose& pose,
                 const std::vector<int>& caption, GuidanceScales scales,
                 int max_caption_len) {
  if (!(std::isfinite(scales.alpha) && std::isfinite(scales.beta)) ||
      scales.alpha < 0.0f || scales.beta < 0.0f)
    throw std::invalid_argument("guidance scales must be finite and >= 0");
  std::vector<int> null_cap = Tokenizer::null_sequence(max_caption_len);
  Tensor e0 = pred(x_t, t, Tensor(), pose, null_cap);
  Tensor e1 = pred(x_t, t, x_c, pose, null_cap);
  Tensor e2 = pred(x_t, t, x_c, pose, caption);
  const float c0 = 1.0f - scales.alpha;
  const float c1 = scales.alpha - scales.beta;
  const float c2 = scales.beta;
  std::vector<float> v(e0.numel());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = c0 * e0.data()[i] + c1 * e1.data()[i] + c2 * e2.data()[i];
  return Tensor::from(e0.shape(), std::move(v));
}

Image sample_loop(const Predictor& pred, const NoiseSchedule& sched,
                  const Tensor& x_c, const RelativePose& pose,
                  const std::vector<int>& caption, GuidanceScales scales,
                  int steps, int resolution, int max_caption_len,
                  SeededRng rng) {
  if (steps < 1 || steps > sched.T)
    throw std::invalid_argument("sample_loop: steps out of range");
  if (sched.T % steps != 0)
    throw std::invalid_argument("sample_loop: steps must divide T evenly");
  const int stride = sched.T / steps;
  Tensor x = Tensor::randn({3, resolution, resolution}, rng, 1.0f);
  for (int t = sched.T; t >= stride; t -= stride) {
    Tensor e = cfg_score(pred, x, t, x_c, pose, caption, scales, max_caption_len);
    const int t_prev = t - stride;
    const float ab = sched.alpha_bar[t];
    const float ab_prev = t_prev >= 1 ? sched.alpha_bar[t_prev] : 1.0f;
    std::vector<float> next(x.numel());
    const float inv_sab = 1.0f / std::sqrt(ab);
    const float s1mab = std::sqrt(1.0f - ab);
    if (t_prev == 0) {
      for (std::size_t i = 0; i < next.size(); ++i) {
        float x0 = (x.data()[i] - s1mab * e.data()[i]) * inv_sab;
        next[i] = std::max(-1.0f, std::min(1.0f, x0));
      }
    } else {
      const float a_eff = ab / ab_prev;
      const float b_eff = 1.0f - a_eff;
      const float cx0 = std::sqrt(ab_prev) * b_eff / (1.0f - ab);
      const float cxt = std::sqrt(a_eff) * (1.0f - ab_prev) / (1.0f - ab);
      const float sig = std::sqrt(b_eff * (1.0f - ab_prev) / (1.0f - ab));
      for (std::size_t i = 0; i < next.size(); ++i) {
        float x0 = (x.data()[i] - s1mab * e.data()[i]) * inv_sab;
        x0 = std::max(-1.0f, std::min(1.0f, x0));
        next[i] = cx0 * x0 + cxt * x.data()[i] + sig * rng.next_gaussian();
      }
    }
    x = Tensor::from(x.shape(), std::move(next));
  }
  return tensor_to_image(x);
}

ExpertPair train_expert_pair(const Denoiser& base,
                             const std::vector<SceneExamples>& pool,
                             TrainConfig cfg, const NoiseSchedule& sched,
                             int boundary, long steps_high,
                             std::vector<int>* t_hist_high,
                             std::vector<int>* t_hist_low) {
  if (boundary <= 1 || boundary >= sched.T)
    throw std::invalid_argument("expert boundary must lie inside (1, T)");
  ExpertPair pair;
  pair.boundary = boundary;
  pair.high = clone_model(base);
  pair.low = clone_model(base);

  TrainConfig hi = cfg;
  hi.t_min = boundary + 1;
  hi.t_max = sched.T;
  hi.total_steps = steps_high;
  hi.seed = mix64(cfg.seed ^ 0x68696768ull);  // distinct draws per expert
  AdamW opt_hi = make_optimizer(*pair.high, hi);
  for (long s = 0; s < hi.total_steps; ++s)
    training_step(*pair.high, opt_hi, pool, hi, sched, s, t_hist_high);

  TrainConfig lo = cfg;
  lo.t_min = 1;
  lo.t_max = boundary;
  lo.total_steps = steps_high * 4;  // the published budgets keep a 1:4 ratio
  lo.seed = mix64(cfg.seed ^ 0x6c6f7700ull);
  AdamW opt_lo = make_optimizer(*pair.low, lo);
  for (long s = 0; s < lo.total_steps; ++s)
    training_step(*pair.low, opt_lo, pool, lo, sched, s, t_hist_low);

  return pair;
}

InversionResult textual_inversion(Denoiser& model, const Tensor& x_c,
                                  const std::vector<std::string>& prefix_words,
                                  int steps, float lr, std::uint64_t seed,
                                  const NoiseSchedule& sched) {
  if (!model.config().text)
    throw std::invalid_argument("textual inversion needs a text-conditioned model");
  const Tokenizer& tok = model.tokenizer();
  const int max_len = model.config().max_caption_len;
  if (static_cast<int>(prefix_words.size()) + 1 > max_len)
    throw std::invalid_argument("inversion prefix too long");
  std::vector<int> ids(max_len, Tokenizer::kPad);
  for (std::size_t i = 0; i < prefix_words.size(); ++i)
    ids[i] = tok.id(prefix_words[i]);
  ids[prefix_words.size()] = Tokenizer::kInverted;

  Tensor& table = model.param("txt.embed");
  const int dt = table.dim(1);
  const int vocab = table.dim(0);
  std::vector<float> saved_row(table.data().begin() + Tokenizer::kInverted * dt,
                               table.data().begin() + (Tokenizer::kInverted + 1) * dt);

  // S* starts at the mean of the ordinary word embeddings.
  std::vector<float> init(dt, 0.0f);
  int nwords = vocab - 3;
  for (int r = 3; r < vocab; ++r)
    for (int c = 0; c < dt; ++c) init[c] += table.data()[r * dt + c] / nwords;
  Tensor sstar = Tensor::from({dt}, init, /*requires_grad=*/true);

  auto write_row = [&]() {
    std::copy(sstar.data().begin(), sstar.data().end(),
              table.data().begin() + Tokenizer::kInverted * dt);
  };
  RelativePose zero_pose{0.0f, 0.0f, 1.0f, 0.0f};
  auto step_loss = [&](int t, const Tensor& eps) {
    Tensor x_t = q_sample(x_c, t, eps, sched);
    Tensor e = model.predict_noise(x_t, t, x_c, zero_pose, ids);
    return mse(e, eps);
  };

  // Fixed (t, eps) pairs for the before/after comparison.
  const int kEvalPairs = 8;
  SeededRng eval_rng(seed, RngStream::EvalSampling);
  std::vector<int> eval_t;
  std::vector<Tensor> eval_eps;
  for (int i = 0; i < kEvalPairs; ++i) {
    eval_t.push_back(1 + static_cast<int>(eval_rng.next_below(sched.T)));
    eval_eps.push_back(Tensor::randn(x_c.shape(), eval_rng, 1.0f));
  }
  auto eval_loss = [&]() {
    write_row();
    float acc = 0.0f;
    for (int i = 0; i < kEvalPairs; ++i)
      acc += step_loss(eval_t[i], eval_eps[i]).item();
    return acc / kEvalPairs;
  };

  InversionResult res;
  res.eval_before = eval_loss();

  AdamW opt({{{{"s*", sstar}}, lr}});
  SeededRng t_rng(seed, RngStream::TimestepDraw);
  SeededRng eps_rng(seed, RngStream::NoiseDraw);
  for (int s = 0; s < steps; ++s) {
    write_row();
    int t = 1 + static_cast<int>(t_rng.next_below(sched.T));
    Tensor eps = Tensor::randn(x_c.shape(), eps_rng, 1.0f);
    Tensor loss = step_loss(t, eps);
    backward(loss);
    sstar.zero_grad();
    for (int c = 0; c < dt; ++c)
      sstar.grad()[c] = table.grad()[Tokenizer::kInverted * dt + c];
    // The model stays frozen: discard its gradients instead of stepping.
    for (auto& p : model.parameters())
      if (p.tensor.has_grad()) p.tensor.zero_grad();
    opt.step();
    res.losses.push_back(loss.item());
  }
  res.eval_after = eval_loss();
  res.embedding = sstar;

  std::copy(saved_row.begin(), saved_row.end(),
            table.data().begin() + Tokenizer::kInverted * dt);
  return res;
}

}  // namespace nvsd
