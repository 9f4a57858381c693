#include "nvsd/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "nvsd/checkpoint.hpp"
#include "nvsd/config.hpp"
#include "nvsd/evalsuite.hpp"
#include "nvsd/image_io.hpp"

namespace nvsd {

namespace {

namespace fs = std::filesystem;

// Every config-driven command drops its artifacts under a directory whose
// name carries the config fingerprint, so runs never overwrite each other
// silently.
std::string make_run_dir(const std::string& run_dir, const RunConfig& cfg) {
  fs::path dir = fs::path(run_dir) / ("run-" + config_fingerprint(cfg));
  fs::create_directories(dir);
  return dir.string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

RelativePose parse_pose_arg(const std::string& s) {
  float dtheta = 0, dphi = 0, dr = 0;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto eq = part.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("pose must look like dtheta=0,dphi=90,dr=0");
    std::string key = part.substr(0, eq);
    float val = std::stof(part.substr(eq + 1));
    if (key == "dtheta") dtheta = val;
    else if (key == "dphi") dphi = val;
    else if (key == "dr") dr = val;
    else throw std::runtime_error("unknown pose component '" + key + "'");
  }
  const float deg = 3.14159265358979323846f / 180.0f;
  return {dtheta * deg, std::sin(dphi * deg), std::cos(dphi * deg), dr};
}

std::vector<int> parse_caption_arg(const std::string& text,
                                   const Tokenizer& tok, int max_len) {
  if (text.empty()) return Tokenizer::null_sequence(max_len);
  std::vector<std::string> words;
  std::stringstream ss(text);
  std::string w;
  while (ss >> w) words.push_back(w);
  return tok.encode(words, max_len);
}

std::vector<float> parse_grid_arg(const std::string& s) {
  std::vector<float> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stof(part));
  return out;
}

// Checkpoint-kind-agnostic predictor. The owning models ride inside the
// returned closure.
Predictor load_predictor(const std::string& path, DenoiserConfig& cfg_out) {
  Checkpoint ck = load_checkpoint(path);
  std::string kind = ck.meta.value("kind", "");
  if (kind == "model") {
    auto model = load_model(path);
    cfg_out = model->config();
    return [model](const Tensor& x_t, int t, const Tensor& x_c,
                   const RelativePose& pose, const std::vector<int>& cap) {
      return model->predict_noise(x_t, t, x_c, pose, cap);
    };
  }
  if (kind == "expert_pair") {
    auto pair = std::make_shared<ExpertPair>(load_expert_pair(path));
    cfg_out = pair->high->config();
    return [pair](const Tensor& x_t, int t, const Tensor& x_c,
                  const RelativePose& pose, const std::vector<int>& cap) {
      const Denoiser& m = t > pair->boundary ? *pair->high : *pair->low;
      return m.predict_noise(x_t, t, x_c, pose, cap);
    };
  }
  throw std::runtime_error("unrecognized checkpoint kind in " + path);
}

long expert_high_budget(const RunConfig& cfg) {
  return cfg.expert_steps_high > 0 ? cfg.expert_steps_high
                                   : cfg.train.total_steps / 5;
}

int run_gen_data(const std::string& config_path, const std::string& run_dir,
                 bool force) {
  RunConfig cfg = parse_config_file(config_path);
  std::string dir = make_run_dir(run_dir, cfg);
  DatasetConfig dcfg = cfg.data;
  dcfg.out_dir = (fs::path(dir) / "data").string();
  dcfg.force = force;
  build_dataset(dcfg);
  std::cout << dcfg.out_dir << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& run_dir, std::string out) {
  RunConfig cfg = parse_config_file(config_path);
  std::string dir = make_run_dir(run_dir, cfg);
  if (out.empty()) out = (fs::path(dir) / "model.nvsd").string();

  Dataset ds = load_dataset(data_dir);
  NoiseSchedule sched = make_schedule(cfg.schedule_steps, cfg.beta_start,
                                      cfg.beta_end);
  SeededRng init(cfg.seed, RngStream::ParamInit);
  Denoiser model(cfg.model, init);
  auto pool = make_training_scenes(ds, model.tokenizer(),
                                   cfg.model.max_caption_len, true);
  AdamW opt = make_optimizer(model, cfg.train);
  for (long s = 0; s < cfg.train.total_steps; ++s) {
    float loss = training_step(model, opt, pool, cfg.train, sched, s);
    if (s % 100 == 0 || s + 1 == cfg.train.total_steps)
      std::cout << "step " << s << " loss " << loss << "\n";
  }
  nlohmann::ordered_json meta;
  meta["fingerprint"] = config_fingerprint(cfg);
  meta["step"] = cfg.train.total_steps;
  save_checkpoint(model, out, meta);
  std::cout << out << "\n";
  return 0;
}

int run_train_experts(const std::string& config_path, const std::string& data_dir,
                      const std::string& base_path, const std::string& run_dir,
                      std::string out) {
  RunConfig cfg = parse_config_file(config_path);
  std::string dir = make_run_dir(run_dir, cfg);
  if (out.empty()) out = (fs::path(dir) / "experts.nvsd").string();

  Dataset ds = load_dataset(data_dir);
  NoiseSchedule sched = make_schedule(cfg.schedule_steps, cfg.beta_start,
                                      cfg.beta_end);
  auto base = load_model(base_path);
  auto pool = make_training_scenes(ds, base->tokenizer(),
                                   base->config().max_caption_len, true);
  ExpertPair pair = train_expert_pair(*base, pool, cfg.train, sched,
                                      cfg.expert_boundary,
                                      expert_high_budget(cfg));
  nlohmann::ordered_json meta;
  meta["fingerprint"] = config_fingerprint(cfg);
  save_expert_pair(pair, out, meta);
  std::cout << out << "\n";
  return 0;
}

int run_sample(const std::string& ckpt, const std::string& image_path,
               const std::string& pose_arg, const std::string& text,
               float alpha, float beta, std::uint64_t seed, int steps,
               std::string out) {
  DenoiserConfig mcfg;
  Predictor pred = load_predictor(ckpt, mcfg);
  Image cond = read_ppm(image_path);
  if (cond.res != mcfg.resolution)
    throw std::runtime_error("condition image resolution " +
                             std::to_string(cond.res) + " != model's " +
                             std::to_string(mcfg.resolution));
  Tokenizer tok = Tokenizer::standard();
  std::vector<int> caption = parse_caption_arg(text, tok, mcfg.max_caption_len);
  RelativePose pose = parse_pose_arg(pose_arg);
  NoiseSchedule sched = make_schedule(1000);
  if (out.empty()) out = "sample.ppm";
  SeededRng rng(seed, RngStream::SamplerNoise);
  Image img = sample_loop(pred, sched, image_to_tensor(cond), pose, caption,
                          {alpha, beta}, steps, mcfg.resolution,
                          mcfg.max_caption_len, rng);
  write_ppm(out, img);
  std::cout << out << "\n";
  return 0;
}

int run_invert(const std::string& ckpt, const std::string& image_path,
               int steps, float lr, std::uint64_t seed, std::string out) {
  auto model = load_model(ckpt);
  Image cond = read_ppm(image_path);
  NoiseSchedule sched = make_schedule(1000);
  InversionResult res =
      textual_inversion(*model, image_to_tensor(cond), {"a"}, steps, lr, seed,
                        sched);
  nlohmann::ordered_json j;
  j["embedding"] = res.embedding.data();
  j["eval_before"] = res.eval_before;
  j["eval_after"] = res.eval_after;
  j["steps"] = steps;
  if (out.empty()) out = "inversion.json";
  write_text(out, j.dump(2));
  std::cout << out << "\n";
  return 0;
}

int run_eval(const std::string& config_path, const std::string& ckpt,
             const std::string& data_dir, bool no_text,
             const std::string& run_dir, std::string out) {
  RunConfig cfg = parse_config_file(config_path);
  std::string dir = make_run_dir(run_dir, cfg);
  if (out.empty()) out = (fs::path(dir) / "report.json").string();

  Dataset ds = load_dataset(data_dir);
  DenoiserConfig mcfg;
  Predictor pred = load_predictor(ckpt, mcfg);
  NoiseSchedule sched = make_schedule(cfg.schedule_steps, cfg.beta_start,
                                      cfg.beta_end);
  Tokenizer tok = Tokenizer::standard();
  Generator gen = make_model_generator(pred, sched, {cfg.alpha, cfg.beta},
                                       cfg.sample_steps, mcfg.resolution,
                                       mcfg.max_caption_len, cfg.seed);
  MetricReport rep =
      nvs_eval(gen, ds, ds.test_indices(), !no_text, tok,
               mcfg.max_caption_len, cfg.eval_targets_per_scene,
               config_fingerprint(cfg) + "|ckpt=" + ckpt);
  write_text(out, report_to_json(rep));
  std::cout << "psnr " << rep.psnr_mean << " ssim " << rep.ssim_mean << "\n"
            << out << "\n";
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& ckpt,
              const std::string& data_dir, const std::string& alphas_arg,
              const std::string& betas_arg, const std::string& run_dir,
              std::string out) {
  RunConfig cfg = parse_config_file(config_path);
  std::string dir = make_run_dir(run_dir, cfg);
  if (out.empty()) out = (fs::path(dir) / "sweep.csv").string();

  Dataset ds = load_dataset(data_dir);
  DenoiserConfig mcfg;
  Predictor pred = load_predictor(ckpt, mcfg);
  NoiseSchedule sched = make_schedule(cfg.schedule_steps, cfg.beta_start,
                                      cfg.beta_end);
  Tokenizer tok = Tokenizer::standard();
  ScaledGenerator gen_at = [&](GuidanceScales sc) {
    return make_model_generator(pred, sched, sc, cfg.sample_steps,
                                mcfg.resolution, mcfg.max_caption_len,
                                cfg.seed);
  };
  ScaledProbeGenerator probe_at = [&](GuidanceScales sc) {
    return make_model_probe_generator(pred, sched, sc, cfg.sample_steps,
                                      mcfg.resolution, mcfg.max_caption_len,
                                      cfg.seed);
  };
  auto cells = guidance_sweep(gen_at, probe_at, ds, ds.test_indices(),
                              parse_grid_arg(alphas_arg),
                              parse_grid_arg(betas_arg), tok,
                              mcfg.max_caption_len, cfg.eval_targets_per_scene,
                              cfg.probe_scenes, cfg.seed);
  write_text(out, sweep_to_csv(cells));
  std::cout << out << "\n";
  return 0;
}

int run_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& run_dir, std::string out) {
  RunConfig cfg = parse_config_file(config_path);
  std::string dir = make_run_dir(run_dir, cfg);
  if (out.empty()) out = (fs::path(dir) / "ablation.json").string();

  Dataset ds = load_dataset(data_dir);
  NoiseSchedule sched = make_schedule(cfg.schedule_steps, cfg.beta_start,
                                      cfg.beta_end);
  AblationTable table = ablation_report(
      ds, make_ablation_ladder(cfg.model), cfg.train, sched,
      {cfg.alpha, cfg.beta}, cfg.sample_steps, cfg.eval_targets_per_scene,
      cfg.seed);
  write_text(out, ablation_to_json(table));
  std::cout << out << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"text- and pose-conditioned novel view synthesis on procedural scenes"};
  app.require_subcommand(1);
  std::string run_dir = ".";
  app.add_option("--run-dir", run_dir, "directory that receives run outputs");

  std::string config_path, data_dir, base_path, ckpt, image_path, out;
  std::string pose_arg = "dtheta=0,dphi=0,dr=0", text;
  std::string alphas_arg = "1,2,3,5", betas_arg = "1,2,3,5";
  float alpha = 1.0f, beta = 1.0f, lr = 1e-2f;
  std::uint64_t seed = 0;
  int steps = 50;
  bool force = false, no_text = false;

  auto* gen = app.add_subcommand("gen-data", "render a procedural multi-view dataset");
  gen->add_option("--config", config_path)->required();
  gen->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "train a denoiser");
  train->add_option("--config", config_path)->required();
  train->add_option("--data", data_dir)->required();
  train->add_option("--out", out);

  auto* experts = app.add_subcommand("train-experts",
                                     "fine-tune a high/low timestep expert pair");
  experts->add_option("--config", config_path)->required();
  experts->add_option("--data", data_dir)->required();
  experts->add_option("--base", base_path)->required();
  experts->add_option("--out", out);

  auto* sample = app.add_subcommand("sample", "generate one novel view");
  sample->add_option("--ckpt", ckpt)->required();
  sample->add_option("--image", image_path)->required();
  sample->add_option("--pose", pose_arg, "dtheta=deg,dphi=deg,dr=units");
  sample->add_option("--text", text, "caption; empty means unconditional");
  sample->add_option("--alpha", alpha, "image guidance scale");
  sample->add_option("--beta", beta, "text guidance scale");
  sample->add_option("--seed", seed);
  sample->add_option("--steps", steps);
  sample->add_option("--out", out);

  auto* invert = app.add_subcommand("invert", "learn a token embedding for one image");
  invert->add_option("--ckpt", ckpt)->required();
  invert->add_option("--image", image_path)->required();
  invert->add_option("--steps", steps);
  invert->add_option("--lr", lr);
  invert->add_option("--seed", seed);
  invert->add_option("--out", out);

  auto* ev = app.add_subcommand("eval", "held-out view synthesis metrics");
  ev->add_option("--config", config_path)->required();
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_flag("--no-text", no_text, "evaluate with the null caption");
  ev->add_option("--out", out);

  auto* sweep = app.add_subcommand("sweep", "guidance-scale grid -> CSV");
  sweep->add_option("--config", config_path)->required();
  sweep->add_option("--ckpt", ckpt)->required();
  sweep->add_option("--data", data_dir)->required();
  sweep->add_option("--alphas", alphas_arg, "comma-separated image scales");
  sweep->add_option("--betas", betas_arg, "comma-separated text scales");
  sweep->add_option("--out", out);

  auto* ablate = app.add_subcommand("ablate", "train + evaluate the conditioning ladder");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--data", data_dir)->required();
  ablate->add_option("--out", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(config_path, run_dir, force);
    if (train->parsed()) return run_train(config_path, data_dir, run_dir, out);
    if (experts->parsed())
      return run_train_experts(config_path, data_dir, base_path, run_dir, out);
    if (sample->parsed())
      return run_sample(ckpt, image_path, pose_arg, text, alpha, beta, seed,
                        steps, out);
    if (invert->parsed())
      return run_invert(ckpt, image_path, steps, lr, seed, out);
    if (ev->parsed())
      return run_eval(config_path, ckpt, data_dir, no_text, run_dir, out);
    if (sweep->parsed())
      return run_sweep(config_path, ckpt, data_dir, alphas_arg, betas_arg,
                       run_dir, out);
    if (ablate->parsed()) return run_ablate(config_path, data_dir, run_dir, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace nvsd
