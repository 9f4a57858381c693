#include "nvsd/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace nvsd {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

int edit_distance(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest(const std::string& got,
                    const std::vector<std::string>& valid) {
  std::string best;
  int best_d = 1 << 30;
  for (const auto& v : valid) {
    int d = edit_distance(got, v);
    if (d < best_d) {
      best_d = d;
      best = v;
    }
  }
  return best;
}

[[noreturn]] void unknown_key(const std::string& section, const std::string& key,
                              const std::vector<std::string>& valid) {
  throw std::invalid_argument("unknown key '" + section + "." + key +
                              "' (did you mean '" + nearest(key, valid) + "'?)");
}

void check_keys(const json& j, const std::string& section,
                const std::vector<std::string>& valid) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(valid.begin(), valid.end(), it.key()) == valid.end())
      unknown_key(section, it.key(), valid);
}

template <typename T>
void read(const json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("key '" + section + "." + key +
                                "' has the wrong type");
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") +
                                e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config root must be an object");
  check_keys(j, "<root>",
             {"seed", "data", "model", "train", "diffusion", "sample", "eval",
              "experts", "invert"});
  if (!j.contains("seed"))
    throw std::invalid_argument("config is missing the mandatory 'seed' key");

  RunConfig cfg;
  try {
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw std::invalid_argument("key 'seed' has the wrong type");
  }

  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, "data",
               {"scenes", "views_per_scene", "resolution", "test_fraction"});
    read(d, "data", "scenes", cfg.data.scenes);
    read(d, "data", "views_per_scene", cfg.data.views_per_scene);
    read(d, "data", "resolution", cfg.data.resolution);
    read(d, "data", "test_fraction", cfg.data.test_fraction);
  }
  cfg.data.seed = cfg.seed;

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model",
               {"resolution", "base_channels", "channel_mult", "mechanism",
                "pose_token", "text", "freq_bands", "text_dim",
                "max_caption_len", "time_dim"});
    read(m, "model", "resolution", cfg.model.resolution);
    read(m, "model", "base_channels", cfg.model.base_channels);
    read(m, "model", "channel_mult", cfg.model.channel_mult);
    if (m.contains("mechanism")) {
      std::string s;
      read(m, "model", "mechanism", s);
      try {
        cfg.model.mechanism = parse_mechanism(s);
      } catch (const std::invalid_argument&) {
        throw std::invalid_argument(
            "key 'model.mechanism': unknown value '" + s + "' (did you mean '" +
            nearest(s, {"concat", "global_token", "dense_xattn"}) + "'?)");
      }
    }
    read(m, "model", "pose_token", cfg.model.pose_token);
    read(m, "model", "text", cfg.model.text);
    read(m, "model", "freq_bands", cfg.model.freq_bands);
    read(m, "model", "text_dim", cfg.model.text_dim);
    read(m, "model", "max_caption_len", cfg.model.max_caption_len);
    read(m, "model", "time_dim", cfg.model.time_dim);
  }
  cfg.model.validate();

  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train",
               {"batch_size", "total_steps", "text_drop", "image_drop",
                "lr_main", "lr_pose"});
    read(t, "train", "batch_size", cfg.train.batch_size);
    read(t, "train", "total_steps", cfg.train.total_steps);
    read(t, "train", "text_drop", cfg.train.text_drop);
    read(t, "train", "image_drop", cfg.train.image_drop);
    read(t, "train", "lr_main", cfg.train.lr_main);
    read(t, "train", "lr_pose", cfg.train.lr_pose);
  }
  cfg.train.seed = cfg.seed;
  if (cfg.train.text_drop < 0 || cfg.train.text_drop > 1 ||
      cfg.train.image_drop < 0 || cfg.train.image_drop > 1)
    throw std::invalid_argument("drop probabilities must lie in [0, 1]");

  if (j.contains("diffusion")) {
    const json& d = j["diffusion"];
    check_keys(d, "diffusion", {"steps", "beta_start", "beta_end"});
    read(d, "diffusion", "steps", cfg.schedule_steps);
    read(d, "diffusion", "beta_start", cfg.beta_start);
    read(d, "diffusion", "beta_end", cfg.beta_end);
  }
  if (j.contains("sample")) {
    const json& s = j["sample"];
    check_keys(s, "sample", {"steps", "alpha", "beta"});
    read(s, "sample", "steps", cfg.sample_steps);
    read(s, "sample", "alpha", cfg.alpha);
    read(s, "sample", "beta", cfg.beta);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    check_keys(e, "eval", {"targets_per_scene", "probe_scenes"});
    read(e, "eval", "targets_per_scene", cfg.eval_targets_per_scene);
    read(e, "eval", "probe_scenes", cfg.probe_scenes);
  }
  if (j.contains("experts")) {
    const json& e = j["experts"];
    check_keys(e, "experts", {"boundary", "steps_high"});
    read(e, "experts", "boundary", cfg.expert_boundary);
    read(e, "experts", "steps_high", cfg.expert_steps_high);
  }
  if (j.contains("invert")) {
    const json& i = j["invert"];
    check_keys(i, "invert", {"steps", "lr"});
    read(i, "invert", "steps", cfg.invert_steps);
    read(i, "invert", "lr", cfg.invert_lr);
  }
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::invalid_argument("cannot read config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), {});
  return parse_config(text);
}

std::string canonical_json(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["data"] = {{"scenes", c.data.scenes},
               {"views_per_scene", c.data.views_per_scene},
               {"resolution", c.data.resolution},
               {"test_fraction", c.data.test_fraction}};
  j["model"] = {{"resolution", c.model.resolution},
                {"base_channels", c.model.base_channels},
                {"channel_mult", c.model.channel_mult},
                {"mechanism", mechanism_name(c.model.mechanism)},
                {"pose_token", c.model.pose_token},
                {"text", c.model.text},
                {"freq_bands", c.model.freq_bands},
                {"text_dim", c.model.text_dim},
                {"max_caption_len", c.model.max_caption_len},
                {"time_dim", c.model.time_dim}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"total_steps", c.train.total_steps},
                {"text_drop", c.train.text_drop},
                {"image_drop", c.train.image_drop},
                {"lr_main", c.train.lr_main},
                {"lr_pose", c.train.lr_pose}};
  j["diffusion"] = {{"steps", c.schedule_steps},
                    {"beta_start", c.beta_start},
                    {"beta_end", c.beta_end}};
  j["sample"] = {{"steps", c.sample_steps}, {"alpha", c.alpha}, {"beta", c.beta}};
  j["eval"] = {{"targets_per_scene", c.eval_targets_per_scene},
               {"probe_scenes", c.probe_scenes}};
  j["experts"] = {{"boundary", c.expert_boundary},
                  {"steps_high", c.expert_steps_high}};
  j["invert"] = {{"steps", c.invert_steps}, {"lr", c.invert_lr}};
  return j.dump();
}

std::string config_fingerprint(const RunConfig& cfg) {
  std::string s = canonical_json(cfg);
  // FNV-1a, 64-bit.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int thread_cap() {
  const char* env = std::getenv("NVSD_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

}  // namespace nvsd
