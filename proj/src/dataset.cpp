#include "nvsd/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "nvsd/image_io.hpp"

namespace nvsd {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

ordered_json primitive_json(const Primitive& p) {
  return ordered_json{
      {"kind", kPrimitiveNames[static_cast<int>(p.kind)]},
      {"center", {p.center.x, p.center.y, p.center.z}},
      {"size", {p.size[0], p.size[1], p.size[2]}},
      {"albedo", kColorNames[p.albedo]},
  };
}

int name_index(const std::string& name, const auto& names, const char* what) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (name == names[i]) return static_cast<int>(i);
  throw std::runtime_error(std::string("manifest: unknown ") + what + " '" + name + "'");
}

Primitive primitive_from_json(const ordered_json& j) {
  Primitive p;
  p.kind = static_cast<PrimitiveKind>(
      name_index(j.at("kind"), kPrimitiveNames, "primitive kind"));
  p.center = {j.at("center")[0], j.at("center")[1], j.at("center")[2]};
  p.size = {j.at("size")[0], j.at("size")[1], j.at("size")[2]};
  p.albedo = name_index(j.at("albedo"), kColorNames, "color");
  return p;
}

}  // namespace

bool is_rear_view(const CameraPose& pose) {
  float phi = std::fmod(pose.phi_deg, 360.0f);
  if (phi < 0) phi += 360.0f;
  return phi > 90.0f && phi < 270.0f;
}

std::vector<int> Dataset::train_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (!scenes[i].test) idx.push_back(static_cast<int>(i));
  return idx;
}

std::vector<int> Dataset::test_indices() const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    if (scenes[i].test) idx.push_back(static_cast<int>(i));
  return idx;
}

void build_dataset(const DatasetConfig& config) {
  fs::path dir(config.out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir) && !config.force)
    throw std::runtime_error("build_dataset: output dir '" + config.out_dir +
                             "' is not empty (use --force to overwrite)");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");

  int n_test = static_cast<int>(std::ceil(config.scenes * config.test_fraction));
  int first_test = config.scenes - n_test;

  ordered_json manifest = ordered_json::array();
  for (int i = 0; i < config.scenes; ++i) {
    SeededRng scene_rng = SeededRng(config.seed, RngStream::SceneSampling).fork(i);
    SeededRng view_rng = SeededRng(config.seed, RngStream::ViewSampling).fork(i);
    SceneSpec spec = sample_scene(scene_rng);

    ordered_json entry;
    entry["scene_id"] = i;
    entry["seed"] = config.seed;
    entry["primitives"] = ordered_json::array();
    for (const auto& p : spec.primitives) entry["primitives"].push_back(primitive_json(p));
    entry["marker_color"] = kColorNames[spec.marker.color];
    entry["views"] = ordered_json::array();

    for (int v = 0; v < config.views_per_scene; ++v) {
      CameraPose pose = sample_pose(view_rng);
      char name[64];
      std::snprintf(name, sizeof(name), "scene%05d_view%02d", i, v);
      std::string img_file = std::string("images/") + name + ".ppm";
      RenderOutput render = render_view_full(spec, pose, config.resolution);
      write_ppm((dir / img_file).string(), render.image);
      if (is_rear_view(pose))
        write_pgm((dir / "masks" / (std::string(name) + ".pgm")).string(),
                  render.marker_mask, config.resolution);
      entry["views"].push_back(ordered_json{{"file", img_file},
                                            {"theta_deg", pose.theta_deg},
                                            {"phi_deg", pose.phi_deg},
                                            {"radius", pose.radius}});
    }
    entry["caption_coarse"] =
        join_tokens(make_caption(spec, Granularity::Coarse).tokens);
    entry["caption_fine"] = join_tokens(make_caption(spec, Granularity::Fine).tokens);
    entry["split"] = (i >= first_test) ? "test" : "train";
    manifest.push_back(std::move(entry));
  }

  ordered_json root;
  root["resolution"] = config.resolution;
  root["seed"] = config.seed;
  root["views_per_scene"] = config.views_per_scene;
  root["scenes"] = std::move(manifest);
  std::ofstream f(dir / "manifest.json");
  f << root.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw std::runtime_error("load_dataset: no manifest.json in " + dir);
  ordered_json root = ordered_json::parse(f);
  Dataset ds;
  ds.resolution = root.at("resolution");
  ds.seed = root.at("seed");
  for (const auto& entry : root.at("scenes")) {
    DatasetScene scene;
    scene.scene_id = entry.at("scene_id");
    scene.seed = entry.at("seed");
    for (const auto& pj : entry.at("primitives"))
      scene.spec.primitives.push_back(primitive_from_json(pj));
    scene.spec.marker.color =
        name_index(entry.at("marker_color"), kColorNames, "color");
    scene.spec.seed = scene.seed;
    scene.caption_coarse = entry.at("caption_coarse");
    scene.caption_fine = entry.at("caption_fine");
    scene.test = entry.at("split") == "test";
    for (const auto& vj : entry.at("views")) {
      DatasetView view;
      view.file = vj.at("file");
      view.pose = {vj.at("theta_deg"), vj.at("phi_deg"), vj.at("radius")};
      view.image = read_ppm((fs::path(dir) / view.file).string());
      scene.views.push_back(std::move(view));
    }
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace nvsd
