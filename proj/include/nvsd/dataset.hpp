#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvsd/render.hpp"
#include "nvsd/scene.hpp"

namespace nvsd {

struct DatasetConfig {
  int scenes = 500;
  int views_per_scene = 12;
  int resolution = 32;
  float test_fraction = 0.1f;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool force = false;
};

struct DatasetView {
  std::string file;
  CameraPose pose;
  Image image;  // empty until loaded
};

struct DatasetScene {
  int scene_id = 0;
  std::uint64_t seed = 0;
  SceneSpec spec;
  std::string caption_coarse;
  std::string caption_fine;
  bool test = false;
  std::vector<DatasetView> views;
};

struct Dataset {
  int resolution = 0;
  std::uint64_t seed = 0;
  std::vector<DatasetScene> scenes;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
};

// Renders scenes * views_per_scene PPMs plus rear-view marker masks and a
// manifest.json. Refuses an existing non-empty out_dir unless force is set.
void build_dataset(const DatasetConfig& config);

// Reads manifest + images back; masks are re-derivable from the SceneSpec.
Dataset load_dataset(const std::string& dir);

// True when the azimuth lies in the rear hemisphere (90, 270) where the
// hidden marker can be visible.
bool is_rear_view(const CameraPose& pose);

}  // namespace nvsd
