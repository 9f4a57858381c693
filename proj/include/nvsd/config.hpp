#pragma once

#include <string>

#include "nvsd/dataset.hpp"
#include "nvsd/diffusion.hpp"
#include "nvsd/model.hpp"

namespace nvsd {

// Everything a run needs, one section per concern. Every field has a
// default except the seed.
struct RunConfig {
  std::uint64_t seed = 0;

  DatasetConfig data;      // data.*  (out_dir comes from the CLI)
  DenoiserConfig model;    // model.*
  TrainConfig train;       // train.*

  int schedule_steps = 1000;  // diffusion.*
  float beta_start = 1e-4f;
  float beta_end = 0.02f;

  int sample_steps = 50;  // sample.*
  float alpha = 1.0f;
  float beta = 1.0f;

  int eval_targets_per_scene = 2;  // eval.*
  int probe_scenes = 50;

  int expert_boundary = 800;  // experts.*
  long expert_steps_high = 0; // 0 -> total_steps / 5 (keeps the 1:4 split)

  int invert_steps = 500;  // invert.*
  float invert_lr = 1e-2f;
};

// Parses UTF-8 JSON. Unknown keys are rejected with the nearest valid key
// suggested; bad enum values likewise ("dense-xattn" -> "dense_xattn");
// a missing seed is an error. Throws std::invalid_argument.
RunConfig parse_config(const std::string& json_text);

RunConfig parse_config_file(const std::string& path);

// Canonical serialization (fixed key order, every field present), so two
// semantically equal files fingerprint identically.
std::string canonical_json(const RunConfig& cfg);

// Hex digest of the canonical form.
std::string config_fingerprint(const RunConfig& cfg);

// NVSD_THREADS, clamped to >= 1; the upper bound on any module parallelism.
int thread_cap();

}  // namespace nvsd
