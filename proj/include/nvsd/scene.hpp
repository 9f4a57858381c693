#pragma once

#include <array>
#include <string>
#include <vector>

#include "nvsd/rng.hpp"

namespace nvsd {

struct Vec3 {
  float x = 0, y = 0, z = 0;
};

enum class PrimitiveKind { Sphere, Box, Cone, Cylinder };

extern const std::array<const char*, 4> kPrimitiveNames;

// The six named colors; used for both primitive albedos and the hidden
// marker. Min pairwise RGB distance is 1.0.
extern const std::array<const char*, 6> kColorNames;
extern const std::array<Vec3, 6> kPalette;

struct Primitive {
  PrimitiveKind kind;
  Vec3 center;                 // object frame
  std::array<float, 3> size;   // sphere: {r,-,-}; box: half extents;
                               // cone: {base r, height,-}; cylinder: {r, half h,-}
  int albedo;                  // palette index
};

// Thin plate flush against the rear extent of primitive 0. Only its
// outward (rear) face carries the marker color, so the marker is visible
// exactly from azimuths in (90, 270) relative to the canonical front (+x).
// `facing` is a quadrant index: 0:+x 1:+y 2:-x 3:-y; canonical scenes use 2.
struct HiddenMarker {
  int color;    // palette index
  int facing = 2;
};

struct SceneSpec {
  std::vector<Primitive> primitives;  // 1..3, all inside the unit ball
  HiddenMarker marker;
  std::uint64_t seed = 0;
};

struct CameraPose {
  float theta_deg;   // polar, [20, 160]
  float phi_deg;     // azimuth, [0, 360)
  float radius;      // [1.5, 2.2]
};

// The 4-vector pose parametrization (dtheta, sin dphi, cos dphi, dr).
struct RelativePose {
  float dtheta;      // radians
  float sin_dphi;
  float cos_dphi;
  float dr;
};

enum class Granularity { Coarse, Fine };

struct Caption {
  std::vector<std::string> tokens;
  Granularity granularity;
};

// Uniform over the scene grammar; deterministic per rng state.
SceneSpec sample_scene(SeededRng& rng);

CameraPose sample_pose(SeededRng& rng);

// Templated text; fine always names the marker color, coarse never does.
Caption make_caption(const SceneSpec& scene, Granularity granularity);

// Every word the caption grammar can emit, marker colors included.
std::vector<std::string> caption_vocabulary();

RelativePose relative_pose(const CameraPose& src, const CameraPose& tgt);

// Rotate a scene by k * 90 degrees about the vertical axis, exactly.
SceneSpec rotate_scene_quarter_turns(const SceneSpec& scene, int k);

}  // namespace nvsd
