#include "nvsd/scene.hpp"

#include <algorithm>
#include <cmath>

namespace nvsd {

const std::array<const char*, 4> kPrimitiveNames = {"sphere", "box", "cone",
                                                    "cylinder"};
const std::array<const char*, 6> kColorNames = {"red",    "green",   "blue",
                                                "yellow", "magenta", "cyan"};
const std::array<Vec3, 6> kPalette = {{{1, 0, 0},
                                       {0, 1, 0},
                                       {0, 0, 1},
                                       {1, 1, 0},
                                       {1, 0, 1},
                                       {0, 1, 1}}};

namespace {

// Largest |coordinate| reach of a primitive from the origin, conservative
// (bounding sphere of the primitive).
float bounding_radius(const Primitive& p) {
  float cr = std::sqrt(p.center.x * p.center.x + p.center.y * p.center.y +
                       p.center.z * p.center.z);
  switch (p.kind) {
    case PrimitiveKind::Sphere:
      return cr + p.size[0];
    case PrimitiveKind::Box:
      return cr + std::sqrt(p.size[0] * p.size[0] + p.size[1] * p.size[1] +
                            p.size[2] * p.size[2]);
    case PrimitiveKind::Cone:
      return cr + std::max(p.size[0], p.size[1]) * 1.4143f;
    case PrimitiveKind::Cylinder:
      return cr + std::sqrt(p.size[0] * p.size[0] + p.size[1] * p.size[1]);
  }
  return cr;
}

float half_height(const Primitive& p) {
  switch (p.kind) {
    case PrimitiveKind::Sphere:
      return p.size[0];
    case PrimitiveKind::Box:
      return p.size[2];
    case PrimitiveKind::Cone:
      return p.size[1] * 0.5f;
    case PrimitiveKind::Cylinder:
      return p.size[1];
  }
  return 0;
}

Primitive sample_primitive(SeededRng& rng) {
  Primitive p;
  p.kind = static_cast<PrimitiveKind>(rng.next_below(4));
  p.albedo = static_cast<int>(rng.next_below(6));
  switch (p.kind) {
    case PrimitiveKind::Sphere:
      p.size = {rng.uniform(0.18f, 0.32f), 0, 0};
      break;
    case PrimitiveKind::Box:
      p.size = {rng.uniform(0.16f, 0.3f), rng.uniform(0.16f, 0.3f),
                rng.uniform(0.16f, 0.3f)};
      break;
    case PrimitiveKind::Cone:
      p.size = {rng.uniform(0.18f, 0.3f), rng.uniform(0.3f, 0.5f), 0};
      break;
    case PrimitiveKind::Cylinder:
      p.size = {rng.uniform(0.15f, 0.26f), rng.uniform(0.16f, 0.3f), 0};
      break;
  }
  return p;
}

}  // namespace

SceneSpec sample_scene(SeededRng& rng) {
  SceneSpec scene;
  scene.seed = rng.seed();
  int n = 1 + static_cast<int>(rng.next_below(3));
  for (int i = 0; i < n; ++i) scene.primitives.push_back(sample_primitive(rng));
  scene.marker.color = static_cast<int>(rng.next_below(6));
  scene.marker.facing = 2;

  // Layout: primitive 0 sits at the origin, 1 stacks on top, 2 sits beside
  // along +y. Nothing is ever placed behind primitive 0, so the rear marker
  // plate stays unoccluded.
  auto& prims = scene.primitives;
  prims[0].center = {0, 0, 0};
  if (n >= 2) {
    prims[1].center = {0, 0, half_height(prims[0]) + half_height(prims[1])};
  }
  if (n >= 3) {
    float lateral0 = prims[0].kind == PrimitiveKind::Box ? prims[0].size[1]
                                                         : prims[0].size[0];
    float lateral2 = prims[2].kind == PrimitiveKind::Box ? prims[2].size[1]
                                                         : prims[2].size[0];
    prims[2].center = {0, lateral0 + lateral2 + 0.05f, 0};
  }

  // Rescale so everything fits inside a 0.8-radius ball (comfortably inside
  // the unit ball and inside every camera frustum).
  float reach = 0.0f;
  for (const auto& p : prims) reach = std::max(reach, bounding_radius(p));
  if (reach > 0.8f) {
    float s = 0.8f / reach;
    for (auto& p : prims) {
      p.center.x *= s;
      p.center.y *= s;
      p.center.z *= s;
      for (auto& v : p.size) v *= s;
    }
  }
  return scene;
}

CameraPose sample_pose(SeededRng& rng) {
  CameraPose pose;
  pose.theta_deg = rng.uniform(20.0f, 160.0f);
  pose.phi_deg = rng.uniform(0.0f, 360.0f);
  pose.radius = rng.uniform(1.5f, 2.2f);
  return pose;
}

Caption make_caption(const SceneSpec& scene, Granularity granularity) {
  Caption cap;
  cap.granularity = granularity;
  auto describe = [&](const Primitive& p) {
    cap.tokens.push_back("a");
    cap.tokens.push_back(kColorNames[p.albedo]);
    cap.tokens.push_back(kPrimitiveNames[static_cast<int>(p.kind)]);
  };
  const auto& prims = scene.primitives;
  if (prims.size() >= 2) {
    describe(prims[1]);
    cap.tokens.push_back("on");
    describe(prims[0]);
  } else {
    describe(prims[0]);
  }
  if (prims.size() >= 3) {
    cap.tokens.push_back("beside");
    describe(prims[2]);
  }
  if (granularity == Granularity::Fine) {
    for (const char* w : {"with", "a"}) cap.tokens.push_back(w);
    cap.tokens.push_back(kColorNames[scene.marker.color]);
    for (const char* w : {"marker", "on", "the", "back"}) cap.tokens.push_back(w);
  }
  return cap;
}

std::vector<std::string> caption_vocabulary() {
  std::vector<std::string> v = {"a", "on", "beside", "with", "marker", "the", "back"};
  for (const char* c : kColorNames) v.push_back(c);
  for (const char* k : kPrimitiveNames) v.push_back(k);
  return v;
}

RelativePose relative_pose(const CameraPose& src, const CameraPose& tgt) {
  const float deg = 0.017453292519943295f;
  RelativePose rp;
  rp.dtheta = (tgt.theta_deg - src.theta_deg) * deg;
  float dphi = tgt.phi_deg - src.phi_deg;
  // Wrap to (-180, 180]; sin/cos make the exact branch irrelevant downstream.
  while (dphi > 180.0f) dphi -= 360.0f;
  while (dphi <= -180.0f) dphi += 360.0f;
  rp.sin_dphi = std::sin(dphi * deg);
  rp.cos_dphi = std::cos(dphi * deg);
  rp.dr = tgt.radius - src.radius;
  return rp;
}

SceneSpec rotate_scene_quarter_turns(const SceneSpec& scene, int k) {
  SceneSpec out = scene;
  k = ((k % 4) + 4) % 4;
  for (auto& p : out.primitives) {
    for (int i = 0; i < k; ++i) {
      float x = p.center.x, y = p.center.y;
      p.center.x = -y;
      p.center.y = x;
      if (p.kind == PrimitiveKind::Box) std::swap(p.size[0], p.size[1]);
    }
  }
  out.marker.facing = (scene.marker.facing + k) % 4;
  return out;
}

}  // namespace nvsd
