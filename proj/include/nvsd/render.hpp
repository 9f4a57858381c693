#pragma once

#include <cstdint>
#include <vector>

#include "nvsd/scene.hpp"

namespace nvsd {

// CHW fp32 image in [0,1], square.
struct Image {
  int res = 0;
  std::vector<float> chw;  // 3 * res * res

  static Image white(int res) {
    Image im;
    im.res = res;
    im.chw.assign(static_cast<std::size_t>(3) * res * res, 1.0f);
    return im;
  }
  float& at(int c, int y, int x) {
    return chw[(static_cast<std::size_t>(c) * res + y) * res + x];
  }
  float at(int c, int y, int x) const {
    return chw[(static_cast<std::size_t>(c) * res + y) * res + x];
  }
};

struct RenderOutput {
  Image image;
  std::vector<std::uint8_t> marker_mask;  // res*res, 255 where the marker face is hit
};

// (cos, sin) of an azimuth given in degrees, with exact quadrant reduction:
// shifting phi by a multiple of 90 degrees permutes/negates the pair bit
// exactly. All camera math goes through this so scene rotations by quarter
// turns commute with azimuth shifts pixel-exactly.
void azimuth_trig(float phi_deg, float& cos_phi, float& sin_phi);

// Raycast with Lambertian shading, directional light fixed in the camera
// frame, white background. res must be 32 or 64.
RenderOutput render_view_full(const SceneSpec& scene, const CameraPose& pose,
                              int res, bool shaded = true);

inline Image render_view(const SceneSpec& scene, const CameraPose& pose, int res) {
  return render_view_full(scene, pose, res).image;
}

}  // namespace nvsd
