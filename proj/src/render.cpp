#include "nvsd/render.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nvsd {

namespace {

constexpr float kPi = 3.14159265358979323846f;
constexpr float kDeg = kPi / 180.0f;
constexpr float kInf = std::numeric_limits<float>::infinity();
constexpr float kVerticalFovDeg = 70.0f;
constexpr float kAmbient = 0.25f;
constexpr float kPlateThickness = 0.02f;

struct V3 {
  float x, y, z;
};
inline V3 operator+(V3 a, V3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline V3 operator-(V3 a, V3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline V3 operator*(float s, V3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline float dot(V3 a, V3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline V3 normalize(V3 a) {
  float inv = 1.0f / std::sqrt(dot(a, a));
  return {a.x * inv, a.y * inv, a.z * inv};
}

struct Hit {
  float t = kInf;
  V3 normal{};
  Vec3 albedo{};
  bool marker = false;
};

struct Ray {
  V3 o, d;
};

// Axis-aligned box slab test; returns entry t and the entering face
// (axis 0..2, sign -1/+1 of the outward normal). NaN-free by construction.
bool hit_aabb(const Ray& r, V3 lo, V3 hi, float& t_out, int& axis, int& sign) {
  float tmin = -kInf, tmax = kInf;
  int ax = -1, sg = 0;
  const float o[3] = {r.o.x, r.o.y, r.o.z};
  const float d[3] = {r.d.x, r.d.y, r.d.z};
  const float l[3] = {lo.x, lo.y, lo.z};
  const float h[3] = {hi.x, hi.y, hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::fabs(d[a]) < 1e-12f) {
      if (o[a] < l[a] || o[a] > h[a]) return false;
      continue;
    }
    float inv = 1.0f / d[a];
    float t0 = (l[a] - o[a]) * inv;
    float t1 = (h[a] - o[a]) * inv;
    int s = -1;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1;
    }
    if (t0 > tmin) {
      tmin = t0;
      ax = a;
      sg = s;
    }
    if (t1 < tmax) tmax = t1;
  }
  if (ax < 0 || tmin > tmax || tmin <= 1e-4f) return false;
  t_out = tmin;
  axis = ax;
  sign = sg;
  return true;
}

void consider(Hit& best, float t, V3 n, Vec3 albedo, bool marker) {
  if (t > 1e-4f && t < best.t) {
    best.t = t;
    best.normal = n;
    best.albedo = albedo;
    best.marker = marker;
  }
}

void intersect_primitive(const Ray& r, const Primitive& p, Hit& best) {
  V3 c{p.center.x, p.center.y, p.center.z};
  Vec3 alb = kPalette[p.albedo];
  switch (p.kind) {
    case PrimitiveKind::Sphere: {
      float R = p.size[0];
      V3 oc = r.o - c;
      float b = dot(oc, r.d);
      float q = dot(oc, oc) - R * R;
      float disc = b * b - q;
      if (disc < 0) return;
      float s = std::sqrt(disc);
      float t = -b - s;
      if (t <= 1e-4f) t = -b + s;
      if (t <= 1e-4f) return;
      V3 hp = r.o + t * r.d;
      consider(best, t, {(hp.x - c.x) / R, (hp.y - c.y) / R, (hp.z - c.z) / R},
               alb, false);
      return;
    }
    case PrimitiveKind::Box: {
      V3 lo = c - V3{p.size[0], p.size[1], p.size[2]};
      V3 hi = c + V3{p.size[0], p.size[1], p.size[2]};
      float t;
      int axis, sign;
      if (!hit_aabb(r, lo, hi, t, axis, sign)) return;
      V3 n{0, 0, 0};
      (axis == 0 ? n.x : axis == 1 ? n.y : n.z) = static_cast<float>(sign);
      consider(best, t, n, alb, false);
      return;
    }
    case PrimitiveKind::Cylinder: {
      float R = p.size[0], hh = p.size[1];
      float ox = r.o.x - c.x, oy = r.o.y - c.y;
      float a = r.d.x * r.d.x + r.d.y * r.d.y;
      float b = ox * r.d.x + oy * r.d.y;
      float q = ox * ox + oy * oy - R * R;
      if (a > 1e-12f) {
        float disc = b * b - a * q;
        if (disc >= 0) {
          float s = std::sqrt(disc);
          for (float t : {(-b - s) / a, (-b + s) / a}) {
            if (t <= 1e-4f) continue;
            float z = r.o.z + t * r.d.z;
            if (z < c.z - hh || z > c.z + hh) continue;
            V3 hp = r.o + t * r.d;
            consider(best, t, {(hp.x - c.x) / R, (hp.y - c.y) / R, 0}, alb, false);
            break;
          }
        }
      }
      if (std::fabs(r.d.z) > 1e-12f) {
        for (int side = -1; side <= 1; side += 2) {
          float zc = c.z + side * hh;
          float t = (zc - r.o.z) / r.d.z;
          if (t <= 1e-4f) continue;
          float hx = r.o.x + t * r.d.x - c.x;
          float hy = r.o.y + t * r.d.y - c.y;
          if (hx * hx + hy * hy <= R * R)
            consider(best, t, {0, 0, static_cast<float>(side)}, alb, false);
        }
      }
      return;
    }
    case PrimitiveKind::Cone: {
      float R = p.size[0], H = p.size[1];
      float base_z = c.z - 0.5f * H;
      float apex_z = c.z + 0.5f * H;
      float k = R / H;
      float ox = r.o.x - c.x, oy = r.o.y - c.y;
      float w = apex_z - r.o.z;
      float a = r.d.x * r.d.x + r.d.y * r.d.y - k * k * r.d.z * r.d.z;
      float b = ox * r.d.x + oy * r.d.y + k * k * w * r.d.z;
      float q = ox * ox + oy * oy - k * k * w * w;
      if (std::fabs(a) > 1e-12f) {
        float disc = b * b - a * q;
        if (disc >= 0) {
          float s = std::sqrt(disc);
          for (float t : {(-b - s) / a, (-b + s) / a}) {
            if (t <= 1e-4f) continue;
            float z = r.o.z + t * r.d.z;
            if (z < base_z || z > apex_z) continue;
            float hx = r.o.x + t * r.d.x - c.x;
            float hy = r.o.y + t * r.d.y - c.y;
            consider(best, t, normalize({hx, hy, k * k * (apex_z - z)}), alb, false);
            break;
          }
        }
      }
      if (std::fabs(r.d.z) > 1e-12f) {
        float t = (base_z - r.o.z) / r.d.z;
        if (t > 1e-4f) {
          float hx = r.o.x + t * r.d.x - c.x;
          float hy = r.o.y + t * r.d.y - c.y;
          if (hx * hx + hy * hy <= R * R)
            consider(best, t, {0, 0, -1}, alb, false);
        }
      }
      return;
    }
  }
}

// Rear extent (along the marker facing axis) and plate half-sides.
void marker_plate(const SceneSpec& scene, V3& lo, V3& hi, int& axis, int& sign) {
  const Primitive& p = scene.primitives[0];
  float extent;
  switch (p.kind) {
    case PrimitiveKind::Sphere:
    case PrimitiveKind::Cone:
    case PrimitiveKind::Cylinder:
      extent = p.size[0];
      break;
    case PrimitiveKind::Box:
      extent = (scene.marker.facing % 2 == 0) ? p.size[0] : p.size[1];
      break;
  }
  float side;
  switch (p.kind) {
    case PrimitiveKind::Sphere:
      side = 0.65f * p.size[0];
      break;
    case PrimitiveKind::Box:
      side = 0.65f * std::min((scene.marker.facing % 2 == 0) ? p.size[1] : p.size[0],
                              p.size[2]);
      break;
    case PrimitiveKind::Cone:
      side = 0.65f * std::min(p.size[0], 0.5f * p.size[1]);
      break;
    case PrimitiveKind::Cylinder:
      side = 0.65f * std::min(p.size[0], p.size[1]);
      break;
  }
  axis = (scene.marker.facing % 2 == 0) ? 0 : 1;
  sign = (scene.marker.facing == 0 || scene.marker.facing == 1) ? 1 : -1;
  V3 c{p.center.x, p.center.y, p.center.z};
  float off = extent + 0.5f * kPlateThickness;
  V3 center = c;
  (axis == 0 ? center.x : center.y) += sign * off;
  V3 half{side, side, side};
  (axis == 0 ? half.x : half.y) = 0.5f * kPlateThickness;
  lo = center - half;
  hi = center + half;
}

Hit trace(const Ray& ray, const SceneSpec& scene) {
  Hit best;
  for (const auto& p : scene.primitives) intersect_primitive(ray, p, best);
  V3 lo, hi;
  int paxis, psign;
  marker_plate(scene, lo, hi, paxis, psign);
  float t;
  int axis, sign;
  if (hit_aabb(ray, lo, hi, t, axis, sign)) {
    bool marker_face = (axis == paxis && sign == psign);
    V3 n{0, 0, 0};
    (axis == 0 ? n.x : axis == 1 ? n.y : n.z) = static_cast<float>(sign);
    Vec3 alb = marker_face ? kPalette[scene.marker.color]
                           : kPalette[scene.primitives[0].albedo];
    consider(best, t, n, alb, marker_face);
  }
  return best;
}

}  // namespace

void azimuth_trig(float phi_deg, float& cos_phi, float& sin_phi) {
  // Reduce to [0, 360), then peel exact quadrants.
  float phi = std::fmod(phi_deg, 360.0f);
  if (phi < 0) phi += 360.0f;
  int quad = static_cast<int>(phi / 90.0f);
  if (quad > 3) quad = 3;
  float rem = phi - 90.0f * quad;
  float c = std::cos(rem * kDeg);
  float s = std::sin(rem * kDeg);
  switch (quad) {
    case 0: cos_phi = c;  sin_phi = s;  break;
    case 1: cos_phi = -s; sin_phi = c;  break;
    case 2: cos_phi = -c; sin_phi = -s; break;
    default: cos_phi = s; sin_phi = -c; break;
  }
}

RenderOutput render_view_full(const SceneSpec& scene, const CameraPose& pose,
                              int res, bool shaded) {
  if (res != 32 && res != 64)
    throw std::invalid_argument("render_view: res must be 32 or 64");

  float cphi, sphi;
  azimuth_trig(pose.phi_deg, cphi, sphi);
  float ct = std::cos(pose.theta_deg * kDeg);
  float st = std::sin(pose.theta_deg * kDeg);

  V3 unit{st * cphi, st * sphi, ct};
  V3 cam = pose.radius * unit;
  V3 fwd{-unit.x, -unit.y, -unit.z};
  V3 right = normalize({fwd.y, -fwd.x, 0.0f});
  V3 up{right.y * fwd.z - right.z * fwd.y, right.z * fwd.x - right.x * fwd.z,
        right.x * fwd.y - right.y * fwd.x};
  V3 light = normalize(0.4f * right + (-0.5f) * up + 1.2f * fwd);

  float tan_half = std::tan(0.5f * kVerticalFovDeg * kDeg);

  RenderOutput out;
  out.image = Image::white(res);
  out.marker_mask.assign(static_cast<std::size_t>(res) * res, 0);

  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      float sx = (2.0f * (x + 0.5f) / res - 1.0f) * tan_half;
      float sy = (1.0f - 2.0f * (y + 0.5f) / res) * tan_half;
      V3 dir = normalize(fwd + sx * right + sy * up);
      Hit hit = trace({cam, dir}, scene);
      if (hit.t == kInf) continue;
      float lambert = shaded ? std::max(0.0f, -dot(hit.normal, light)) : 0.0f;
      float lum = shaded ? kAmbient + (1.0f - kAmbient) * lambert : 1.0f;
      out.image.at(0, y, x) = hit.albedo.x * lum;
      out.image.at(1, y, x) = hit.albedo.y * lum;
      out.image.at(2, y, x) = hit.albedo.z * lum;
      if (hit.marker) out.marker_mask[static_cast<std::size_t>(y) * res + x] = 255;
    }
  }
  return out;
}

}  // namespace nvsd
