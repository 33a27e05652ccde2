#include "savipp/scenegen/scene.hpp"

#include <cmath>

namespace savipp::scenegen {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kStaticCameraMovingObjects: return "c";
    case Regime::kMixedStaticObjects: return "d";
    case Regime::kMovingCamera: return "e";
  }
  return "c";
}

Regime regime_from_name(const std::string& name) {
  if (name == "c") return Regime::kStaticCameraMovingObjects;
  if (name == "d") return Regime::kMixedStaticObjects;
  if (name == "e") return Regime::kMovingCamera;
  throw ParameterError("unknown regime '" + name + "' (expected c, d or e)");
}

double ObjectSpec::bounding_radius() const {
  if (kind == ShapeKind::kSphere) return radius;
  return norm(half_extents);
}

void CameraPath::basis(int t, Vec3* right, Vec3* down, Vec3* forward) const {
  const Vec3 fwd = normalized(look_at - position(t));
  const Vec3 up{0, 0, 1};
  Vec3 r = cross(fwd, up);
  const double rn = norm(r);
  if (rn < 1e-9) throw ParameterError("camera looks straight along the up axis");
  r = r * (1.0 / rn);
  *right = r;
  *down = cross(fwd, r);
  *forward = fwd;
}

void SceneSpec::validate() const {
  if (frames < 2) throw ParameterError("scene needs at least 2 frames");
  if (height < 1 || width < 1) throw ParameterError("non-positive resolution");
  if (camera.focal <= 0) throw ParameterError("camera focal length must be positive");
  std::vector<int> seen;
  for (const auto& o : objects) {
    if (o.id <= 0) throw DataError("object id must be positive (0 is background)");
    for (int s : seen)
      if (s == o.id) throw DataError("duplicate object id " + std::to_string(o.id));
    seen.push_back(o.id);
    if (o.kind == ShapeKind::kSphere) {
      if (o.radius <= 0) throw DataError("sphere radius must be positive");
    } else if (o.half_extents.x <= 0 || o.half_extents.y <= 0 || o.half_extents.z <= 0) {
      throw DataError("box extents must be positive");
    }
  }
  for (int t = 0; t < frames; ++t) {
    const Vec3 cam = camera.position(t);
    for (const auto& o : objects) {
      const double margin = o.bounding_radius() + 0.25;
      if (norm(cam - o.position(t)) <= margin)
        throw DataError("camera intersects object " + std::to_string(o.id) +
                        " at frame " + std::to_string(t));
    }
  }
}

namespace {

// All four corner rays must keep descending toward the ground plane across
// every frame, so each pixel ray is guaranteed a hit.
bool frustum_hits_ground(const SceneSpec& scene) {
  const auto& cam = scene.camera;
  for (int t = 0; t < scene.frames; ++t) {
    Vec3 right, down, fwd;
    cam.basis(t, &right, &down, &fwd);
    for (const double rr : {0.5, scene.height - 0.5})
      for (const double cc : {0.5, scene.width - 0.5}) {
        const double xc = (cc - cam.cx) / cam.focal;
        const double yc = (rr - cam.cy) / cam.focal;
        const Vec3 dir = right * xc + down * yc + fwd;
        if (dir.z > -0.02) return false;
      }
  }
  return true;
}

std::array<double, 3> random_albedo(Rng& rng) {
  // Saturated-ish palette keeps objects distinguishable from the gray ground.
  const double h = rng.uniform(0.0, 6.0);
  const double v = rng.uniform(0.55, 0.95);
  const double s = rng.uniform(0.5, 0.9);
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), u = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, u, p};
    case 1: return {q, v, p};
    case 2: return {p, v, u};
    case 3: return {p, q, v};
    case 4: return {u, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

SceneSpec make_scene(Rng& rng, Regime regime, int height, int width, int frames,
                     int max_objects) {
  if (max_objects < 1) throw ParameterError("max_objects must be >= 1");
  SceneSpec scene;
  scene.regime = regime;
  scene.height = height;
  scene.width = width;
  scene.frames = frames;

  for (int attempt = 0; attempt < 256; ++attempt) {
    scene.objects.clear();
    const int count = static_cast<int>(rng.uniform_int(std::min(3, max_objects), max_objects));
    int dynamic_count = count;
    if (regime != Regime::kStaticCameraMovingObjects)
      dynamic_count = static_cast<int>(rng.uniform_int(1, std::min(2, count)));
    for (int i = 0; i < count; ++i) {
      ObjectSpec o;
      o.id = i + 1;
      o.kind = rng.uniform() < 0.5 ? ShapeKind::kSphere : ShapeKind::kBox;
      const double ang = rng.uniform(0.0, 6.283185307179586);
      const double rad = rng.uniform(0.3, 2.4);
      if (o.kind == ShapeKind::kSphere) {
        o.radius = rng.uniform(0.35, 0.8);
        o.pose0 = {rad * std::cos(ang), rad * std::sin(ang), o.radius};
      } else {
        o.half_extents = {rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7),
                          rng.uniform(0.3, 0.7)};
        o.pose0 = {rad * std::cos(ang), rad * std::sin(ang), o.half_extents.z};
      }
      o.albedo = random_albedo(rng);
      if (i < dynamic_count) {
        const double va = rng.uniform(0.0, 6.283185307179586);
        const double vm = rng.uniform(0.06, 0.18);
        o.velocity = {vm * std::cos(va), vm * std::sin(va), 0.0};
      }
      scene.objects.push_back(o);
    }

    CameraPath cam;
    cam.cx = width / 2.0;
    cam.cy = height / 2.0;
    cam.focal = 1.1 * std::max(height, width);
    const double cam_ang = rng.uniform(0.0, 6.283185307179586);
    const double cam_rad = rng.uniform(4.2, 5.5);
    cam.pos0 = {cam_rad * std::cos(cam_ang), cam_rad * std::sin(cam_ang),
                rng.uniform(7.0, 9.0)};
    cam.look_at = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 0.0};
    if (regime == Regime::kMovingCamera) {
      const double va = rng.uniform(0.0, 6.283185307179586);
      const double vm = rng.uniform(0.05, 0.12);
      cam.velocity = {vm * std::cos(va), vm * std::sin(va), rng.uniform(-0.02, 0.02)};
    }
    scene.camera = cam;

    if (!frustum_hits_ground(scene)) continue;
    try {
      scene.validate();
    } catch (const DataError&) {
      continue;
    }
    return scene;
  }
  throw ContractError("scene sampling failed to satisfy constraints after 256 attempts");
}

}  // namespace savipp::scenegen
