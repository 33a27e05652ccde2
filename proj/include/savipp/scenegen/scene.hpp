#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "savipp/common.hpp"
#include "savipp/rng.hpp"
#include "savipp/scenegen/vec3.hpp"

namespace savipp::scenegen {

// Scene regimes mirror the MOVi-C/D/E complexity ladder: moving objects with
// a static camera, mixed static/dynamic objects, and a moving camera.
enum class Regime { kStaticCameraMovingObjects, kMixedStaticObjects, kMovingCamera };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

enum class ShapeKind { kSphere, kBox };

struct ObjectSpec {
  ShapeKind kind = ShapeKind::kSphere;
  double radius = 0.5;                      // sphere
  Vec3 half_extents{0.4, 0.4, 0.4};         // box
  std::array<double, 3> albedo{0.8, 0.2, 0.2};
  Vec3 pose0{};
  Vec3 velocity{};                          // world units per frame
  int id = 1;                               // 0 is reserved for background

  Vec3 position(int t) const { return pose0 + velocity * static_cast<double>(t); }
  double bounding_radius() const;
};

struct CameraPath {
  double focal = 55.0;  // pixels
  double cx = 32.0, cy = 32.0;
  Vec3 pos0{};
  Vec3 velocity{};      // world units per frame (zero for a static camera)
  Vec3 look_at{};

  Vec3 position(int t) const { return pos0 + velocity * static_cast<double>(t); }
  // Orthonormal look-at basis; image x maps to `right`, image y to `down`.
  void basis(int t, Vec3* right, Vec3* down, Vec3* forward) const;
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;
  CameraPath camera;
  int frames = 8;
  int height = 64;
  int width = 64;
  Regime regime = Regime::kStaticCameraMovingObjects;

  // Enforces T >= 2, positive extents, unique ids, and that the camera never
  // intersects an object on any frame.
  void validate() const;
};

struct SparsePoint {
  std::uint32_t frame = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  float dist = 0.0f;
};

struct NoiseSpec {
  double sigma = 0.0;  // world units
  std::uint64_t seed = 0;
};

struct VideoSample {
  int frames = 0, height = 0, width = 0, box_slots = 0;
  std::vector<float> rgb;          // T*H*W*3 in [0,1]
  std::vector<float> depth;        // T*H*W, Euclidean pixel-to-camera distance
  std::vector<float> flow;         // T*H*W*2 as (dx, dy) pixels/frame
  std::vector<std::int32_t> masks; // T*H*W instance ids, 0 = background
  std::vector<float> boxes;        // T*K*4 normalized [ymin,xmin,ymax,xmax]
  std::vector<SparsePoint> sparse; // image-space sparse depth samples
  bool last_frame_flow_zero = true;

  std::size_t pixel_index(int t, int r, int c) const {
    return (static_cast<std::size_t>(t) * height + r) * width + c;
  }
};

// Samples a random scene for the given regime. Deterministic in rng state.
SceneSpec make_scene(Rng& rng, Regime regime, int height, int width, int frames,
                     int max_objects);

}  // namespace savipp::scenegen
