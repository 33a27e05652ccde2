#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "savipp/rng.hpp"
#include "savipp/scenegen/scene.hpp"

namespace savipp::scenegen {

struct Hit {
  int id = 0;          // object id; 0 for the ground plane
  double dist = 0.0;   // Euclidean distance from the camera
  Vec3 point{};
  Vec3 normal{};
};

// Nearest intersection of the pixel ray at frame t. Every ray is guaranteed a
// hit (scenes keep the ground plane inside the frustum); degenerate camera
// intrinsics raise ParameterError.
Hit cast_ray(const SceneSpec& scene, int t, int row, int col);

// Per-pixel ray cast against all objects plus the ground plane. rgb is H*W*3,
// depth H*W, masks H*W.
void render_frame(const SceneSpec& scene, int t, std::vector<float>* rgb,
                  std::vector<float>* depth, std::vector<std::int32_t>* masks);

// Ground-truth forward flow t -> t+1, channels (dx, dy) in pixels.
void compute_flow(const SceneSpec& scene, int t, std::vector<float>* flow);

enum class SparsePattern { kScanlines };

// LiDAR-style scanline subsample of a dense depth map. Exactly
// round(density*H*W) points, deterministic given the rng state.
std::vector<SparsePoint> sample_sparse_depth(const std::vector<float>& depth,
                                             const std::vector<std::int32_t>& masks,
                                             int height, int width, double density,
                                             SparsePattern pattern, Rng& rng);

// Additive Gaussian noise on the stored distances, clamped to stay positive.
std::vector<SparsePoint> add_depth_noise(std::vector<SparsePoint> points,
                                         const NoiseSpec& spec);

// Tight normalized boxes per object id (rows 0..K-1 map to ids 1..K);
// [0,0,0,0] when the id is absent in that frame.
std::vector<float> extract_bboxes(const std::vector<std::int32_t>& masks, int frames,
                                  int height, int width, int box_slots);

// Renders every frame of the scene plus flow, boxes and sparse depth.
VideoSample render_video(const SceneSpec& scene, int box_slots, double sparse_density,
                         double noise_sigma, Rng& rng);

}  // namespace savipp::scenegen
