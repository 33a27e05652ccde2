#pragma once

#include <cstdint>
#include <vector>

#include "savipp/common.hpp"
#include "savipp/rng.hpp"
#include "savipp/scenegen/scene.hpp"

namespace savipp::augment {

// One crop per video, applied to every frame and every modality.
struct CropParams {
  int y0 = 0, x0 = 0;
  int h = 0, w = 0;
  int out_h = 0, out_w = 0;

  bool is_identity() const { return y0 == 0 && x0 == 0 && h == out_h && w == out_w; }
};

CropParams identity_crop(int height, int width);

// Rejection-samples area fraction in [min_cover, 1] and aspect in
// [aspect_lo, aspect_hi]; falls back to the full frame after 64 attempts.
CropParams sample_crop(Rng& rng, int height, int width, double min_cover,
                       double aspect_lo = 0.75, double aspect_hi = 1.33);

// Crop + bilinear resize for any channel count; frames handled independently
// with the same parameters.
std::vector<float> apply_to_video(const std::vector<float>& data, int frames, int height,
                                  int width, int channels, const CropParams& crop);

// Bilinear resize, then components rescaled by (out_w/w, out_h/h).
std::vector<float> apply_to_flow(const std::vector<float>& flow, int frames, int height,
                                 int width, const CropParams& crop);

// Depth is bilinear; label masks are nearest-neighbor.
void apply_to_depth(const std::vector<float>& depth,
                    const std::vector<std::int32_t>& masks, int frames, int height,
                    int width, const CropParams& crop, std::vector<float>* depth_out,
                    std::vector<std::int32_t>* masks_out);

// Affine map on point coordinates; points leaving the frame are discarded,
// distances are untouched.
std::vector<scenegen::SparsePoint> apply_to_sparse(
    const std::vector<scenegen::SparsePoint>& points, const CropParams& crop);

// Affine map + clip to [0,1]; fully clipped boxes become [0,0,0,0].
std::vector<float> apply_to_bboxes(const std::vector<float>& boxes, int frames,
                                   int box_slots, int height, int width,
                                   const CropParams& crop);

// Whole-sample convenience wrapper.
scenegen::VideoSample apply_to_sample(const scenegen::VideoSample& sample,
                                      const CropParams& crop);

}  // namespace savipp::augment
