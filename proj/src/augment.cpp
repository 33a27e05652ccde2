#include "savipp/augment/augment.hpp"

#include <algorithm>
#include <cmath>

namespace savipp::augment {

namespace {

// Output pixel centers map to crop-local source coords with the half-pixel
// convention; scale 1 reproduces the input exactly.
inline double src_coord(int out_index, int out_extent, int crop_extent) {
  return (out_index + 0.5) * static_cast<double>(crop_extent) / out_extent - 0.5;
}

void bilinear_frame(const float* src, int H, int W, int C, const CropParams& crop,
                    float* dst) {
  for (int i = 0; i < crop.out_h; ++i) {
    double ly = std::clamp(src_coord(i, crop.out_h, crop.h), 0.0, crop.h - 1.0);
    const int y1 = static_cast<int>(ly);
    const int y2 = std::min(y1 + 1, crop.h - 1);
    const double fy = ly - y1;
    for (int j = 0; j < crop.out_w; ++j) {
      double lx = std::clamp(src_coord(j, crop.out_w, crop.w), 0.0, crop.w - 1.0);
      const int x1 = static_cast<int>(lx);
      const int x2 = std::min(x1 + 1, crop.w - 1);
      const double fx = lx - x1;
      const float* p11 = src + ((crop.y0 + y1) * static_cast<std::size_t>(W) + crop.x0 + x1) * C;
      const float* p12 = src + ((crop.y0 + y1) * static_cast<std::size_t>(W) + crop.x0 + x2) * C;
      const float* p21 = src + ((crop.y0 + y2) * static_cast<std::size_t>(W) + crop.x0 + x1) * C;
      const float* p22 = src + ((crop.y0 + y2) * static_cast<std::size_t>(W) + crop.x0 + x2) * C;
      float* out = dst + (static_cast<std::size_t>(i) * crop.out_w + j) * C;
      for (int c = 0; c < C; ++c) {
        const double top = p11[c] + (p12[c] - p11[c]) * fx;
        const double bot = p21[c] + (p22[c] - p21[c]) * fx;
        out[c] = static_cast<float>(top + (bot - top) * fy);
      }
    }
  }
}

void nearest_frame(const std::int32_t* src, int H, int W, const CropParams& crop,
                   std::int32_t* dst) {
  (void)H;
  for (int i = 0; i < crop.out_h; ++i) {
    const double ly = std::clamp(src_coord(i, crop.out_h, crop.h), 0.0, crop.h - 1.0);
    const int y = static_cast<int>(std::lround(ly));
    for (int j = 0; j < crop.out_w; ++j) {
      const double lx = std::clamp(src_coord(j, crop.out_w, crop.w), 0.0, crop.w - 1.0);
      const int x = static_cast<int>(std::lround(lx));
      dst[static_cast<std::size_t>(i) * crop.out_w + j] =
          src[(crop.y0 + y) * static_cast<std::size_t>(W) + crop.x0 + x];
    }
  }
}

void check_crop(const CropParams& crop, int height, int width) {
  if (crop.h < 1 || crop.w < 1 || crop.out_h < 1 || crop.out_w < 1 || crop.y0 < 0 ||
      crop.x0 < 0 || crop.y0 + crop.h > height || crop.x0 + crop.w > width)
    throw ParameterError("crop rectangle outside the frame");
}

}  // namespace

CropParams identity_crop(int height, int width) {
  return {0, 0, height, width, height, width};
}

CropParams sample_crop(Rng& rng, int height, int width, double min_cover,
                       double aspect_lo, double aspect_hi) {
  if (!(min_cover > 0.0) || min_cover > 1.0)
    throw ParameterError("min_cover must lie in (0, 1]");
  const double full_area = static_cast<double>(height) * width;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double area = rng.uniform(min_cover, 1.0) * full_area;
    const double aspect = rng.uniform(aspect_lo, aspect_hi);
    const int h = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    const int w = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    if (h < 1 || w < 1 || h > height || w > width) continue;
    const double a = static_cast<double>(w) / h;
    if (a < aspect_lo || a > aspect_hi) continue;
    if (static_cast<double>(h) * w < min_cover * full_area) continue;
    CropParams crop;
    crop.h = h;
    crop.w = w;
    crop.y0 = static_cast<int>(rng.uniform_int(0, height - h));
    crop.x0 = static_cast<int>(rng.uniform_int(0, width - w));
    crop.out_h = height;
    crop.out_w = width;
    return crop;
  }
  return identity_crop(height, width);
}

std::vector<float> apply_to_video(const std::vector<float>& data, int frames, int height,
                                  int width, int channels, const CropParams& crop) {
  check_crop(crop, height, width);
  std::vector<float> out(static_cast<std::size_t>(frames) * crop.out_h * crop.out_w *
                         channels);
  const std::size_t in_frame = static_cast<std::size_t>(height) * width * channels;
  const std::size_t out_frame = static_cast<std::size_t>(crop.out_h) * crop.out_w * channels;
  for (int t = 0; t < frames; ++t)
    bilinear_frame(data.data() + t * in_frame, height, width, channels, crop,
                   out.data() + t * out_frame);
  return out;
}

std::vector<float> apply_to_flow(const std::vector<float>& flow, int frames, int height,
                                 int width, const CropParams& crop) {
  auto out = apply_to_video(flow, frames, height, width, 2, crop);
  const float sx = static_cast<float>(crop.out_w) / crop.w;
  const float sy = static_cast<float>(crop.out_h) / crop.h;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    out[i] *= sx;
    out[i + 1] *= sy;
  }
  return out;
}

void apply_to_depth(const std::vector<float>& depth,
                    const std::vector<std::int32_t>& masks, int frames, int height,
                    int width, const CropParams& crop, std::vector<float>* depth_out,
                    std::vector<std::int32_t>* masks_out) {
  check_crop(crop, height, width);
  *depth_out = apply_to_video(depth, frames, height, width, 1, crop);
  masks_out->assign(static_cast<std::size_t>(frames) * crop.out_h * crop.out_w, 0);
  const std::size_t in_frame = static_cast<std::size_t>(height) * width;
  const std::size_t out_frame = static_cast<std::size_t>(crop.out_h) * crop.out_w;
  for (int t = 0; t < frames; ++t)
    nearest_frame(masks.data() + t * in_frame, height, width, crop,
                  masks_out->data() + t * out_frame);
}

std::vector<scenegen::SparsePoint> apply_to_sparse(
    const std::vector<scenegen::SparsePoint>& points, const CropParams& crop) {
  std::vector<scenegen::SparsePoint> out;
  out.reserve(points.size());
  const double sy = static_cast<double>(crop.out_h) / crop.h;
  const double sx = static_cast<double>(crop.out_w) / crop.w;
  for (const auto& p : points) {
    const double ny = (static_cast<double>(p.row) + 0.5 - crop.y0) * sy - 0.5;
    const double nx = (static_cast<double>(p.col) + 0.5 - crop.x0) * sx - 0.5;
    const long r = std::lround(ny);
    const long c = std::lround(nx);
    if (r < 0 || r >= crop.out_h || c < 0 || c >= crop.out_w) continue;
    scenegen::SparsePoint q = p;
    q.row = static_cast<std::uint32_t>(r);
    q.col = static_cast<std::uint32_t>(c);
    out.push_back(q);
  }
  return out;
}

std::vector<float> apply_to_bboxes(const std::vector<float>& boxes, int frames,
                                   int box_slots, int height, int width,
                                   const CropParams& crop) {
  std::vector<float> out(boxes.size(), 0.0f);
  for (int t = 0; t < frames; ++t)
    for (int k = 0; k < box_slots; ++k) {
      const float* b = boxes.data() + (static_cast<std::size_t>(t) * box_slots + k) * 4;
      float* o = out.data() + (static_cast<std::size_t>(t) * box_slots + k) * 4;
      if (b[0] == 0 && b[1] == 0 && b[2] == 0 && b[3] == 0) continue;
      const double ymin = (static_cast<double>(b[0]) * height - crop.y0) / crop.h;
      const double xmin = (static_cast<double>(b[1]) * width - crop.x0) / crop.w;
      const double ymax = (static_cast<double>(b[2]) * height - crop.y0) / crop.h;
      const double xmax = (static_cast<double>(b[3]) * width - crop.x0) / crop.w;
      const double cy0 = std::clamp(ymin, 0.0, 1.0), cy1 = std::clamp(ymax, 0.0, 1.0);
      const double cx0 = std::clamp(xmin, 0.0, 1.0), cx1 = std::clamp(xmax, 0.0, 1.0);
      if (cy1 - cy0 <= 0.0 || cx1 - cx0 <= 0.0) continue;  // fully clipped
      o[0] = static_cast<float>(cy0);
      o[1] = static_cast<float>(cx0);
      o[2] = static_cast<float>(cy1);
      o[3] = static_cast<float>(cx1);
    }
  return out;
}

scenegen::VideoSample apply_to_sample(const scenegen::VideoSample& sample,
                                      const CropParams& crop) {
  scenegen::VideoSample out;
  out.frames = sample.frames;
  out.height = crop.out_h;
  out.width = crop.out_w;
  out.box_slots = sample.box_slots;
  out.last_frame_flow_zero = sample.last_frame_flow_zero;
  out.rgb = apply_to_video(sample.rgb, sample.frames, sample.height, sample.width, 3, crop);
  out.flow = apply_to_flow(sample.flow, sample.frames, sample.height, sample.width, crop);
  apply_to_depth(sample.depth, sample.masks, sample.frames, sample.height, sample.width,
                 crop, &out.depth, &out.masks);
  out.sparse = apply_to_sparse(sample.sparse, crop);
  out.boxes = apply_to_bboxes(sample.boxes, sample.frames, sample.box_slots,
                              sample.height, sample.width, crop);
  return out;
}

}  // namespace savipp::augment
