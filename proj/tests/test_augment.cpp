#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "savipp/augment/augment.hpp"
#include "savipp/rng.hpp"
#include "savipp/scenegen/render.hpp"

using namespace savipp;
using namespace savipp::augment;

TEST_CASE("min_cover of one forces the full frame") {
  Rng rng(1);
  for (int i = 0; i < 16; ++i) {
    auto c = sample_crop(rng, 64, 64, 1.0);
    CHECK(c.is_identity());
  }
}

TEST_CASE("sampled crops respect aspect and coverage") {
  Rng rng(2);
  for (int i = 0; i < 300; ++i) {
    auto c = sample_crop(rng, 64, 64, 0.2);
    const double aspect = static_cast<double>(c.w) / c.h;
    CHECK(aspect >= 0.75);
    CHECK(aspect <= 1.33);
    CHECK(static_cast<double>(c.h) * c.w >= 0.2 * 64 * 64);
    CHECK(c.y0 + c.h <= 64);
    CHECK(c.x0 + c.w <= 64);
  }
}

TEST_CASE("crop sampling is deterministic in the seed") {
  Rng a(77), b(77);
  for (int i = 0; i < 32; ++i) {
    auto ca = sample_crop(a, 48, 48, 0.3);
    auto cb = sample_crop(b, 48, 48, 0.3);
    CHECK(ca.y0 == cb.y0);
    CHECK(ca.x0 == cb.x0);
    CHECK(ca.h == cb.h);
    CHECK(ca.w == cb.w);
  }
}

TEST_CASE("identity crop reproduces frames bit-exactly") {
  Rng rng(3);
  std::vector<float> video(2 * 16 * 16 * 3);
  for (auto& v : video) v = static_cast<float>(rng.uniform());
  auto out = apply_to_video(video, 2, 16, 16, 3, identity_crop(16, 16));
  REQUIRE(out.size() == video.size());
  CHECK(std::memcmp(out.data(), video.data(), video.size() * sizeof(float)) == 0);
}

TEST_CASE("constant frames stay constant under any crop") {
  std::vector<float> video(1 * 20 * 20 * 3, 0.25f);
  Rng rng(4);
  auto crop = sample_crop(rng, 20, 20, 0.2);
  auto out = apply_to_video(video, 1, 20, 20, 3, crop);
  for (float v : out) CHECK(v == doctest::Approx(0.25f));
}

TEST_CASE("2x zoom matches an independent bilinear oracle") {
  const int H = 16, W = 16;
  std::vector<float> frame(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      frame[static_cast<std::size_t>(r) * W + c] = ((r / 2 + c / 2) % 2 == 0) ? 1.0f : 0.0f;

  CropParams crop{4, 4, 8, 8, 16, 16};
  auto out = apply_to_video(frame, 1, H, W, 1, crop);

  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      // Pixel-wise oracle with the same half-pixel convention, written out
      // directly against the source frame.
      const double sy = std::min(std::max((i + 0.5) * 8.0 / 16.0 - 0.5, 0.0), 7.0) + 4.0;
      const double sx = std::min(std::max((j + 0.5) * 8.0 / 16.0 - 0.5, 0.0), 7.0) + 4.0;
      const int y1 = static_cast<int>(sy), x1 = static_cast<int>(sx);
      const int y2 = std::min(y1 + 1, 11), x2 = std::min(x1 + 1, 11);
      const double fy = sy - y1, fx = sx - x1;
      auto at = [&](int rr, int cc) {
        return static_cast<double>(frame[static_cast<std::size_t>(rr) * W + cc]);
      };
      const double top = at(y1, x1) * (1 - fx) + at(y1, x2) * fx;
      const double bot = at(y2, x1) * (1 - fx) + at(y2, x2) * fx;
      const double expect = top * (1 - fy) + bot * fy;
      CHECK(std::abs(out[static_cast<std::size_t>(i) * 16 + j] - expect) < 1e-6);
    }
}

TEST_CASE("flow rescaling follows the crop geometry exactly") {
  const int H = 8, W = 8;
  std::vector<float> flow(static_cast<std::size_t>(H) * W * 2);
  for (std::size_t i = 0; i < flow.size(); i += 2) {
    flow[i] = 1.5f;
    flow[i + 1] = -0.75f;
  }
  // Full frame at native resolution: unchanged.
  auto same = apply_to_flow(flow, 1, H, W, identity_crop(H, W));
  for (std::size_t i = 0; i < flow.size(); ++i) CHECK(same[i] == flow[i]);

  // Half-width crop: x components double exactly.
  CropParams half{0, 0, 8, 4, 8, 8};
  auto scaled = apply_to_flow(flow, 1, H, W, half);
  for (std::size_t i = 0; i < scaled.size(); i += 2) {
    CHECK(scaled[i] == 3.0f);
    CHECK(scaled[i + 1] == -0.75f);
  }

  // Constant fields scale by exactly (out_w/w, out_h/h) for arbitrary crops.
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto crop = sample_crop(rng, H, W, 0.2);
    auto out = apply_to_flow(flow, 1, H, W, crop);
    const float ex = 1.5f * (static_cast<float>(crop.out_w) / crop.w);
    const float ey = -0.75f * (static_cast<float>(crop.out_h) / crop.h);
    for (std::size_t i = 0; i < out.size(); i += 2) {
      CHECK(out[i] == ex);
      CHECK(out[i + 1] == ey);
    }
  }

  std::vector<float> zero(flow.size(), 0.0f);
  auto z = apply_to_flow(zero, 1, H, W, half);
  for (float v : z) CHECK(v == 0.0f);
}

TEST_CASE("depth and mask cropping contracts") {
  Rng rng(6);
  auto scene = scenegen::make_scene(rng, scenegen::Regime::kMixedStaticObjects, 32, 32, 4, 4);
  Rng vrng(7);
  auto v = scenegen::render_video(scene, 8, 0.0, 0.0, vrng);

  std::vector<float> d_id;
  std::vector<std::int32_t> m_id;
  apply_to_depth(v.depth, v.masks, v.frames, 32, 32, identity_crop(32, 32), &d_id, &m_id);
  CHECK(std::memcmp(d_id.data(), v.depth.data(), d_id.size() * sizeof(float)) == 0);
  CHECK(m_id == v.masks);

  CropParams crop{4, 6, 20, 20, 32, 32};
  std::vector<float> d2;
  std::vector<std::int32_t> m2;
  apply_to_depth(v.depth, v.masks, v.frames, 32, 32, crop, &d2, &m2);
  // Mask ids in the output appear in the crop window.
  for (int t = 0; t < v.frames; ++t) {
    std::vector<bool> present(16, false);
    for (int r = crop.y0; r < crop.y0 + crop.h; ++r)
      for (int c = crop.x0; c < crop.x0 + crop.w; ++c)
        present[static_cast<std::size_t>(v.masks[v.pixel_index(t, r, c)])] = true;
    float lo = 1e30f, hi = -1e30f;
    for (int r = crop.y0; r < crop.y0 + crop.h; ++r)
      for (int c = crop.x0; c < crop.x0 + crop.w; ++c) {
        lo = std::min(lo, v.depth[v.pixel_index(t, r, c)]);
        hi = std::max(hi, v.depth[v.pixel_index(t, r, c)]);
      }
    const std::size_t frame = static_cast<std::size_t>(t) * 32 * 32;
    for (std::size_t i = 0; i < 32 * 32; ++i) {
      CHECK(present[static_cast<std::size_t>(m2[frame + i])]);
      CHECK(d2[frame + i] >= lo - 1e-5f);
      CHECK(d2[frame + i] <= hi + 1e-5f);
    }
  }
}

TEST_CASE("sparse points transform and drop outside the window") {
  std::vector<scenegen::SparsePoint> pts = {{0, 2, 3, 5.0f}, {0, 10, 12, 6.0f}};
  auto same = apply_to_sparse(pts, identity_crop(16, 16));
  REQUIRE(same.size() == 2);
  CHECK(same[0].row == 2);
  CHECK(same[0].col == 3);
  CHECK(same[1].dist == 6.0f);

  CropParams crop{8, 8, 8, 8, 16, 16};
  auto inside = apply_to_sparse(pts, crop);
  REQUIRE(inside.size() == 1);
  CHECK(inside[0].dist == 6.0f);
  CHECK(inside[0].row == static_cast<std::uint32_t>(std::lround((10 + 0.5 - 8) * 2 - 0.5)));

  CropParams far{12, 12, 4, 4, 8, 8};
  auto none = apply_to_sparse({{0, 2, 3, 5.0f}, {0, 1, 1, 2.0f}}, far);
  CHECK(none.empty());
}

TEST_CASE("bbox transform closed forms") {
  // One box per frame, K=2, 32x32 frame.
  std::vector<float> boxes = {0.25f, 0.25f, 0.5f, 0.5f, 0, 0, 0, 0};
  auto same = apply_to_bboxes(boxes, 1, 2, 32, 32, identity_crop(32, 32));
  for (std::size_t i = 0; i < boxes.size(); ++i) CHECK(same[i] == doctest::Approx(boxes[i]));

  // Crop window entirely right of the box: the box disappears.
  CropParams right{0, 20, 32, 12, 32, 32};
  auto gone = apply_to_bboxes(boxes, 1, 2, 32, 32, right);
  for (int k = 0; k < 4; ++k) CHECK(gone[static_cast<std::size_t>(k)] == 0.0f);
}

TEST_CASE("modal consistency: boxes recomputed from cropped masks match") {
  Rng rng(8);
  auto scene = scenegen::make_scene(rng, scenegen::Regime::kStaticCameraMovingObjects,
                                    48, 48, 4, 4);
  Rng vrng(9);
  auto v = scenegen::render_video(scene, 8, 0.0, 0.0, vrng);

  Rng crng(10);
  for (int trial = 0; trial < 10; ++trial) {
    auto crop = sample_crop(crng, 48, 48, 0.3);
    std::vector<float> d2;
    std::vector<std::int32_t> m2;
    apply_to_depth(v.depth, v.masks, v.frames, 48, 48, crop, &d2, &m2);
    auto from_masks = scenegen::extract_bboxes(m2, v.frames, crop.out_h, crop.out_w, 8);
    auto from_affine = apply_to_bboxes(v.boxes, v.frames, 8, 48, 48, crop);

    const double tol_y = 1.0 / crop.h + 1.0 / crop.out_h;
    const double tol_x = 1.0 / crop.w + 1.0 / crop.out_w;
    for (std::size_t i = 0; i < from_masks.size(); i += 4) {
      const float* a = from_masks.data() + i;
      const float* b = from_affine.data() + i;
      const bool a_zero = a[0] == 0 && a[1] == 0 && a[2] == 0 && a[3] == 0;
      const bool b_zero = b[0] == 0 && b[1] == 0 && b[2] == 0 && b[3] == 0;
      if (a_zero != b_zero) {
        // Slivers may vanish under nearest-neighbor resampling; accept when
        // the surviving side is no wider than a couple of pixels.
        const float* s = a_zero ? b : a;
        const double hpx = (s[2] - s[0]) * crop.out_h;
        const double wpx = (s[3] - s[1]) * crop.out_w;
        CHECK(std::min(hpx, wpx) <= 3.0);
        continue;
      }
      if (a_zero) continue;
      CHECK(std::abs(a[0] - b[0]) <= tol_y);
      CHECK(std::abs(a[2] - b[2]) <= tol_y);
      CHECK(std::abs(a[1] - b[1]) <= tol_x);
      CHECK(std::abs(a[3] - b[3]) <= tol_x);
    }
  }
}

TEST_CASE("whole-sample augmentation applies one crop to every frame") {
  Rng rng(11);
  auto scene = scenegen::make_scene(rng, scenegen::Regime::kStaticCameraMovingObjects,
                                    32, 32, 3, 3);
  Rng vrng(12);
  auto v = scenegen::render_video(scene, 8, 0.1, 0.0, vrng);
  Rng crng(13);
  auto crop = sample_crop(crng, 32, 32, 0.3);
  auto out = apply_to_sample(v, crop);
  CHECK(out.frames == v.frames);
  CHECK(out.height == crop.out_h);
  CHECK(out.width == crop.out_w);
  // Per-frame application with the same params matches the batched result.
  for (int t = 0; t < v.frames; ++t) {
    std::vector<float> frame(v.rgb.begin() + static_cast<std::ptrdiff_t>(v.pixel_index(t, 0, 0)) * 3,
                             v.rgb.begin() + static_cast<std::ptrdiff_t>(v.pixel_index(t + 1, 0, 0) * 3));
    auto single = apply_to_video(frame, 1, 32, 32, 3, crop);
    const std::size_t off = static_cast<std::size_t>(t) * crop.out_h * crop.out_w * 3;
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(single[i] == out.rgb[off + i]);
  }
}
