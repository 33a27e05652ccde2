#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "savipp/harness/io.hpp"
#include "savipp/rng.hpp"
#include "savipp/scenegen/dataset.hpp"
#include "savipp/scenegen/render.hpp"

using namespace savipp;
using namespace savipp::scenegen;
namespace fs = std::filesystem;

namespace {

SceneSpec horizontal_probe_scene() {
  SceneSpec s;
  s.height = 65;
  s.width = 65;
  s.frames = 2;
  CameraPath cam;
  cam.focal = 80.0;
  cam.cx = 32.5;
  cam.cy = 32.5;
  cam.pos0 = {-5, 0, 1};
  cam.look_at = {0, 0, 1};
  s.camera = cam;
  return s;
}

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("savipp_test_" + tag);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("on-axis sphere depth is camera distance minus radius") {
  auto s = horizontal_probe_scene();
  ObjectSpec o;
  o.kind = ShapeKind::kSphere;
  o.radius = 1.0;
  o.pose0 = {0, 0, 1};
  o.id = 1;
  s.objects.push_back(o);
  const Hit h = cast_ray(s, 0, 32, 32);
  CHECK(h.id == 1);
  CHECK(h.dist == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("empty scene renders finite ground depth and background masks") {
  SceneSpec s;
  s.height = 32;
  s.width = 32;
  s.frames = 2;
  s.camera.focal = 1.1 * 32;
  s.camera.cx = 16;
  s.camera.cy = 16;
  s.camera.pos0 = {4, 0, 8};
  s.camera.look_at = {0, 0, 0};
  std::vector<float> rgb, depth;
  std::vector<std::int32_t> masks;
  render_frame(s, 0, &rgb, &depth, &masks);
  for (auto m : masks) CHECK(m == 0);
  for (auto d : depth) {
    CHECK(std::isfinite(d));
    CHECK(d > 0.0f);
  }
  // Spot-check one pixel against the analytic plane distance.
  const Hit h = cast_ray(s, 0, 5, 21);
  CHECK(std::abs(h.point.z) < 1e-9);
  CHECK(depth[5 * 32 + 21] == doctest::Approx(h.dist));
}

TEST_CASE("degenerate camera raises a parameter error") {
  auto s = horizontal_probe_scene();
  s.camera.focal = 0.0;
  CHECK_THROWS_AS(cast_ray(s, 0, 1, 1), ParameterError);
}

TEST_CASE("occluded sphere is absent; ray-march oracle agrees with the caster") {
  SceneSpec s;
  s.height = 64;
  s.width = 64;
  s.frames = 2;
  s.camera.focal = 1.1 * 64;
  s.camera.cx = 32;
  s.camera.cy = 32;
  s.camera.pos0 = {-1.5, 0, 12};
  s.camera.look_at = {0, 0, 4.8};

  ObjectSpec box;
  box.kind = ShapeKind::kBox;
  box.half_extents = {1.2, 1.2, 0.8};
  box.pose0 = {0, 0, 5};
  box.id = 1;
  s.objects.push_back(box);

  const Vec3 fwd = normalized(s.camera.look_at - s.camera.pos0);
  ObjectSpec sphere;
  sphere.kind = ShapeKind::kSphere;
  sphere.radius = 0.4;
  sphere.pose0 = box.pose0 + fwd * 2.2;
  sphere.id = 2;
  s.objects.push_back(sphere);

  std::vector<float> rgb, depth;
  std::vector<std::int32_t> masks;
  render_frame(s, 0, &rgb, &depth, &masks);
  for (auto m : masks) CHECK(m != 2);

  // Brute-force ray march on a coarse grid.
  auto inside = [&](Vec3 p) -> int {
    const Vec3 d1 = p - box.pose0;
    if (std::abs(d1.x) <= box.half_extents.x && std::abs(d1.y) <= box.half_extents.y &&
        std::abs(d1.z) <= box.half_extents.z)
      return 1;
    if (norm(p - sphere.pose0) <= sphere.radius) return 2;
    if (p.z <= 0.0) return 0;
    return -1;
  };
  int agree = 0, totalPix = 0;
  for (int r = 2; r < 64; r += 4)
    for (int c = 2; c < 64; c += 4) {
      const Hit h = cast_ray(s, 0, r, c);
      const Vec3 origin = s.camera.pos0;
      const Vec3 dir = normalized(h.point - origin);
      int oracle = -1;
      for (double t = 0.05; t < 30.0; t += 2e-3) {
        oracle = inside(origin + dir * t);
        if (oracle >= 0) break;
      }
      CHECK(oracle != 2);  // oracle agrees the sphere is hidden
      ++totalPix;
      if (oracle == h.id) ++agree;
    }
  CHECK(agree >= totalPix * 95 / 100);
}

TEST_CASE("static scene with a static camera has identically zero flow") {
  Rng rng(7);
  auto scene = make_scene(rng, Regime::kMixedStaticObjects, 32, 32, 4, 4);
  for (auto& o : scene.objects) o.velocity = {0, 0, 0};
  std::vector<float> flow;
  compute_flow(scene, 0, &flow);
  for (float f : flow) CHECK(f == 0.0f);
}

TEST_CASE("image-plane translation gives pinhole flow f*v/depth per pixel") {
  SceneSpec s;
  s.height = 64;
  s.width = 64;
  s.frames = 2;
  s.camera.focal = 70;
  s.camera.cx = 32;
  s.camera.cy = 32;
  s.camera.pos0 = {-8, 0, 6};
  s.camera.look_at = {0, 0, 1};

  Vec3 right, down, fwd;
  s.camera.basis(0, &right, &down, &fwd);
  ObjectSpec o;
  o.kind = ShapeKind::kSphere;
  o.radius = 0.8;
  o.pose0 = {0, 0, 1};
  o.id = 1;
  o.velocity = right * 0.15;  // exactly parallel to the image plane
  s.objects.push_back(o);

  std::vector<float> rgb, depth, flow;
  std::vector<std::int32_t> masks;
  render_frame(s, 0, &rgb, &depth, &masks);
  compute_flow(s, 0, &flow);
  int checked = 0;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      if (masks[static_cast<std::size_t>(r) * 64 + c] != 1) continue;
      const Hit h = cast_ray(s, 0, r, c);
      const double qz = dot(h.point - s.camera.pos0, fwd);
      const double expect_dx = s.camera.focal * dot(o.velocity, right) / qz;
      const double expect_dy = s.camera.focal * dot(o.velocity, down) / qz;
      const std::size_t idx = (static_cast<std::size_t>(r) * 64 + c) * 2;
      CHECK(std::abs(flow[idx] - expect_dx) < 1e-6);
      CHECK(std::abs(flow[idx + 1] - expect_dy) < 1e-6);
      ++checked;
    }
  CHECK(checked > 20);
}

TEST_CASE("moving camera over the static plane matches a reprojection oracle") {
  SceneSpec s;
  s.height = 32;
  s.width = 32;
  s.frames = 3;
  s.regime = Regime::kMovingCamera;
  s.camera.focal = 1.2 * 32;
  s.camera.cx = 16;
  s.camera.cy = 16;
  s.camera.pos0 = {4.5, 1.0, 8};
  s.camera.velocity = {0.08, -0.05, 0.01};
  s.camera.look_at = {0, 0, 0};

  std::vector<float> flow;
  compute_flow(s, 1, &flow);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      // Oracle: intersect the plane and re-project with its own math.
      const Vec3 cam1 = s.camera.pos0 + s.camera.velocity * 1.0;
      const Vec3 cam2 = s.camera.pos0 + s.camera.velocity * 2.0;
      const Vec3 f1 = normalized(s.camera.look_at - cam1);
      Vec3 r1 = normalized(cross(f1, Vec3{0, 0, 1}));
      const Vec3 d1 = cross(f1, r1);
      const Vec3 dir = normalized(r1 * ((c + 0.5 - s.camera.cx) / s.camera.focal) +
                                  d1 * ((r + 0.5 - s.camera.cy) / s.camera.focal) + f1);
      const double t = -cam1.z / dir.z;
      const Vec3 p = cam1 + dir * t;
      const Vec3 f2 = normalized(s.camera.look_at - cam2);
      Vec3 r2 = normalized(cross(f2, Vec3{0, 0, 1}));
      const Vec3 d2 = cross(f2, r2);
      const Vec3 rel = p - cam2;
      const double q = dot(rel, f2);
      const double col2 = s.camera.focal * dot(rel, r2) / q + s.camera.cx - 0.5;
      const double row2 = s.camera.focal * dot(rel, d2) / q + s.camera.cy - 0.5;
      const std::size_t idx = (static_cast<std::size_t>(r) * 32 + c) * 2;
      CHECK(std::abs(flow[idx] - (col2 - c)) < 1e-6);
      CHECK(std::abs(flow[idx + 1] - (row2 - r)) < 1e-6);
    }
}

TEST_CASE("flow warp moves masks onto the next frame away from occlusions") {
  for (auto regime : {Regime::kStaticCameraMovingObjects, Regime::kMovingCamera}) {
    Rng rng(1234);
    auto scene = make_scene(rng, regime, 48, 48, 5, 4);
    const int H = scene.height, W = scene.width;
    std::vector<std::vector<std::int32_t>> masks(static_cast<std::size_t>(scene.frames));
    std::vector<std::vector<float>> depth(static_cast<std::size_t>(scene.frames));
    std::vector<float> rgb;
    for (int t = 0; t < scene.frames; ++t)
      render_frame(scene, t, &rgb, &depth[static_cast<std::size_t>(t)],
                   &masks[static_cast<std::size_t>(t)]);
    std::int64_t match = 0, total = 0;
    for (int t = 0; t + 1 < scene.frames; ++t) {
      std::vector<float> flow;
      compute_flow(scene, t, &flow);
      const Vec3 cam_next = scene.camera.position(t + 1);
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          const std::size_t p = static_cast<std::size_t>(r) * W + c;
          const int qc = static_cast<int>(std::lround(c + flow[p * 2]));
          const int qr = static_cast<int>(std::lround(r + flow[p * 2 + 1]));
          if (qr < 0 || qr >= H || qc < 0 || qc >= W) continue;
          Hit h = cast_ray(scene, t, r, c);
          Vec3 moved = h.point;
          if (h.id > 0)
            for (const auto& o : scene.objects)
              if (o.id == h.id) moved = moved + o.velocity;
          const double dist_next = norm(moved - cam_next);
          const float seen = depth[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(qr) * W + qc];
          if (seen < dist_next - 0.05) continue;  // occluded at t+1
          ++total;
          if (masks[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(qr) * W + qc] ==
              masks[static_cast<std::size_t>(t)][p])
            ++match;
        }
    }
    CHECK(total > 1000);
    CHECK(static_cast<double>(match) >= 0.98 * static_cast<double>(total));
  }
}

TEST_CASE("box-mask agreement is exact and depth is positive") {
  Rng rng(99);
  auto scene = make_scene(rng, Regime::kMixedStaticObjects, 48, 48, 5, 5);
  Rng vidrng(100);
  auto v = render_video(scene, 8, 0.05, 0.0, vidrng);
  for (float d : v.depth) {
    CHECK(d > 0.0f);
    CHECK(std::isfinite(d));
  }
  for (int t = 0; t < v.frames; ++t)
    for (int r = 0; r < v.height; ++r)
      for (int c = 0; c < v.width; ++c) {
        const std::int32_t id = v.masks[v.pixel_index(t, r, c)];
        if (id <= 0) continue;
        const float* b = v.boxes.data() + (static_cast<std::size_t>(t) * v.box_slots + id - 1) * 4;
        CHECK(r >= b[0] * v.height);
        CHECK(r < b[2] * v.height);
        CHECK(c >= b[1] * v.width);
        CHECK(c < b[3] * v.width);
      }
  // Sparse points are a subset of dense depth (exact before noise).
  for (const auto& p : v.sparse)
    CHECK(p.dist == v.depth[v.pixel_index(static_cast<int>(p.frame),
                                          static_cast<int>(p.row), static_cast<int>(p.col))]);
}

TEST_CASE("sparse sampling density, determinism, exact-count contract") {
  const int H = 64, W = 64;
  std::vector<float> depth(static_cast<std::size_t>(H) * W, 5.0f);
  std::vector<std::int32_t> masks(depth.size(), 0);

  Rng r1(42);
  auto full = sample_sparse_depth(depth, masks, H, W, 1.0, SparsePattern::kScanlines, r1);
  CHECK(full.size() == static_cast<std::size_t>(H * W));
  std::set<std::pair<int, int>> seen;
  for (const auto& p : full) seen.insert({static_cast<int>(p.row), static_cast<int>(p.col)});
  CHECK(seen.size() == static_cast<std::size_t>(H * W));

  Rng r2(7), r3(7);
  auto a = sample_sparse_depth(depth, masks, H, W, 0.05, SparsePattern::kScanlines, r2);
  auto b = sample_sparse_depth(depth, masks, H, W, 0.05, SparsePattern::kScanlines, r3);
  CHECK(std::abs(static_cast<int>(a.size()) - 205) <= 2);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].row == b[i].row);
    CHECK(a[i].col == b[i].col);
  }
  Rng r4(8);
  CHECK_THROWS_AS(
      sample_sparse_depth(depth, masks, H, W, 0.0, SparsePattern::kScanlines, r4),
      ParameterError);
}

TEST_CASE("depth noise statistics and clamping") {
  std::vector<SparsePoint> pts(100000);
  for (auto& p : pts) p.dist = 10.0f;
  auto same = add_depth_noise(pts, NoiseSpec{0.0, 3});
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(same[i].dist == pts[i].dist);

  auto noisy = add_depth_noise(pts, NoiseSpec{0.4, 3});
  double mean = 0;
  for (const auto& p : noisy) mean += p.dist;
  mean /= static_cast<double>(noisy.size());
  double var = 0;
  for (const auto& p : noisy) var += (p.dist - mean) * (p.dist - mean);
  const double sd = std::sqrt(var / static_cast<double>(noisy.size() - 1));
  CHECK(sd == doctest::Approx(0.4).epsilon(0.01));

  for (auto& p : pts) p.dist = 0.01f;
  auto clamped = add_depth_noise(pts, NoiseSpec{0.4, 4});
  for (const auto& p : clamped) CHECK(p.dist > 0.0f);
}

TEST_CASE("bbox extraction closed forms") {
  const int H = 100, W = 100;
  std::vector<std::int32_t> masks(static_cast<std::size_t>(H) * W, 0);
  for (int r = 10; r <= 19; ++r)
    for (int c = 30; c <= 39; ++c) masks[static_cast<std::size_t>(r) * W + c] = 1;
  auto boxes = extract_bboxes(masks, 1, H, W, 2);
  CHECK(boxes[0] == doctest::Approx(0.10));
  CHECK(boxes[1] == doctest::Approx(0.30));
  CHECK(boxes[2] == doctest::Approx(0.20));
  CHECK(boxes[3] == doctest::Approx(0.40));
  // Absent object: zeros.
  CHECK(boxes[4] == 0.0f);
  CHECK(boxes[7] == 0.0f);

  std::fill(masks.begin(), masks.end(), 1);
  auto full = extract_bboxes(masks, 1, H, W, 1);
  CHECK(full[0] == 0.0f);
  CHECK(full[1] == 0.0f);
  CHECK(full[2] == 1.0f);
  CHECK(full[3] == 1.0f);
}

TEST_CASE("generate_dataset layout, determinism and regimes") {
  DatasetConfig cfg;
  cfg.videos = 4;
  cfg.val_videos = 0;
  cfg.height = cfg.width = 32;
  cfg.frames = 4;
  cfg.max_objects = 3;
  cfg.box_slots = 4;
  cfg.seed = 11;
  cfg.out = temp_dir("ds_a");
  auto manifest = generate_dataset(cfg);
  CHECK(manifest.videos.size() == 4);
  for (int i = 0; i < 4; ++i)
    CHECK(fs::is_directory(cfg.out / manifest.videos[static_cast<std::size_t>(i)].name));
  CHECK(fs::exists(cfg.out / "manifest.json"));

  DatasetConfig cfg2 = cfg;
  cfg2.out = temp_dir("ds_b");
  generate_dataset(cfg2);
  for (const auto& v : manifest.videos)
    for (const char* f : {"rgb.bin", "depth.bin", "flow.bin", "masks.bin", "boxes.bin", "sparse.bin"})
      CHECK(harness::files_identical(cfg.out / v.name / f, cfg2.out / v.name / f));
  CHECK(harness::files_identical(cfg.out / "manifest.json", cfg2.out / "manifest.json"));

  DatasetConfig cfge = cfg;
  cfge.regime = Regime::kMovingCamera;
  cfge.out = temp_dir("ds_e");
  auto me = generate_dataset(cfge);
  CHECK(me.regime == "e");
  Dataset ds(cfge.out);
  CHECK(ds.manifest().regime == "e");
  // Moving camera: background flow must be nonzero somewhere in every video.
  for (int i = 0; i < ds.video_count(); ++i) {
    auto v = ds.load_video(i);
    bool nonzero = false;
    for (std::size_t p = 0; p < static_cast<std::size_t>(v.height) * v.width * 2; ++p)
      if (v.flow[p] != 0.0f) nonzero = true;
    CHECK(nonzero);
  }
  fs::remove_all(cfg.out);
  fs::remove_all(cfg2.out);
  fs::remove_all(cfge.out);
}

TEST_CASE("video sample round-trips through the dataset files") {
  DatasetConfig cfg;
  cfg.videos = 1;
  cfg.height = cfg.width = 32;
  cfg.frames = 3;
  cfg.max_objects = 3;
  cfg.box_slots = 4;
  cfg.sparse_density = 0.1;
  cfg.seed = 5;
  cfg.out = temp_dir("ds_rt");
  generate_dataset(cfg);
  Dataset ds(cfg.out);
  auto v = ds.load_video(0);
  CHECK(v.frames == 3);
  CHECK(v.rgb.size() == static_cast<std::size_t>(3) * 32 * 32 * 3);
  CHECK(v.sparse.size() == static_cast<std::size_t>(3 * 102));
  // Last frame flow is zero-filled.
  for (std::size_t p = 0; p < static_cast<std::size_t>(32) * 32 * 2; ++p)
    CHECK(v.flow[static_cast<std::size_t>(2) * 32 * 32 * 2 + p] == 0.0f);
  fs::remove_all(cfg.out);
}
