#include "savipp/scenegen/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace savipp::scenegen {

namespace {

constexpr double kRayEps = 1e-9;

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal{};
  bool ok = false;
};

RayHit intersect_sphere(Vec3 origin, Vec3 dir, Vec3 center, double radius) {
  RayHit h;
  const Vec3 oc = origin - center;
  const double b = dot(dir, oc);
  const double c = dot(oc, oc) - radius * radius;
  const double disc = b * b - c;
  if (disc < 0) return h;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= kRayEps) t = -b + sq;
  if (t <= kRayEps) return h;
  h.t = t;
  h.normal = normalized(origin + dir * t - center);
  h.ok = true;
  return h;
}

RayHit intersect_box(Vec3 origin, Vec3 dir, Vec3 center, Vec3 half) {
  RayHit h;
  double tmin = -std::numeric_limits<double>::infinity();
  double tmax = std::numeric_limits<double>::infinity();
  int axis = 0;
  const double o[3] = {origin.x - center.x, origin.y - center.y, origin.z - center.z};
  const double d[3] = {dir.x, dir.y, dir.z};
  const double e[3] = {half.x, half.y, half.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (o[i] < -e[i] || o[i] > e[i]) return h;
      continue;
    }
    double t1 = (-e[i] - o[i]) / d[i];
    double t2 = (e[i] - o[i]) / d[i];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tmin) {
      tmin = t1;
      axis = i;
    }
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return h;
  }
  const double t = tmin > kRayEps ? tmin : tmax;
  if (t <= kRayEps || tmin > tmax) return h;
  h.t = t;
  Vec3 n{};
  const double sign = (axis == 0 ? o[0] : axis == 1 ? o[1] : o[2]) >= 0 ? 1.0 : -1.0;
  if (axis == 0) n = {sign, 0, 0};
  if (axis == 1) n = {0, sign, 0};
  if (axis == 2) n = {0, 0, sign};
  h.normal = n;
  h.ok = true;
  return h;
}

Vec3 pixel_ray(const CameraPath& cam, int t, double row, double col) {
  Vec3 right, down, fwd;
  cam.basis(t, &right, &down, &fwd);
  const double xc = (col + 0.5 - cam.cx) / cam.focal;
  const double yc = (row + 0.5 - cam.cy) / cam.focal;
  return normalized(right * xc + down * yc + fwd);
}

// Fixed directional light plus ambient; enough texture to correlate RGB with
// geometry without a full shading model.
constexpr Vec3 kLightDir{-0.37904902178945171, 0.23690563861840731, -0.89456795587418757};

std::array<double, 3> ground_albedo(Vec3 p) {
  const long long px = static_cast<long long>(std::floor(p.x));
  const long long py = static_cast<long long>(std::floor(p.y));
  const bool even = ((px + py) & 1LL) == 0;
  const double g = even ? 0.55 : 0.42;
  return {g, g, g};
}

}  // namespace

Hit cast_ray(const SceneSpec& scene, int t, int row, int col) {
  if (scene.camera.focal <= 0) throw ParameterError("degenerate camera: focal <= 0");
  const Vec3 origin = scene.camera.position(t);
  const Vec3 dir = pixel_ray(scene.camera, t, row, col);

  Hit best;
  best.dist = std::numeric_limits<double>::infinity();
  for (const auto& o : scene.objects) {
    const Vec3 c = o.position(t);
    const RayHit rh = o.kind == ShapeKind::kSphere
                          ? intersect_sphere(origin, dir, c, o.radius)
                          : intersect_box(origin, dir, c, o.half_extents);
    if (rh.ok && rh.t < best.dist) {
      best.dist = rh.t;
      best.id = o.id;
      best.normal = rh.normal;
    }
  }
  // Ground plane z = 0.
  if (dir.z < -1e-12) {
    const double tg = -origin.z / dir.z;
    if (tg > kRayEps && tg < best.dist) {
      best.dist = tg;
      best.id = 0;
      best.normal = {0, 0, 1};
    }
  }
  if (!std::isfinite(best.dist))
    throw ContractError("ray missed every surface; scene violates the frustum contract");
  best.point = origin + dir * best.dist;
  return best;
}

void render_frame(const SceneSpec& scene, int t, std::vector<float>* rgb,
                  std::vector<float>* depth, std::vector<std::int32_t>* masks) {
  if (t < 0 || t >= scene.frames)
    throw ParameterError("frame index " + std::to_string(t) + " out of range");
  const int H = scene.height, W = scene.width;
  rgb->assign(static_cast<std::size_t>(H) * W * 3, 0.0f);
  depth->assign(static_cast<std::size_t>(H) * W, 0.0f);
  masks->assign(static_cast<std::size_t>(H) * W, 0);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const Hit h = cast_ray(scene, t, r, c);
      const std::size_t p = static_cast<std::size_t>(r) * W + c;
      (*depth)[p] = static_cast<float>(h.dist);
      (*masks)[p] = h.id;
      std::array<double, 3> albedo = ground_albedo(h.point);
      if (h.id > 0) {
        for (const auto& o : scene.objects)
          if (o.id == h.id) albedo = o.albedo;
      }
      const double lambert = std::max(0.0, -dot(h.normal, kLightDir));
      const double shade = 0.35 + 0.65 * lambert;
      for (int k = 0; k < 3; ++k)
        (*rgb)[p * 3 + k] =
            static_cast<float>(std::clamp(albedo[static_cast<std::size_t>(k)] * shade, 0.0, 1.0));
    }
}

void compute_flow(const SceneSpec& scene, int t, std::vector<float>* flow) {
  if (t < 0 || t >= scene.frames - 1)
    throw ParameterError("flow frame index " + std::to_string(t) + " out of range");
  const int H = scene.height, W = scene.width;
  flow->assign(static_cast<std::size_t>(H) * W * 2, 0.0f);
  const Vec3 cam_next = scene.camera.position(t + 1);
  Vec3 right, down, fwd;
  scene.camera.basis(t + 1, &right, &down, &fwd);
  const bool camera_static = scene.camera.velocity.x == 0.0 &&
                             scene.camera.velocity.y == 0.0 &&
                             scene.camera.velocity.z == 0.0;
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const Hit h = cast_ray(scene, t, r, c);
      Vec3 p = h.point;
      bool moved = false;
      if (h.id > 0) {
        for (const auto& o : scene.objects)
          if (o.id == h.id && (o.velocity.x != 0.0 || o.velocity.y != 0.0 ||
                               o.velocity.z != 0.0)) {
            p = p + o.velocity;
            moved = true;
          }
      }
      if (camera_static && !moved) continue;  // flow is exactly zero
      const Vec3 rel = p - cam_next;
      const double qx = dot(rel, right), qy = dot(rel, down), qz = dot(rel, fwd);
      if (qz < 1e-9) continue;  // behind the next camera; leave zero
      const double col2 = scene.camera.focal * qx / qz + scene.camera.cx - 0.5;
      const double row2 = scene.camera.focal * qy / qz + scene.camera.cy - 0.5;
      const std::size_t idx = (static_cast<std::size_t>(r) * W + c) * 2;
      (*flow)[idx] = static_cast<float>(col2 - c);
      (*flow)[idx + 1] = static_cast<float>(row2 - r);
    }
}

std::vector<SparsePoint> sample_sparse_depth(const std::vector<float>& depth,
                                             const std::vector<std::int32_t>& masks,
                                             int height, int width, double density,
                                             SparsePattern pattern, Rng& rng) {
  (void)pattern;
  if (!(density > 0.0) || density > 1.0)
    throw ParameterError("sparse density must lie in (0, 1], got " + std::to_string(density));
  if (static_cast<std::size_t>(height) * width != depth.size() ||
      depth.size() != masks.size())
    throw DimensionError("sparse sampling: depth/mask extents do not match resolution");

  const std::int64_t total = static_cast<std::int64_t>(height) * width;
  const std::int64_t target = std::max<std::int64_t>(1, std::llround(density * total));

  // Scanline rows at a regular angular step, thinned to the exact target.
  std::int64_t step = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::llround(std::sqrt(1.0 / density))));
  auto rows_for_step = [&](std::int64_t s) {
    return (height + s - 1) / s;
  };
  while (rows_for_step(step) * width < target && step > 1) --step;
  const std::int64_t phase = rng.uniform_int(0, step - 1) % step;

  std::vector<std::pair<int, int>> line;
  line.reserve(static_cast<std::size_t>(rows_for_step(step) * width));
  for (std::int64_t r = phase % step; r < height; r += step) {
    const std::int64_t rot = rng.uniform_int(0, width - 1);
    for (std::int64_t j = 0; j < width; ++j)
      line.emplace_back(static_cast<int>(r), static_cast<int>((rot + j) % width));
  }
  const std::int64_t m = static_cast<std::int64_t>(line.size());

  std::vector<SparsePoint> out;
  out.reserve(static_cast<std::size_t>(target));
  for (std::int64_t i = 0; i < target; ++i) {
    const auto& [r, c] = line[static_cast<std::size_t>(i * m / target)];
    SparsePoint p;
    p.row = static_cast<std::uint32_t>(r);
    p.col = static_cast<std::uint32_t>(c);
    p.dist = depth[static_cast<std::size_t>(r) * width + c];
    out.push_back(p);
  }
  return out;
}

std::vector<SparsePoint> add_depth_noise(std::vector<SparsePoint> points,
                                         const NoiseSpec& spec) {
  if (spec.sigma < 0) throw ParameterError("noise sigma must be >= 0");
  if (spec.sigma == 0.0) return points;
  Rng rng(spec.seed);
  for (auto& p : points) {
    const double noised = static_cast<double>(p.dist) + rng.normal(0.0, spec.sigma);
    p.dist = static_cast<float>(std::max(noised, 1e-4));
  }
  return points;
}

std::vector<float> extract_bboxes(const std::vector<std::int32_t>& masks, int frames,
                                  int height, int width, int box_slots) {
  if (masks.size() != static_cast<std::size_t>(frames) * height * width)
    throw DimensionError("extract_bboxes: mask buffer does not match extents");
  std::vector<float> boxes(static_cast<std::size_t>(frames) * box_slots * 4, 0.0f);
  std::vector<int> rmin(static_cast<std::size_t>(box_slots)), rmax(rmin.size()),
      cmin(rmin.size()), cmax(rmin.size());
  for (int t = 0; t < frames; ++t) {
    std::fill(rmin.begin(), rmin.end(), height);
    std::fill(rmax.begin(), rmax.end(), -1);
    std::fill(cmin.begin(), cmin.end(), width);
    std::fill(cmax.begin(), cmax.end(), -1);
    const std::int32_t* m = masks.data() + static_cast<std::size_t>(t) * height * width;
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) {
        const std::int32_t id = m[static_cast<std::size_t>(r) * width + c];
        if (id <= 0) continue;
        if (id > box_slots)
          throw ContractError("mask id " + std::to_string(id) + " exceeds box slots " +
                              std::to_string(box_slots));
        const std::size_t k = static_cast<std::size_t>(id - 1);
        rmin[k] = std::min(rmin[k], r);
        rmax[k] = std::max(rmax[k], r);
        cmin[k] = std::min(cmin[k], c);
        cmax[k] = std::max(cmax[k], c);
      }
    for (int k = 0; k < box_slots; ++k) {
      if (rmax[static_cast<std::size_t>(k)] < 0) continue;  // absent -> zeros
      float* b = boxes.data() + (static_cast<std::size_t>(t) * box_slots + k) * 4;
      b[0] = static_cast<float>(rmin[static_cast<std::size_t>(k)]) / height;
      b[1] = static_cast<float>(cmin[static_cast<std::size_t>(k)]) / width;
      b[2] = static_cast<float>(rmax[static_cast<std::size_t>(k)] + 1) / height;
      b[3] = static_cast<float>(cmax[static_cast<std::size_t>(k)] + 1) / width;
    }
  }
  return boxes;
}

VideoSample render_video(const SceneSpec& scene, int box_slots, double sparse_density,
                         double noise_sigma, Rng& rng) {
  scene.validate();
  const int T = scene.frames, H = scene.height, W = scene.width;
  VideoSample v;
  v.frames = T;
  v.height = H;
  v.width = W;
  v.box_slots = box_slots;
  v.rgb.reserve(static_cast<std::size_t>(T) * H * W * 3);
  v.depth.reserve(static_cast<std::size_t>(T) * H * W);
  v.flow.assign(static_cast<std::size_t>(T) * H * W * 2, 0.0f);
  v.masks.reserve(static_cast<std::size_t>(T) * H * W);

  std::vector<float> rgb, depth, flow;
  std::vector<std::int32_t> masks;
  for (int t = 0; t < T; ++t) {
    render_frame(scene, t, &rgb, &depth, &masks);
    v.rgb.insert(v.rgb.end(), rgb.begin(), rgb.end());
    v.depth.insert(v.depth.end(), depth.begin(), depth.end());
    v.masks.insert(v.masks.end(), masks.begin(), masks.end());
    if (t < T - 1) {
      compute_flow(scene, t, &flow);
      std::copy(flow.begin(), flow.end(),
                v.flow.begin() + static_cast<std::size_t>(t) * H * W * 2);
    }
    if (sparse_density > 0.0) {
      auto pts = sample_sparse_depth(depth, masks, H, W, sparse_density,
                                     SparsePattern::kScanlines, rng);
      if (noise_sigma > 0.0)
        pts = add_depth_noise(std::move(pts), NoiseSpec{noise_sigma, rng.next()});
      for (auto& p : pts) {
        p.frame = static_cast<std::uint32_t>(t);
        v.sparse.push_back(p);
      }
    }
  }
  v.boxes = extract_bboxes(v.masks, T, H, W, box_slots);
  return v;
}

}  // namespace savipp::scenegen
