#include "savipp/scenegen/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "savipp/harness/io.hpp"
#include "savipp/rng.hpp"
#include "savipp/scenegen/render.hpp"

namespace savipp::scenegen {

namespace {

using nlohmann::json;

std::string video_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "video_%04d", index);
  return buf;
}

void write_video(const std::filesystem::path& dir, const VideoSample& v) {
  std::filesystem::create_directories(dir);
  const std::int64_t T = v.frames, H = v.height, W = v.width, K = v.box_slots;
  harness::write_tensor_f32(dir / "rgb.bin", {T, H, W, 3}, v.rgb);
  harness::write_tensor_f32(dir / "depth.bin", {T, H, W}, v.depth);
  harness::write_tensor_f32(dir / "flow.bin", {T, H, W, 2}, v.flow);
  harness::write_tensor_i32(dir / "masks.bin", {T, H, W}, v.masks);
  harness::write_tensor_f32(dir / "boxes.bin", {T, K, 4}, v.boxes);
  std::vector<harness::SparseRecord> records;
  records.reserve(v.sparse.size());
  for (const auto& p : v.sparse) records.push_back({p.frame, p.row, p.col, p.dist});
  harness::write_sparse(dir / "sparse.bin", records);
}

}  // namespace

std::vector<int> Manifest::split_indices(const std::string& split) const {
  std::vector<int> idx;
  for (int i = 0; i < static_cast<int>(videos.size()); ++i)
    if (videos[static_cast<std::size_t>(i)].split == split) idx.push_back(i);
  return idx;
}

Manifest generate_dataset(const DatasetConfig& config) {
  if (config.videos < 1) throw ParameterError("dataset needs at least one video");
  if (config.max_objects > config.box_slots)
    throw ParameterError("max_objects exceeds the box slot count");
  std::error_code ec;
  std::filesystem::create_directories(config.out, ec);
  if (ec) throw IoError("cannot create dataset directory " + config.out.string());

  Manifest m;
  m.regime = regime_name(config.regime);
  m.seed = config.seed;
  m.frames = config.frames;
  m.height = config.height;
  m.width = config.width;
  m.box_slots = config.box_slots;
  m.sparse_density = config.sparse_density;
  m.noise_sigma = config.noise_sigma;

  const int total = config.videos + config.val_videos;
  double max_flow = 0.0;
  for (int i = 0; i < total; ++i) {
    const bool is_val = i >= config.videos;
    // Disjoint seed streams for the two splits.
    const std::uint64_t vseed =
        derive_seed(config.seed, is_val ? 0x76616cULL : 0x747261696eULL,
                    static_cast<std::uint64_t>(is_val ? i - config.videos : i));
    Rng rng(vseed);
    const SceneSpec scene = make_scene(rng, config.regime, config.height, config.width,
                                       config.frames, config.max_objects);
    const VideoSample video = render_video(scene, config.box_slots,
                                           config.sparse_density, config.noise_sigma, rng);
    for (const float f : video.flow) max_flow = std::max(max_flow, std::abs(static_cast<double>(f)));
    write_video(config.out / video_name(i), video);
    m.videos.push_back({video_name(i), is_val ? "val" : "train",
                        static_cast<int>(scene.objects.size()), vseed});
  }
  m.max_flow_magnitude = std::max(1.0, std::ceil(max_flow));

  json j;
  j["format"] = "svpp-dataset-v1";
  j["regime"] = m.regime;
  j["seed"] = m.seed;
  j["frames"] = m.frames;
  j["height"] = m.height;
  j["width"] = m.width;
  j["box_slots"] = m.box_slots;
  j["sparse_density"] = m.sparse_density;
  j["noise_sigma"] = m.noise_sigma;
  j["max_flow_magnitude"] = m.max_flow_magnitude;
  j["last_frame_flow_zero"] = true;
  j["shapes"] = {{"rgb", {m.frames, m.height, m.width, 3}},
                 {"depth", {m.frames, m.height, m.width}},
                 {"flow", {m.frames, m.height, m.width, 2}},
                 {"masks", {m.frames, m.height, m.width}},
                 {"boxes", {m.frames, m.box_slots, 4}}};
  json vids = json::array();
  for (const auto& v : m.videos)
    vids.push_back({{"name", v.name}, {"split", v.split}, {"objects", v.objects},
                    {"seed", v.seed}});
  j["videos"] = vids;
  harness::write_text_file(config.out / "manifest.json", j.dump(2) + "\n");
  return m;
}

Dataset::Dataset(const std::filesystem::path& root) : root_(root) {
  const auto text = harness::read_text_file(root / "manifest.json");
  json j = json::parse(text);
  manifest_.regime = j.at("regime").get<std::string>();
  manifest_.seed = j.at("seed").get<std::uint64_t>();
  manifest_.frames = j.at("frames").get<int>();
  manifest_.height = j.at("height").get<int>();
  manifest_.width = j.at("width").get<int>();
  manifest_.box_slots = j.at("box_slots").get<int>();
  manifest_.sparse_density = j.at("sparse_density").get<double>();
  manifest_.noise_sigma = j.at("noise_sigma").get<double>();
  manifest_.max_flow_magnitude = j.at("max_flow_magnitude").get<double>();
  for (const auto& v : j.at("videos"))
    manifest_.videos.push_back({v.at("name").get<std::string>(),
                                v.at("split").get<std::string>(),
                                v.at("objects").get<int>(),
                                v.at("seed").get<std::uint64_t>()});
}

VideoSample Dataset::load_video(int index) const {
  if (index < 0 || index >= video_count())
    throw ParameterError("video index " + std::to_string(index) + " out of range");
  const auto dir = root_ / manifest_.videos[static_cast<std::size_t>(index)].name;
  VideoSample v;
  v.frames = manifest_.frames;
  v.height = manifest_.height;
  v.width = manifest_.width;
  v.box_slots = manifest_.box_slots;
  Shape sh;
  v.rgb = harness::read_tensor_f32(dir / "rgb.bin", &sh);
  v.depth = harness::read_tensor_f32(dir / "depth.bin", &sh);
  v.flow = harness::read_tensor_f32(dir / "flow.bin", &sh);
  v.masks = harness::read_tensor_i32(dir / "masks.bin", &sh);
  v.boxes = harness::read_tensor_f32(dir / "boxes.bin", &sh);
  for (const auto& r : harness::read_sparse(dir / "sparse.bin"))
    v.sparse.push_back({r.frame, r.row, r.col, r.dist});
  return v;
}

}  // namespace savipp::scenegen
