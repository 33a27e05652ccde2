#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "savipp/scenegen/scene.hpp"

namespace savipp::scenegen {

struct DatasetConfig {
  int videos = 8;
  int val_videos = 0;
  Regime regime = Regime::kStaticCameraMovingObjects;
  int height = 64;
  int width = 64;
  int frames = 8;
  int max_objects = 6;
  int box_slots = 8;       // K
  double sparse_density = 0.05;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct VideoEntry {
  std::string name;
  std::string split;  // "train" | "val"
  int objects = 0;
  std::uint64_t seed = 0;
};

struct Manifest {
  std::string regime;
  std::uint64_t seed = 0;
  int frames = 0, height = 0, width = 0, box_slots = 0;
  double sparse_density = 0.0;
  double noise_sigma = 0.0;
  double max_flow_magnitude = 1.0;
  std::vector<VideoEntry> videos;

  std::vector<int> split_indices(const std::string& split) const;
};

// Writes one directory per video (rgb/depth/flow/masks/boxes/sparse tensors)
// plus manifest.json. Byte-identical for identical config+seed.
Manifest generate_dataset(const DatasetConfig& config);

class Dataset {
 public:
  explicit Dataset(const std::filesystem::path& root);

  const Manifest& manifest() const { return manifest_; }
  int video_count() const { return static_cast<int>(manifest_.videos.size()); }
  VideoSample load_video(int index) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  Manifest manifest_;
};

}  // namespace savipp::scenegen
