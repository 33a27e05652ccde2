#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "savipp/common.hpp"
#include "savipp/scenegen/scene.hpp"

namespace savipp::targets {

struct ChannelSpan {
  std::string name;
  int begin = 0;
  int end = 0;  // half-open
};

// Per-video prediction targets with a shared per-pixel validity plane. When
// several modalities participate, validity is their conjunction (sparse depth
// restricts everything; the zero-filled final flow frame invalidates the last
// frame in flow modes).
struct TargetBundle {
  int frames = 0, height = 0, width = 0, channels = 0;
  std::vector<float> values;        // T*H*W*C
  std::vector<std::uint8_t> valid;  // T*H*W
  std::vector<ChannelSpan> channel_map;

  std::size_t cell(int t, int r, int c) const {
    return (static_cast<std::size_t>(t) * height + r) * width + c;
  }
};

struct TargetSelection {
  bool depth = true;
  bool flow = false;
};

// log(1 + d) transform of Euclidean depth.
double encode_depth_value(double d);
double decode_depth_value(double x);
float encode_depth_value(float d);
float decode_depth_value(float x);
std::vector<float> encode_depth(const std::vector<float>& depth);
std::vector<float> decode_depth(const std::vector<float>& encoded);

// Direction -> hue on the 6-sector color wheel, saturation min(1,|f|/max),
// value 1.
void flow_to_rgb_value(float fx, float fy, float max_magnitude, float* rgb);
std::vector<float> flow_to_rgb(const std::vector<float>& flow, float max_magnitude);

// Channels concatenated in fixed order (depth, flow_rgb). use_sparse_depth
// switches the depth channel to the sample's sparse points.
TargetBundle assemble_targets(const TargetSelection& selection,
                              const scenegen::VideoSample& sample,
                              bool use_sparse_depth, float max_flow_magnitude);

}  // namespace savipp::targets
