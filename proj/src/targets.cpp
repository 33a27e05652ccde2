#include "savipp/targets/targets.hpp"

#include <cmath>

namespace savipp::targets {

double encode_depth_value(double d) {
  if (d < 0.0) throw DataError("negative depth " + std::to_string(d));
  return std::log1p(d);
}

double decode_depth_value(double x) { return std::expm1(x); }

float encode_depth_value(float d) {
  if (d < 0.0f) throw DataError("negative depth " + std::to_string(d));
  return std::log1p(d);
}

float decode_depth_value(float x) { return std::expm1(x); }

std::vector<float> encode_depth(const std::vector<float>& depth) {
  std::vector<float> out(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) out[i] = encode_depth_value(depth[i]);
  return out;
}

std::vector<float> decode_depth(const std::vector<float>& encoded) {
  std::vector<float> out(encoded.size());
  for (std::size_t i = 0; i < encoded.size(); ++i) out[i] = decode_depth_value(encoded[i]);
  return out;
}

void flow_to_rgb_value(float fx, float fy, float max_magnitude, float* rgb) {
  if (!(max_magnitude > 0.0f)) throw ParameterError("max_magnitude must be positive");
  const float mag = std::sqrt(fx * fx + fy * fy);
  const float sat = std::min(1.0f, mag / max_magnitude);
  float angle = std::atan2(fy, fx);
  if (angle < 0) angle += 6.283185307179586f;
  const float h6 = angle / 6.283185307179586f * 6.0f;
  const int sector = std::min(5, static_cast<int>(h6));
  const float f = h6 - sector;
  const float v = 1.0f;
  const float p = v * (1 - sat), q = v * (1 - sat * f), u = v * (1 - sat * (1 - f));
  switch (sector) {
    case 0: rgb[0] = v; rgb[1] = u; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = u; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = u; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

std::vector<float> flow_to_rgb(const std::vector<float>& flow, float max_magnitude) {
  std::vector<float> out(flow.size() / 2 * 3);
  for (std::size_t i = 0; i * 2 < flow.size(); ++i)
    flow_to_rgb_value(flow[i * 2], flow[i * 2 + 1], max_magnitude, out.data() + i * 3);
  return out;
}

TargetBundle assemble_targets(const TargetSelection& selection,
                              const scenegen::VideoSample& sample,
                              bool use_sparse_depth, float max_flow_magnitude) {
  if (!selection.depth && !selection.flow)
    throw ParameterError("target selection must include depth or flow");

  TargetBundle b;
  b.frames = sample.frames;
  b.height = sample.height;
  b.width = sample.width;
  const std::size_t cells = static_cast<std::size_t>(b.frames) * b.height * b.width;
  b.channels = (selection.depth ? 1 : 0) + (selection.flow ? 3 : 0);
  b.values.assign(cells * static_cast<std::size_t>(b.channels), 0.0f);
  b.valid.assign(cells, 1);

  int ch = 0;
  if (selection.depth) {
    b.channel_map.push_back({"depth", ch, ch + 1});
    if (use_sparse_depth) {
      std::fill(b.valid.begin(), b.valid.end(), 0);
      for (const auto& p : sample.sparse) {
        const std::size_t cell = b.cell(static_cast<int>(p.frame),
                                        static_cast<int>(p.row), static_cast<int>(p.col));
        b.values[cell * b.channels + ch] = encode_depth_value(p.dist);
        b.valid[cell] = 1;
      }
    } else {
      for (std::size_t i = 0; i < cells; ++i)
        b.values[i * b.channels + ch] = encode_depth_value(sample.depth[i]);
    }
    ++ch;
  }
  if (selection.flow) {
    b.channel_map.push_back({"flow_rgb", ch, ch + 3});
    float rgb[3];
    for (std::size_t i = 0; i < cells; ++i) {
      flow_to_rgb_value(sample.flow[i * 2], sample.flow[i * 2 + 1], max_flow_magnitude, rgb);
      for (int k = 0; k < 3; ++k) b.values[i * b.channels + ch + k] = rgb[k];
    }
    ++ch;
    // The final frame's flow is zero-filled, not observed; exclude it.
    if (sample.last_frame_flow_zero && b.frames > 0) {
      const std::size_t off = static_cast<std::size_t>(b.frames - 1) * b.height * b.width;
      std::fill(b.valid.begin() + static_cast<std::ptrdiff_t>(off), b.valid.end(), 0);
    }
  }
  return b;
}

}  // namespace savipp::targets
