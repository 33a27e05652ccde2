#pragma once

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "savipp/common.hpp"
#include "savipp/rng.hpp"

namespace savipp::model {

// Network hyperparameters. Desk defaults keep the full architecture at a
// size that trains on a CPU; the paper-scale values stay reachable through
// the same fields.
struct ModelConfig {
  int height = 64, width = 64;
  int slots = 8;     // K
  int slot_dim = 64; // D
  int target_channels = 1;

  // Encoder: residual CNN (group norm) + optional transformer.
  int enc_root_width = 16;
  std::vector<int> enc_widths = {24, 32, 32, 32};
  std::vector<int> enc_strides = {2, 2, 1, 1};
  int gn_groups = 8;
  bool use_transformer = true;
  int tr_layers = 2;
  int tr_heads = 4;
  int tr_head_dim = 16;
  int tr_mlp_hidden = 256;

  // Corrector (slot attention).
  int cor_qkv = 128;
  int cor_mlp_hidden = 128;
  int cor_iterations = 1;

  // Predictor (transformer block across slots).
  int pred_qkv = 128;
  int pred_heads = 4;
  int pred_mlp_hidden = 256;

  // Spatial broadcast decoder; every up-stage is a stride-2 transposed conv.
  int dec_grid_h = 8, dec_grid_w = 8;
  std::vector<int> dec_widths = {32, 32, 16};

  int readout_hidden = 256;

  int overall_stride() const {
    int s = 1;
    for (int v : enc_strides) s *= v;
    return s;
  }
  int grid_h() const { return height / overall_stride(); }
  int grid_w() const { return width / overall_stride(); }
  int tokens() const { return grid_h() * grid_w(); }

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  std::uint64_t digest() const;

  // 16x16 configuration for gradient checks and property tests.
  static ModelConfig tiny(int slots = 2, int slot_dim = 8);
  // Paper-scale field values (128x128, stride 8, 4 transformer blocks, 256
  // wide corrector/predictor, 1024 MLPs, 24 slots, 128 slot dim).
  static ModelConfig paper_scale();
};

}  // namespace savipp::model
