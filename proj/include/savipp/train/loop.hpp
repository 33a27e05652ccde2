#pragma once

#include <filesystem>
#include <vector>

#include "savipp/model/model.hpp"
#include "savipp/scenegen/dataset.hpp"
#include "savipp/targets/targets.hpp"

namespace savipp::train {

struct TrainConfig {
  int total_steps = 2000;
  int warmup_steps = 100;
  double peak_lr = 2e-4;
  int batch_size = 4;
  double clip_norm = 0.05;
  int seq_len = 6;
  targets::TargetSelection selection{true, false};
  bool sparse_depth = false;
  double noise_sigma = 0.0;  // train-time noise on sparse distances
  bool augment = true;
  double min_cover = 0.2;
  bool conditional = true;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  std::filesystem::path out_dir;

  void validate() const;
};

struct TrainSummary {
  std::vector<double> loss_target;
  std::vector<double> loss_readout;
  std::filesystem::path loss_log;
  std::filesystem::path final_checkpoint;
};

// Batched sub-sequence training: sample, augment, assemble targets, unroll,
// masked L2 + Huber readout, clip, Adam, cosine-warmup schedule. Writes a
// CSV loss log and periodic checkpoints into config.out_dir. Deterministic
// in config.seed regardless of worker count.
TrainSummary train_loop(model::SaviModel<float>* m, const scenegen::Dataset& data,
                        const TrainConfig& config);

// Supervised tracking variant: no decoder, Huber readout as the sole
// objective with gradients flowing into the trunk, conditional init only.
TrainSummary train_supervised_variant(model::SaviModel<float>* m,
                                      const scenegen::Dataset& data,
                                      const TrainConfig& config);

// Frame window [start, start+len) of a sample; sparse points rebased, flow
// validity of the final frame preserved only at the true video boundary.
scenegen::VideoSample slice_video(const scenegen::VideoSample& v, int start, int len);

}  // namespace savipp::train
