#include "savipp/train/loop.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "savipp/augment/augment.hpp"
#include "savipp/harness/io.hpp"
#include "savipp/scenegen/render.hpp"
#include "savipp/threads.hpp"
#include "savipp/train/losses.hpp"
#include "savipp/train/optimizer.hpp"

namespace savipp::train {

void TrainConfig::validate() const {
  if (total_steps < 0) throw ParameterError("total_steps must be >= 0");
  if (total_steps > 0 && warmup_steps >= total_steps)
    throw ParameterError("warmup_steps must be smaller than total_steps");
  if (!(clip_norm > 0)) throw ParameterError("clip_norm must be positive");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  if (seq_len < 1) throw ParameterError("sub-sequence length must be >= 1");
  if (!selection.depth && !selection.flow)
    throw ParameterError("target selection must include depth or flow");
  if (out_dir.empty()) throw ParameterError("training needs an output directory");
}

scenegen::VideoSample slice_video(const scenegen::VideoSample& v, int start, int len) {
  if (start < 0 || len < 1 || start + len > v.frames)
    throw ParameterError("sub-sequence [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside video of " +
                         std::to_string(v.frames) + " frames");
  scenegen::VideoSample out;
  out.frames = len;
  out.height = v.height;
  out.width = v.width;
  out.box_slots = v.box_slots;
  const std::size_t cells = static_cast<std::size_t>(v.height) * v.width;
  auto copy_span = [&](const auto& src, auto* dst, std::size_t per_frame) {
    dst->assign(src.begin() + static_cast<std::ptrdiff_t>(start * per_frame),
                src.begin() + static_cast<std::ptrdiff_t>((start + len) * per_frame));
  };
  copy_span(v.rgb, &out.rgb, cells * 3);
  copy_span(v.depth, &out.depth, cells);
  copy_span(v.flow, &out.flow, cells * 2);
  copy_span(v.masks, &out.masks, cells);
  copy_span(v.boxes, &out.boxes, static_cast<std::size_t>(v.box_slots) * 4);
  for (const auto& p : v.sparse)
    if (p.frame >= static_cast<std::uint32_t>(start) &&
        p.frame < static_cast<std::uint32_t>(start + len)) {
      auto q = p;
      q.frame -= static_cast<std::uint32_t>(start);
      out.sparse.push_back(q);
    }
  // The window's final frame has real flow unless it is the video's end.
  out.last_frame_flow_zero = (start + len == v.frames);
  return out;
}

namespace {

struct ElementResult {
  double loss_target = 0;
  double loss_readout = 0;
  bool has_target = false;
  std::vector<std::vector<float>> grads;
};

struct ElementPlan {
  int video = 0;
  int start = 0;
  augment::CropParams crop;
  std::uint64_t noise_seed = 0;
};

ElementResult run_element(const model::SaviModel<float>& m,
                          const scenegen::VideoSample& full, const ElementPlan& plan,
                          const TrainConfig& cfg, double max_flow, bool supervised) {
  auto sample = slice_video(full, plan.start, cfg.seq_len);
  if (!plan.crop.is_identity() || plan.crop.out_h != sample.height ||
      plan.crop.out_w != sample.width)
    sample = augment::apply_to_sample(sample, plan.crop);
  if (cfg.sparse_depth && cfg.noise_sigma > 0)
    sample.sparse = scenegen::add_depth_noise(
        std::move(sample.sparse), scenegen::NoiseSpec{cfg.noise_sigma, plan.noise_seed});

  const int K = m.config().slots;
  model::Binding<float> p(m.params());
  ndgrad::Tensor<float> slots;
  if (cfg.conditional) {
    std::vector<float> first(sample.boxes.begin(),
                             sample.boxes.begin() + static_cast<std::ptrdiff_t>(K) * 4);
    slots = m.init_slots_conditional(p, first);
  } else {
    slots = m.init_slots_learned(p);
  }
  auto frames = m.unroll(p, sample.rgb, sample.frames, slots,
                         /*gradient_barrier=*/!supervised);

  ElementResult out;
  ndgrad::Tensor<float> readout;
  for (int t = 0; t < sample.frames; ++t) {
    std::vector<float> btarget(
        sample.boxes.begin() + static_cast<std::ptrdiff_t>(t) * K * 4,
        sample.boxes.begin() + static_cast<std::ptrdiff_t>(t + 1) * K * 4);
    auto h = huber_loss(frames[static_cast<std::size_t>(t)].boxes, btarget);
    readout = t == 0 ? h : ndgrad::add(readout, h);
  }
  readout = ndgrad::scale(readout, 1.0f / static_cast<float>(sample.frames));

  ndgrad::Tensor<float> total = readout;
  if (!supervised) {
    auto bundle = targets::assemble_targets(cfg.selection, sample, cfg.sparse_depth,
                                            static_cast<float>(max_flow));
    std::vector<ndgrad::Tensor<float>> preds;
    preds.reserve(static_cast<std::size_t>(sample.frames));
    for (int t = 0; t < sample.frames; ++t)
      preds.push_back(frames[static_cast<std::size_t>(t)].decode.prediction);
    auto target_loss = masked_l2_loss(preds, bundle);
    out.loss_target = target_loss.item();
    out.has_target = true;
    if (target_loss.requires_grad()) total = ndgrad::add(target_loss, readout);
  }
  out.loss_readout = readout.item();
  ndgrad::backward(total);
  out.grads = p.collect_grads();
  return out;
}

TrainSummary run_training(model::SaviModel<float>* m, const scenegen::Dataset& data,
                          const TrainConfig& cfg, bool supervised) {
  cfg.validate();
  if (supervised && !cfg.conditional)
    throw ParameterError("the supervised variant trains with conditional init only");
  const auto train_idx = data.manifest().split_indices("train");
  if (train_idx.empty()) throw DataError("dataset has no training videos");
  if (data.manifest().frames < cfg.seq_len)
    throw ParameterError("videos are shorter than the training sub-sequence");

  std::filesystem::create_directories(cfg.out_dir);
  std::vector<scenegen::VideoSample> videos;
  videos.reserve(train_idx.size());
  for (int i : train_idx) videos.push_back(data.load_video(i));
  const double max_flow = data.manifest().max_flow_magnitude;

  model::save_checkpoint(cfg.out_dir / "checkpoint_000000.svck", m->params(),
                         m->config().digest());

  TrainSummary summary;
  summary.loss_log = cfg.out_dir / "loss_log.csv";
  std::ofstream log(summary.loss_log, std::ios::trunc);
  if (!log) throw IoError("cannot open loss log " + summary.loss_log.string());
  log << "step,lr,loss_target,loss_readout,grad_norm\n";

  AdamState<float> opt(m->params());
  Rng sampler(derive_seed(cfg.seed, 0x73616d70ULL, 0));

  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<ElementPlan> plans(static_cast<std::size_t>(cfg.batch_size));
    for (auto& plan : plans) {
      plan.video = train_idx.empty() ? 0
                                     : static_cast<int>(sampler.uniform_int(
                                           0, static_cast<std::int64_t>(videos.size()) - 1));
      plan.start = static_cast<int>(
          sampler.uniform_int(0, data.manifest().frames - cfg.seq_len));
      if (cfg.augment) {
        Rng crop_rng(sampler.next());
        plan.crop = augment::sample_crop(crop_rng, data.manifest().height,
                                         data.manifest().width, cfg.min_cover);
      } else {
        plan.crop = augment::identity_crop(data.manifest().height, data.manifest().width);
      }
      plan.noise_seed = sampler.next();
    }

    std::vector<ElementResult> results(static_cast<std::size_t>(cfg.batch_size));
    parallel_for(cfg.batch_size, [&](std::int64_t b) {
      results[static_cast<std::size_t>(b)] =
          run_element(*m, videos[static_cast<std::size_t>(plans[static_cast<std::size_t>(b)].video)],
                      plans[static_cast<std::size_t>(b)], cfg, max_flow, supervised);
    });

    double loss_target = 0, loss_readout = 0;
    std::vector<std::vector<float>> grads = std::move(results[0].grads);
    loss_target += results[0].loss_target;
    loss_readout += results[0].loss_readout;
    for (int b = 1; b < cfg.batch_size; ++b) {
      const auto& r = results[static_cast<std::size_t>(b)];
      loss_target += r.loss_target;
      loss_readout += r.loss_readout;
      for (std::size_t i = 0; i < grads.size(); ++i)
        for (std::size_t j = 0; j < grads[i].size(); ++j)
          grads[i][j] += r.grads[i][j];
    }
    const float inv_batch = 1.0f / static_cast<float>(cfg.batch_size);
    for (auto& g : grads)
      for (auto& v : g) v *= inv_batch;
    loss_target /= cfg.batch_size;
    loss_readout /= cfg.batch_size;

    if (!std::isfinite(loss_target) || !std::isfinite(loss_readout))
      throw DataError("non-finite loss at step " + std::to_string(step));
    const double grad_norm = clip_global_norm(&grads, cfg.clip_norm);
    if (!std::isfinite(grad_norm))
      throw DataError("non-finite gradient norm at step " + std::to_string(step));
    const double lr = lr_schedule(step, cfg.warmup_steps, cfg.total_steps, cfg.peak_lr);
    adam_step(&m->params(), grads, &opt, lr);

    char row[160];
    std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,%.9g\n", step, lr, loss_target,
                  loss_readout, grad_norm);
    log << row;
    summary.loss_target.push_back(loss_target);
    summary.loss_readout.push_back(loss_readout);

    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.svck", step + 1);
      model::save_checkpoint(cfg.out_dir / name, m->params(), m->config().digest());
    }
  }
  log.close();

  if (cfg.total_steps > 0) {
    summary.final_checkpoint = cfg.out_dir / "checkpoint_final.svck";
    model::save_checkpoint(summary.final_checkpoint, m->params(), m->config().digest());
  } else {
    summary.final_checkpoint = cfg.out_dir / "checkpoint_000000.svck";
  }
  return summary;
}

}  // namespace

TrainSummary train_loop(model::SaviModel<float>* m, const scenegen::Dataset& data,
                        const TrainConfig& config) {
  if (!m->components().decoder)
    throw ContractError("train_loop needs the decoder; use the supervised variant");
  return run_training(m, data, config, /*supervised=*/false);
}

TrainSummary train_supervised_variant(model::SaviModel<float>* m,
                                      const scenegen::Dataset& data,
                                      const TrainConfig& config) {
  if (m->components().decoder)
    throw ContractError("the supervised variant must be built without a decoder");
  return run_training(m, data, config, /*supervised=*/true);
}

}  // namespace savipp::train
