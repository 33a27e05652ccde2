#pragma once

#include <concepts>
#include <vector>

#include "savipp/ndgrad/ops.hpp"
#include "savipp/targets/targets.hpp"

namespace savipp::train {

// Extracts frame t of a bundle as (H*W) x C target values plus per-pixel
// validity.
inline void bundle_frame(const targets::TargetBundle& bundle, int t,
                         std::vector<float>* values, std::vector<std::uint8_t>* valid) {
  const std::size_t cells = static_cast<std::size_t>(bundle.height) * bundle.width;
  const std::size_t c = static_cast<std::size_t>(bundle.channels);
  values->assign(bundle.values.begin() + static_cast<std::ptrdiff_t>(t * cells * c),
                 bundle.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * cells * c));
  valid->assign(bundle.valid.begin() + static_cast<std::ptrdiff_t>(t * cells),
                bundle.valid.begin() + static_cast<std::ptrdiff_t>((t + 1) * cells));
}

// Mean squared error over valid (pixel, channel) pairs per frame, averaged
// over frames that carry any valid point. Frames without signal contribute
// nothing; a fully signal-free clip yields a constant zero.
template <std::floating_point T>
ndgrad::Tensor<T> masked_l2_loss(const std::vector<ndgrad::Tensor<T>>& frame_predictions,
                                 const targets::TargetBundle& bundle) {
  if (static_cast<int>(frame_predictions.size()) != bundle.frames)
    throw ContractError("prediction frame count " +
                        std::to_string(frame_predictions.size()) + " vs bundle frames " +
                        std::to_string(bundle.frames));
  ndgrad::Tensor<T> total;
  int used = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;
  for (int t = 0; t < bundle.frames; ++t) {
    bundle_frame(bundle, t, &values, &valid);
    bool any = false;
    for (auto v : valid)
      if (v) any = true;
    if (!any) continue;
    std::vector<T> target(values.begin(), values.end());
    auto l = ndgrad::masked_mse(frame_predictions[static_cast<std::size_t>(t)], target, valid);
    total = used == 0 ? l : ndgrad::add(total, l);
    ++used;
  }
  if (used == 0) return ndgrad::Tensor<T>::scalar(T(0));
  return ndgrad::scale(total, T(1) / static_cast<T>(used));
}

// Huber box loss (delta 1, mean over elements); quadratic inside [-1, 1].
template <std::floating_point T>
ndgrad::Tensor<T> huber_loss(const ndgrad::Tensor<T>& pred_boxes,
                             const std::vector<T>& target_boxes) {
  return ndgrad::huber_mean(pred_boxes, target_boxes);
}

}  // namespace savipp::train
