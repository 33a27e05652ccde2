#pragma once

// Central finite-difference oracle shared by the gradient tests. The oracle
// re-evaluates a scalar-valued builder on perturbed copies of the raw inputs,
// so it never touches the reverse-mode path it is checking.

#include <cmath>
#include <functional>
#include <vector>

#include "savipp/ndgrad/ops.hpp"
#include "savipp/ndgrad/tensor.hpp"

namespace fdcheck {

template <typename T>
struct LeafSpec {
  savipp::Shape shape;
  std::vector<T> data;
};

// builder receives raw value arrays (one per leaf, same order) and must
// return the scalar loss as double.
template <typename T>
using RawLoss = std::function<double(const std::vector<std::vector<T>>&)>;

// Analytic gradients via reverse mode on leaves marked requires_grad.
template <typename T>
std::vector<std::vector<T>> analytic_grads(
    const std::vector<LeafSpec<T>>& leaves,
    const std::function<savipp::ndgrad::Tensor<T>(
        const std::vector<savipp::ndgrad::Tensor<T>>&)>& graph_builder) {
  using savipp::ndgrad::Tensor;
  std::vector<Tensor<T>> ts;
  ts.reserve(leaves.size());
  for (const auto& l : leaves) ts.push_back(Tensor<T>::leaf(l.shape, l.data, true));
  auto loss = graph_builder(ts);
  savipp::ndgrad::backward(loss);
  std::vector<std::vector<T>> grads;
  for (auto& t : ts) grads.push_back(t.has_grad() ? t.grad() : std::vector<T>(t.value().size(), T(0)));
  return grads;
}

template <typename T>
std::vector<std::vector<double>> fd_grads(const std::vector<LeafSpec<T>>& leaves,
                                          const RawLoss<T>& raw_loss, double step) {
  std::vector<std::vector<T>> vals;
  for (const auto& l : leaves) vals.push_back(l.data);
  std::vector<std::vector<double>> grads;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    std::vector<double> g(vals[li].size());
    for (std::size_t i = 0; i < vals[li].size(); ++i) {
      const T orig = vals[li][i];
      vals[li][i] = orig + static_cast<T>(step);
      const double up = raw_loss(vals);
      vals[li][i] = orig - static_cast<T>(step);
      const double dn = raw_loss(vals);
      vals[li][i] = orig;
      g[i] = (up - dn) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// Max relative error between reverse-mode and FD gradients over all leaves.
template <typename T>
double max_grad_rel_err(
    const std::vector<LeafSpec<T>>& leaves,
    const std::function<savipp::ndgrad::Tensor<T>(
        const std::vector<savipp::ndgrad::Tensor<T>>&)>& graph_builder,
    double step = 1e-5) {
  auto an = analytic_grads<T>(leaves, graph_builder);
  RawLoss<T> raw = [&](const std::vector<std::vector<T>>& vals) {
    using savipp::ndgrad::Tensor;
    std::vector<Tensor<T>> ts;
    for (std::size_t i = 0; i < leaves.size(); ++i)
      ts.push_back(Tensor<T>::leaf(leaves[i].shape, vals[i], false));
    return static_cast<double>(graph_builder(ts).item());
  };
  auto fd = fd_grads<T>(leaves, raw, step);
  double worst = 0;
  for (std::size_t li = 0; li < an.size(); ++li)
    for (std::size_t i = 0; i < an[li].size(); ++i)
      worst = std::max(worst, rel_err(static_cast<double>(an[li][i]), fd[li][i]));
  return worst;
}

}  // namespace fdcheck
