#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "savipp/harness/io.hpp"
#include "savipp/model/model.hpp"
#include "savipp/rng.hpp"
#include "savipp/scenegen/dataset.hpp"
#include "savipp/train/loop.hpp"
#include "savipp/train/losses.hpp"
#include "savipp/train/optimizer.hpp"

using namespace savipp;
using namespace savipp::train;
using namespace savipp::ndgrad;
namespace fs = std::filesystem;

namespace {

targets::TargetBundle bundle_1d(std::vector<float> values, std::vector<std::uint8_t> valid) {
  targets::TargetBundle b;
  b.frames = 1;
  b.height = 1;
  b.width = static_cast<int>(valid.size());
  b.channels = static_cast<int>(values.size() / valid.size());
  b.values = std::move(values);
  b.valid = std::move(valid);
  return b;
}

fs::path temp_dir(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("savipp_train_" + tag);
  fs::remove_all(p);
  return p;
}

scenegen::DatasetConfig small_dataset(const fs::path& out, std::uint64_t seed,
                                      scenegen::Regime regime) {
  scenegen::DatasetConfig cfg;
  cfg.videos = 6;
  cfg.val_videos = 2;
  cfg.regime = regime;
  cfg.height = cfg.width = 32;
  cfg.frames = 5;
  cfg.max_objects = 3;
  cfg.box_slots = 4;
  cfg.sparse_density = 0.2;
  cfg.seed = seed;
  cfg.out = out;
  return cfg;
}

model::ModelConfig model_32(int slots = 4, int dim = 16) {
  model::ModelConfig c;
  c.height = c.width = 32;
  c.slots = slots;
  c.slot_dim = dim;
  c.enc_root_width = 8;
  c.enc_widths = {8, 16};
  c.enc_strides = {2, 2};
  c.gn_groups = 4;
  c.tr_layers = 1;
  c.tr_heads = 2;
  c.tr_head_dim = 8;
  c.tr_mlp_hidden = 32;
  c.cor_qkv = 16;
  c.cor_mlp_hidden = 16;
  c.pred_qkv = 16;
  c.pred_heads = 2;
  c.pred_mlp_hidden = 32;
  c.dec_grid_h = c.dec_grid_w = 8;
  c.dec_widths = {16, 8};
  c.readout_hidden = 32;
  return c;
}

}  // namespace

TEST_CASE("masked_l2_loss closed forms") {
  auto pred = Tensor<float>::leaf({2, 1}, {1.0f, 2.0f});
  auto b = bundle_1d({0.0f, 0.0f}, {1, 0});
  auto l = masked_l2_loss<float>({pred}, b);
  CHECK(l.item() == 1.0f);

  auto b2 = bundle_1d({1.0f, 2.0f}, {1, 1});
  CHECK(masked_l2_loss<float>({pred}, b2).item() == 0.0f);
}

TEST_CASE("masked loss is bit-invariant to invalid positions") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<float> values(12), pred(12);
    std::vector<std::uint8_t> valid(6);
    for (auto& v : values) v = static_cast<float>(rng.uniform(-2, 2));
    for (auto& v : pred) v = static_cast<float>(rng.uniform(-2, 2));
    for (auto& v : valid) v = rng.uniform() < 0.5 ? 1 : 0;
    auto b = bundle_1d(values, valid);
    b.channels = 2;
    b.width = 6;
    const float base =
        masked_l2_loss<float>({Tensor<float>::leaf({6, 2}, pred)}, b).item();
    auto perturbed = pred;
    for (int i = 0; i < 6; ++i)
      if (!valid[static_cast<std::size_t>(i)]) {
        perturbed[static_cast<std::size_t>(i) * 2] = static_cast<float>(rng.uniform(-1e5, 1e5));
        perturbed[static_cast<std::size_t>(i) * 2 + 1] = static_cast<float>(rng.uniform(-1e5, 1e5));
      }
    const float after =
        masked_l2_loss<float>({Tensor<float>::leaf({6, 2}, perturbed)}, b).item();
    CHECK(std::memcmp(&base, &after, sizeof(float)) == 0);
  }
}

TEST_CASE("frames without signal carry zero weight") {
  targets::TargetBundle b;
  b.frames = 2;
  b.height = 1;
  b.width = 2;
  b.channels = 1;
  b.values = {0, 0, 0, 0};
  b.valid = {1, 1, 0, 0};  // second frame has no signal
  auto p0 = Tensor<float>::leaf({2, 1}, {2.0f, 2.0f});
  auto p1 = Tensor<float>::leaf({2, 1}, {100.0f, -50.0f});
  CHECK(masked_l2_loss<float>({p0, p1}, b).item() == 4.0f);
}

TEST_CASE("huber closed forms") {
  auto z = Tensor<float>::leaf({1}, {0.0f});
  CHECK(huber_loss(z, {0.0f}).item() == 0.0f);
  auto h = Tensor<float>::leaf({1}, {0.5f});
  CHECK(huber_loss(h, {0.0f}).item() == doctest::Approx(0.125));
  auto two = Tensor<float>::leaf({1}, {2.0f});
  CHECK(huber_loss(two, {0.0f}).item() == doctest::Approx(1.5));
}

TEST_CASE("learning rate schedule endpoints and continuity") {
  const int warmup = 2500, total = 100000;
  const double peak = 2e-4;
  CHECK(lr_schedule(0, warmup, total, peak) == 0.0);
  CHECK(lr_schedule(warmup, warmup, total, peak) == doctest::Approx(peak).epsilon(1e-12));
  const int mid = warmup + (total - warmup) / 2;
  CHECK(lr_schedule(mid, warmup, total, peak) == doctest::Approx(1e-4).epsilon(1e-9));
  CHECK(std::abs(lr_schedule(total, warmup, total, peak)) < 1e-9);

  const double bound =
      peak / std::min<double>(warmup, (total - warmup) / 3.14159265358979323846);
  for (int s = 0; s < total; s += 97) {
    const double d = std::abs(lr_schedule(s, warmup, total, peak) -
                              lr_schedule(s + 1, warmup, total, peak));
    CHECK(d <= bound * (1 + 1e-12));
  }
}

TEST_CASE("global norm clipping") {
  std::vector<std::vector<float>> g = {{0.3f}, {0.4f}};
  const double norm = clip_global_norm(&g, 0.05);
  CHECK(norm == doctest::Approx(0.5));
  CHECK(g[0][0] == doctest::Approx(0.03));
  CHECK(g[1][0] == doctest::Approx(0.04));

  std::vector<std::vector<float>> small = {{0.006f}, {0.008f}};
  clip_global_norm(&small, 0.05);
  CHECK(small[0][0] == 0.006f);
  CHECK(small[1][0] == 0.008f);

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<float>> grads(3);
    for (auto& v : grads) {
      v.resize(static_cast<std::size_t>(rng.uniform_int(1, 8)));
      for (auto& x : v) x = static_cast<float>(rng.uniform(-3, 3));
    }
    clip_global_norm(&grads, 0.05);
    double sq = 0;
    for (const auto& v : grads)
      for (float x : v) sq += static_cast<double>(x) * x;
    CHECK(std::sqrt(sq) <= 0.05 + 1e-9);
  }
}

TEST_CASE("adam basics and convex quadratic convergence") {
  model::ParamStore<float> store;
  store.add("x", {4}, {0.0f, 0.0f, 0.0f, 0.0f});
  AdamState<float> state(store);
  adam_step(&store, {{0.0f, 0.0f, 0.0f, 0.0f}}, &state, 0.1);
  for (float v : store.at("x").value) CHECK(v == 0.0f);

  // First update magnitude is ~lr per coordinate after bias correction.
  model::ParamStore<float> s2;
  s2.add("x", {2}, {1.0f, -2.0f});
  AdamState<float> st2(s2);
  adam_step(&s2, {{0.5f, -3.0f}}, &st2, 0.01);
  CHECK(s2.at("x").value[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-4));
  CHECK(s2.at("x").value[1] == doctest::Approx(-2.0f + 0.01f).epsilon(1e-4));

  // f(x) = sum c_i (x_i - a_i)^2 with a cosine-decayed schedule.
  Rng rng(3);
  const int n = 8;
  std::vector<float> a(n), c(n);
  for (int i = 0; i < n; ++i) {
    a[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform(-1, 1));
    c[static_cast<std::size_t>(i)] = static_cast<float>(rng.uniform(0.5, 2.0));
  }
  model::ParamStore<float> q;
  q.add("x", {n}, std::vector<float>(static_cast<std::size_t>(n), 0.0f));
  AdamState<float> qs(q);
  const int steps = 200;
  for (int s = 0; s < steps; ++s) {
    std::vector<float> grad(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      grad[static_cast<std::size_t>(i)] =
          2 * c[static_cast<std::size_t>(i)] *
          (q.at("x").value[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(i)]);
    adam_step(&q, {grad}, &qs, lr_schedule(s, 10, steps, 0.2));
  }
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    const double d = q.at("x").value[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(i)];
    loss += c[static_cast<std::size_t>(i)] * d * d;
  }
  CHECK(loss < 1e-6);
}

TEST_CASE("slice_video keeps geometry and flags the true video end") {
  auto dsdir = temp_dir("slice");
  scenegen::generate_dataset(small_dataset(dsdir, 21, scenegen::Regime::kStaticCameraMovingObjects));
  scenegen::Dataset ds(dsdir);
  auto v = ds.load_video(0);
  auto mid = slice_video(v, 1, 3);
  CHECK(mid.frames == 3);
  CHECK_FALSE(mid.last_frame_flow_zero);
  auto tail = slice_video(v, 2, 3);
  CHECK(tail.last_frame_flow_zero);
  for (const auto& p : mid.sparse) CHECK(p.frame < 3);
  // Frame 1 of the slice equals frame 2 of the video.
  const std::size_t cells = 32 * 32;
  for (std::size_t i = 0; i < cells; ++i)
    CHECK(mid.depth[cells + i] == v.depth[2 * cells + i]);
  fs::remove_all(dsdir);
}

TEST_CASE("training smoke: logs, checkpoints, determinism") {
  auto dsdir = temp_dir("loop_ds");
  scenegen::generate_dataset(small_dataset(dsdir, 31, scenegen::Regime::kStaticCameraMovingObjects));
  scenegen::Dataset ds(dsdir);

  TrainConfig tc;
  tc.total_steps = 3;
  tc.warmup_steps = 1;
  tc.batch_size = 2;
  tc.seq_len = 3;
  tc.checkpoint_every = 2;
  tc.seed = 5;

  auto run = [&](const fs::path& out) {
    model::SaviModel<float> m(model_32(), model::ModelComponents::full(true), 77);
    TrainConfig cfg = tc;
    cfg.out_dir = out;
    return train_loop(&m, ds, cfg);
  };
  auto out_a = temp_dir("loop_a");
  auto out_b = temp_dir("loop_b");
  auto sa = run(out_a);
  auto sb = run(out_b);
  CHECK(sa.loss_target.size() == 3);
  CHECK(fs::exists(out_a / "checkpoint_000000.svck"));
  CHECK(fs::exists(out_a / "checkpoint_000002.svck"));
  CHECK(fs::exists(out_a / "checkpoint_final.svck"));
  CHECK(harness::files_identical(out_a / "loss_log.csv", out_b / "loss_log.csv"));
  CHECK(harness::files_identical(out_a / "checkpoint_final.svck",
                                 out_b / "checkpoint_final.svck"));

  // Zero-step run: initial checkpoint only, header-only log.
  auto out_z = temp_dir("loop_z");
  model::SaviModel<float> mz(model_32(), model::ModelComponents::full(true), 77);
  TrainConfig zc = tc;
  zc.total_steps = 0;
  zc.warmup_steps = 0;
  zc.out_dir = out_z;
  auto sz = train_loop(&mz, ds, zc);
  CHECK(fs::exists(out_z / "checkpoint_000000.svck"));
  CHECK_FALSE(fs::exists(out_z / "checkpoint_final.svck"));
  CHECK(harness::read_text_file(out_z / "loss_log.csv") ==
        "step,lr,loss_target,loss_readout,grad_norm\n");
  CHECK(sz.final_checkpoint == out_z / "checkpoint_000000.svck");

  fs::remove_all(dsdir);
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  fs::remove_all(out_z);
}

TEST_CASE("supervised variant trains the readout without a decoder") {
  auto dsdir = temp_dir("sup_ds");
  scenegen::generate_dataset(small_dataset(dsdir, 41, scenegen::Regime::kStaticCameraMovingObjects));
  scenegen::Dataset ds(dsdir);

  model::SaviModel<float> m(model_32(), model::ModelComponents::supervised(), 99);
  TrainConfig tc;
  tc.total_steps = 30;
  tc.warmup_steps = 3;
  tc.peak_lr = 1e-3;
  tc.batch_size = 2;
  tc.seq_len = 3;
  tc.augment = false;
  tc.checkpoint_every = 0;
  tc.seed = 6;
  tc.out_dir = temp_dir("sup_out");
  auto s = train_supervised_variant(&m, ds, tc);

  for (const auto& name : model::checkpoint_record_names(s.final_checkpoint))
    CHECK(name.rfind("decoder/", 0) != 0);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) {
    head += s.loss_readout[static_cast<std::size_t>(i)];
    tail += s.loss_readout[s.loss_readout.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(tail < head);

  // The full loop refuses a decoderless model and vice versa.
  TrainConfig bad = tc;
  bad.out_dir = temp_dir("sup_bad");
  CHECK_THROWS_AS(train_loop(&m, ds, bad), ContractError);
  model::SaviModel<float> full(model_32(), model::ModelComponents::full(true), 99);
  CHECK_THROWS_AS(train_supervised_variant(&full, ds, bad), ContractError);

  fs::remove_all(dsdir);
  fs::remove_all(tc.out_dir);
  fs::remove_all(bad.out_dir);
}
