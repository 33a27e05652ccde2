#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "savipp/model/config.hpp"
#include "savipp/model/params.hpp"
#include "savipp/ndgrad/ops.hpp"

namespace savipp::model {

using ndgrad::Tensor;

// Which parameter groups exist. The supervised variant drops the decoder;
// the bbox propagation baseline keeps only initializer/predictor/readout.
struct ModelComponents {
  bool encoder = true;
  bool corrector = true;
  bool predictor = true;
  bool decoder = true;
  bool readout = true;
  bool conditional_init = true;
  bool learned_init = false;

  static ModelComponents full(bool conditional) {
    ModelComponents m;
    m.conditional_init = conditional;
    m.learned_init = !conditional;
    return m;
  }
  static ModelComponents supervised() {
    ModelComponents m;
    m.decoder = false;
    m.learned_init = false;
    return m;
  }
  static ModelComponents propagation_only() {
    ModelComponents m;
    m.encoder = m.corrector = m.decoder = false;
    m.learned_init = false;
    return m;
  }
};

template <std::floating_point T>
struct DecodeResult {
  Tensor<T> alpha;       // K x (H*W), softmax-normalized over slots per pixel
  Tensor<T> prediction;  // (H*W) x C alpha-composited target
};

template <std::floating_point T>
struct FrameResult {
  Tensor<T> slots;  // K x D, post-corrector
  DecodeResult<T> decode;
  Tensor<T> boxes;  // K x 4 readout
};

// Per-pixel argmax over the slot axis (ties break to the lowest slot index).
template <std::floating_point T>
std::vector<std::int32_t> hard_masks_from_alpha(const std::vector<T>& alpha,
                                                std::int64_t slots, std::int64_t cells) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(cells), 0);
  for (std::int64_t p = 0; p < cells; ++p) {
    T best = alpha[static_cast<std::size_t>(p)];
    std::int32_t arg = 0;
    for (std::int64_t k = 1; k < slots; ++k) {
      const T v = alpha[static_cast<std::size_t>(k * cells + p)];
      if (v > best) {
        best = v;
        arg = static_cast<std::int32_t>(k);
      }
    }
    out[static_cast<std::size_t>(p)] = arg;
  }
  return out;
}

template <std::floating_point T>
class SaviModel {
 public:
  SaviModel(ModelConfig config, ModelComponents components, std::uint64_t seed)
      : cfg_(std::move(config)), comp_(components) {
    cfg_.validate();
    Rng rng(seed);
    if (comp_.conditional_init) build_conditional_init(rng);
    if (comp_.learned_init) build_learned_init(rng);
    if (comp_.encoder) build_encoder(rng);
    if (comp_.corrector) build_corrector(rng);
    if (comp_.predictor) build_predictor(rng);
    if (comp_.decoder) build_decoder(rng);
    if (comp_.readout) build_readout(rng);
    enc_coords_ = coord_grid(cfg_.grid_h(), cfg_.grid_w());
    dec_coords_ = coord_grid(cfg_.dec_grid_h, cfg_.dec_grid_w);
  }

  const ModelConfig& config() const { return cfg_; }
  const ModelComponents& components() const { return comp_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  // Shared per-box MLP from normalized [ymin,xmin,ymax,xmax] coordinates.
  Tensor<T> init_slots_conditional(Binding<T>& p, const std::vector<T>& first_boxes) const {
    if (static_cast<std::int64_t>(first_boxes.size()) != cfg_.slots * 4)
      throw ParameterError("conditional init expects " + std::to_string(cfg_.slots) +
                           " boxes, got " + std::to_string(first_boxes.size() / 4));
    auto boxes = Tensor<T>::leaf({cfg_.slots, 4}, first_boxes);
    auto h = relu(add_bias(matmul(boxes, p("init/cond/fc1/w")), p("init/cond/fc1/b")));
    return add_bias(matmul(h, p("init/cond/fc2/w")), p("init/cond/fc2/b"));
  }

  Tensor<T> init_slots_learned(Binding<T>& p) const { return p("init/learned/slots"); }

  // CNN features before the positional embedding; N x C_cnn.
  Tensor<T> encode_cnn(Binding<T>& p, const std::vector<T>& rgb) const {
    auto x = Tensor<T>::leaf({cfg_.height, cfg_.width, 3}, rgb);
    x = relu(group_norm(add_bias(conv2d(x, p("encoder/root/w"), 1, 1), p("encoder/root/b")),
                        cfg_.gn_groups, p("encoder/root/gn_g"), p("encoder/root/gn_b"),
                        T(kEps)));
    int in_w = cfg_.enc_root_width;
    for (std::size_t i = 0; i < cfg_.enc_widths.size(); ++i) {
      const std::string base = "encoder/block" + std::to_string(i) + "/";
      const int stride = cfg_.enc_strides[i];
      const int out_w = cfg_.enc_widths[i];
      auto y = relu(group_norm(
          add_bias(conv2d(x, p(base + "conv1/w"), stride, 1), p(base + "conv1/b")),
          cfg_.gn_groups, p(base + "gn1_g"), p(base + "gn1_b"), T(kEps)));
      y = group_norm(add_bias(conv2d(y, p(base + "conv2/w"), 1, 1), p(base + "conv2/b")),
                     cfg_.gn_groups, p(base + "gn2_g"), p(base + "gn2_b"), T(kEps));
      Tensor<T> skip = x;
      if (stride != 1 || in_w != out_w)
        skip = add_bias(conv2d(x, p(base + "skip/w"), stride, 0), p(base + "skip/b"));
      x = relu(add(y, skip));
      in_w = out_w;
    }
    return reshape(x, {cfg_.tokens(), in_w});
  }

  // Full per-frame encoder: CNN + positional embedding + projection (+
  // transformer blocks with pre-normalization). Output N x D.
  Tensor<T> encode_frame(Binding<T>& p, const std::vector<T>& rgb) const {
    auto feats = encode_cnn(p, rgb);
    auto coords = Tensor<T>::leaf({cfg_.tokens(), 2}, enc_coords_);
    feats = add(feats, add_bias(matmul(coords, p("encoder/pos/w")), p("encoder/pos/b")));
    auto tokens = relu(add_bias(matmul(feats, p("encoder/proj/w")), p("encoder/proj/b")));
    if (cfg_.use_transformer)
      for (int l = 0; l < cfg_.tr_layers; ++l)
        tokens = transformer_block(p, tokens, "encoder/tr" + std::to_string(l) + "/",
                                   cfg_.tr_heads, cfg_.tr_head_dim, cfg_.tr_mlp_hidden);
    return tokens;
  }

  // Slot attention with softmax over the slot axis and renormalization over
  // the inputs, followed by the recurrent update and a residual MLP.
  Tensor<T> slot_attention_step(Binding<T>& p, Tensor<T> slots, const Tensor<T>& features,
                                int iterations) const {
    if (iterations < 1) throw ParameterError("corrector iterations must be >= 1");
    auto inputs = layer_norm(features, p("corrector/input_norm_g"),
                             p("corrector/input_norm_b"), T(kEps));
    auto k = add_bias(matmul(inputs, p("corrector/k/w")), p("corrector/k/b"));
    auto v = add_bias(matmul(inputs, p("corrector/v/w")), p("corrector/v/b"));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(cfg_.cor_qkv));
    ndgrad::GruParams<T> gru{p("corrector/gru/wxz"), p("corrector/gru/whz"),
                             p("corrector/gru/bz"),  p("corrector/gru/wxr"),
                             p("corrector/gru/whr"), p("corrector/gru/br"),
                             p("corrector/gru/wxh"), p("corrector/gru/whh"),
                             p("corrector/gru/bh")};
    for (int it = 0; it < iterations; ++it) {
      auto slots_n = layer_norm(slots, p("corrector/slot_norm_g"),
                                p("corrector/slot_norm_b"), T(kEps));
      auto q = add_bias(matmul(slots_n, p("corrector/q/w")), p("corrector/q/b"));
      auto attn = softmax_axis(scale(matmul_nt(q, k), inv_sqrt), 0);
      auto weights = normalize_rows(attn, T(kEps));
      auto updates = matmul(weights, v);
      slots = gru_cell(slots, updates, gru);
      auto hn = layer_norm(slots, p("corrector/mlp_norm_g"), p("corrector/mlp_norm_b"),
                           T(kEps));
      auto h = relu(add_bias(matmul(hn, p("corrector/mlp/fc1/w")), p("corrector/mlp/fc1/b")));
      slots = add(slots, add_bias(matmul(h, p("corrector/mlp/fc2/w")), p("corrector/mlp/fc2/b")));
    }
    return slots;
  }

  // Corrector attention map (softmax over slots), exposed for the
  // normalization contract tests; K x N.
  Tensor<T> corrector_attention(Binding<T>& p, const Tensor<T>& slots,
                                const Tensor<T>& features) const {
    auto inputs = layer_norm(features, p("corrector/input_norm_g"),
                             p("corrector/input_norm_b"), T(kEps));
    auto k = add_bias(matmul(inputs, p("corrector/k/w")), p("corrector/k/b"));
    auto slots_n =
        layer_norm(slots, p("corrector/slot_norm_g"), p("corrector/slot_norm_b"), T(kEps));
    auto q = add_bias(matmul(slots_n, p("corrector/q/w")), p("corrector/q/b"));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(cfg_.cor_qkv));
    return softmax_axis(scale(matmul_nt(q, k), inv_sqrt), 0);
  }

  Tensor<T> predict_next(Binding<T>& p, const Tensor<T>& slots) const {
    return transformer_block(p, slots, "predictor/", cfg_.pred_heads,
                             cfg_.pred_qkv / cfg_.pred_heads, cfg_.pred_mlp_hidden);
  }

  // Spatial broadcast decoder with weights shared across slots. Emits the
  // per-pixel slot softmax and the composited C-channel prediction.
  DecodeResult<T> decode(Binding<T>& p, const Tensor<T>& slots) const {
    const std::int64_t cells = static_cast<std::int64_t>(cfg_.height) * cfg_.width;
    auto coords = Tensor<T>::leaf({cfg_.dec_grid_h * cfg_.dec_grid_w, 2}, dec_coords_);
    auto pos = add_bias(matmul(coords, p("decoder/pos/w")), p("decoder/pos/b"));
    std::vector<Tensor<T>> contents;
    std::vector<Tensor<T>> alpha_rows;
    contents.reserve(static_cast<std::size_t>(cfg_.slots));
    for (int k = 0; k < cfg_.slots; ++k) {
      auto grid = add(tile_rows(slice_rows(slots, k, k + 1), cfg_.dec_grid_h * cfg_.dec_grid_w),
                      pos);
      auto x = reshape(grid, {cfg_.dec_grid_h, cfg_.dec_grid_w, cfg_.slot_dim});
      for (std::size_t i = 0; i < cfg_.dec_widths.size(); ++i) {
        const std::string base = "decoder/up" + std::to_string(i) + "/";
        x = relu(add_bias(conv_transpose2d(x, p(base + "w"), 2), p(base + "b")));
      }
      x = add_bias(conv2d(x, p("decoder/out/w"), 1, 0), p("decoder/out/b"));
      auto flat = reshape(x, {cells, cfg_.target_channels + 1});
      contents.push_back(slice_last(flat, 0, cfg_.target_channels));
      alpha_rows.push_back(reshape(slice_last(flat, cfg_.target_channels,
                                              cfg_.target_channels + 1),
                                   {1, cells}));
    }
    DecodeResult<T> out;
    out.alpha = softmax_axis(concat_rows(alpha_rows), 0);
    for (int k = 0; k < cfg_.slots; ++k) {
      auto weight = reshape(slice_rows(out.alpha, k, k + 1), {cells});
      auto term = scale_cells(contents[static_cast<std::size_t>(k)], weight);
      out.prediction = k == 0 ? term : add(out.prediction, term);
    }
    return out;
  }

  // Per-slot box readout. The gradient barrier keeps the readout loss out of
  // the trunk; the supervised variant disables it.
  Tensor<T> readout_bboxes(Binding<T>& p, const Tensor<T>& slots,
                           bool gradient_barrier = true) const {
    auto in = gradient_barrier ? stop_gradient(slots) : slots;
    auto h = relu(add_bias(matmul(in, p("readout/fc1/w")), p("readout/fc1/b")));
    return add_bias(matmul(h, p("readout/fc2/w")), p("readout/fc2/b"));
  }

  // Corrector -> decode/readout -> predictor loop across the video.
  std::vector<FrameResult<T>> unroll(Binding<T>& p, const std::vector<T>& video,
                                     int frames, Tensor<T> slots,
                                     bool gradient_barrier = true) const {
    if (frames < 1) throw ParameterError("unroll needs at least one frame");
    const std::size_t frame_elems = static_cast<std::size_t>(cfg_.height) * cfg_.width * 3;
    if (video.size() != frame_elems * static_cast<std::size_t>(frames))
      throw DimensionError("video buffer does not match config resolution");
    std::vector<FrameResult<T>> out;
    out.reserve(static_cast<std::size_t>(frames));
    for (int t = 0; t < frames; ++t) {
      std::vector<T> rgb(video.begin() + static_cast<std::ptrdiff_t>(t * frame_elems),
                         video.begin() + static_cast<std::ptrdiff_t>((t + 1) * frame_elems));
      auto features = encode_frame(p, rgb);
      slots = slot_attention_step(p, slots, features, cfg_.cor_iterations);
      FrameResult<T> fr;
      fr.slots = slots;
      if (comp_.decoder) fr.decode = decode(p, slots);
      if (comp_.readout) fr.boxes = readout_bboxes(p, slots, gradient_barrier);
      out.push_back(std::move(fr));
      if (t + 1 < frames) slots = predict_next(p, slots);
    }
    return out;
  }

  static constexpr double kEps = 1e-6;

 private:
  // Pre-norm multi-head self-attention + pre-norm MLP, both residual.
  Tensor<T> transformer_block(Binding<T>& p, const Tensor<T>& x, const std::string& base,
                              int heads, int head_dim, int mlp_hidden) const {
    auto xn = layer_norm(x, p(base + "ln1_g"), p(base + "ln1_b"), T(kEps));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
    Tensor<T> attn_out;
    for (int h = 0; h < heads; ++h) {
      const std::string hb = base + "head" + std::to_string(h) + "/";
      auto q = add_bias(matmul(xn, p(hb + "q_w")), p(hb + "q_b"));
      auto k = add_bias(matmul(xn, p(hb + "k_w")), p(hb + "k_b"));
      auto v = add_bias(matmul(xn, p(hb + "v_w")), p(hb + "v_b"));
      auto att = softmax_axis(scale(matmul_nt(q, k), inv_sqrt), 1);
      auto head = matmul(matmul(att, v), p(hb + "o_w"));
      attn_out = h == 0 ? head : add(attn_out, head);
    }
    auto y = add(x, add_bias(attn_out, p(base + "o_b")));
    auto yn = layer_norm(y, p(base + "ln2_g"), p(base + "ln2_b"), T(kEps));
    auto hmid = relu(add_bias(matmul(yn, p(base + "mlp/fc1/w")), p(base + "mlp/fc1/b")));
    return add(y, add_bias(matmul(hmid, p(base + "mlp/fc2/w")), p(base + "mlp/fc2/b")));
  }

  void add_linear(Rng& rng, const std::string& base, int fan_in, int fan_out) {
    store_.add(base + "w", {fan_in, fan_out},
               glorot_uniform<T>(rng, static_cast<std::int64_t>(fan_in) * fan_out, fan_in,
                                 fan_out));
    store_.add(base + "b", {fan_out}, constant_init<T>(fan_out, T(0)));
  }

  void add_conv(Rng& rng, const std::string& base, int kh, int kw, int cin, int cout) {
    store_.add(base + "w", {kh, kw, cin, cout},
               he_normal<T>(rng, static_cast<std::int64_t>(kh) * kw * cin * cout,
                            static_cast<std::int64_t>(kh) * kw * cin));
    store_.add(base + "b", {cout}, constant_init<T>(cout, T(0)));
  }

  void add_norm(const std::string& gname, const std::string& bname, int c) {
    store_.add(gname, {c}, constant_init<T>(c, T(1)));
    store_.add(bname, {c}, constant_init<T>(c, T(0)));
  }

  void add_transformer_block(Rng& rng, const std::string& base, int dim, int heads,
                             int head_dim, int mlp_hidden) {
    add_norm(base + "ln1_g", base + "ln1_b", dim);
    for (int h = 0; h < heads; ++h) {
      const std::string hb = base + "head" + std::to_string(h) + "/";
      add_linear(rng, hb + "q_", dim, head_dim);
      add_linear(rng, hb + "k_", dim, head_dim);
      add_linear(rng, hb + "v_", dim, head_dim);
      store_.add(hb + "o_w", {head_dim, dim},
                 glorot_uniform<T>(rng, static_cast<std::int64_t>(head_dim) * dim, head_dim,
                                   dim));
    }
    store_.add(base + "o_b", {dim}, constant_init<T>(dim, T(0)));
    add_norm(base + "ln2_g", base + "ln2_b", dim);
    add_linear(rng, base + "mlp/fc1/", dim, mlp_hidden);
    add_linear(rng, base + "mlp/fc2/", mlp_hidden, dim);
  }

  void build_conditional_init(Rng& rng) {
    add_linear(rng, "init/cond/fc1/", 4, 256);
    add_linear(rng, "init/cond/fc2/", 256, cfg_.slot_dim);
  }

  void build_learned_init(Rng& rng) {
    std::vector<T> v(static_cast<std::size_t>(cfg_.slots) * cfg_.slot_dim);
    const double std = 1.0 / std::sqrt(static_cast<double>(cfg_.slot_dim));
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, std));
    store_.add("init/learned/slots", {cfg_.slots, cfg_.slot_dim}, std::move(v));
  }

  void build_encoder(Rng& rng) {
    add_conv(rng, "encoder/root/", 3, 3, 3, cfg_.enc_root_width);
    add_norm("encoder/root/gn_g", "encoder/root/gn_b", cfg_.enc_root_width);
    int in_w = cfg_.enc_root_width;
    for (std::size_t i = 0; i < cfg_.enc_widths.size(); ++i) {
      const std::string base = "encoder/block" + std::to_string(i) + "/";
      const int out_w = cfg_.enc_widths[i];
      add_conv(rng, base + "conv1/", 3, 3, in_w, out_w);
      add_norm(base + "gn1_g", base + "gn1_b", out_w);
      add_conv(rng, base + "conv2/", 3, 3, out_w, out_w);
      add_norm(base + "gn2_g", base + "gn2_b", out_w);
      if (cfg_.enc_strides[i] != 1 || in_w != out_w)
        add_conv(rng, base + "skip/", 1, 1, in_w, out_w);
      in_w = out_w;
    }
    add_linear(rng, "encoder/pos/", 2, in_w);
    add_linear(rng, "encoder/proj/", in_w, cfg_.slot_dim);
    if (cfg_.use_transformer)
      for (int l = 0; l < cfg_.tr_layers; ++l)
        add_transformer_block(rng, "encoder/tr" + std::to_string(l) + "/", cfg_.slot_dim,
                              cfg_.tr_heads, cfg_.tr_head_dim, cfg_.tr_mlp_hidden);
  }

  void build_corrector(Rng& rng) {
    const int d = cfg_.slot_dim, qkv = cfg_.cor_qkv;
    add_norm("corrector/input_norm_g", "corrector/input_norm_b", d);
    add_norm("corrector/slot_norm_g", "corrector/slot_norm_b", d);
    add_linear(rng, "corrector/q/", d, qkv);
    add_linear(rng, "corrector/k/", d, qkv);
    add_linear(rng, "corrector/v/", d, qkv);
    auto gru_w = [&](const std::string& name, int fi, int fo) {
      store_.add(name, {fi, fo},
                 glorot_uniform<T>(rng, static_cast<std::int64_t>(fi) * fo, fi, fo));
    };
    gru_w("corrector/gru/wxz", qkv, d);
    gru_w("corrector/gru/whz", d, d);
    store_.add("corrector/gru/bz", {d}, constant_init<T>(d, T(0)));
    gru_w("corrector/gru/wxr", qkv, d);
    gru_w("corrector/gru/whr", d, d);
    store_.add("corrector/gru/br", {d}, constant_init<T>(d, T(0)));
    gru_w("corrector/gru/wxh", qkv, d);
    gru_w("corrector/gru/whh", d, d);
    store_.add("corrector/gru/bh", {d}, constant_init<T>(d, T(0)));
    add_norm("corrector/mlp_norm_g", "corrector/mlp_norm_b", d);
    add_linear(rng, "corrector/mlp/fc1/", d, cfg_.cor_mlp_hidden);
    add_linear(rng, "corrector/mlp/fc2/", cfg_.cor_mlp_hidden, d);
  }

  void build_predictor(Rng& rng) {
    add_transformer_block(rng, "predictor/", cfg_.slot_dim, cfg_.pred_heads,
                          cfg_.pred_qkv / cfg_.pred_heads, cfg_.pred_mlp_hidden);
  }

  void build_decoder(Rng& rng) {
    add_linear(rng, "decoder/pos/", 2, cfg_.slot_dim);
    int in_w = cfg_.slot_dim;
    for (std::size_t i = 0; i < cfg_.dec_widths.size(); ++i) {
      add_conv(rng, "decoder/up" + std::to_string(i) + "/", 2, 2, in_w, cfg_.dec_widths[i]);
      in_w = cfg_.dec_widths[i];
    }
    add_conv(rng, "decoder/out/", 1, 1, in_w, cfg_.target_channels + 1);
  }

  void build_readout(Rng& rng) {
    add_linear(rng, "readout/fc1/", cfg_.slot_dim, cfg_.readout_hidden);
    add_linear(rng, "readout/fc2/", cfg_.readout_hidden, 4);
  }

  // Linear coordinates in [-1, 1], y then x, matching row-major flattening.
  static std::vector<T> coord_grid(int gh, int gw) {
    std::vector<T> coords(static_cast<std::size_t>(gh) * gw * 2);
    for (int i = 0; i < gh; ++i)
      for (int j = 0; j < gw; ++j) {
        const double y = gh > 1 ? -1.0 + 2.0 * i / (gh - 1) : 0.0;
        const double x = gw > 1 ? -1.0 + 2.0 * j / (gw - 1) : 0.0;
        coords[(static_cast<std::size_t>(i) * gw + j) * 2] = static_cast<T>(x);
        coords[(static_cast<std::size_t>(i) * gw + j) * 2 + 1] = static_cast<T>(y);
      }
    return coords;
  }

  ModelConfig cfg_;
  ModelComponents comp_;
  ParamStore<T> store_;
  std::vector<T> enc_coords_;
  std::vector<T> dec_coords_;
};

}  // namespace savipp::model
