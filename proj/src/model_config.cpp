#include "savipp/model/config.hpp"

namespace savipp::model {

void ModelConfig::validate() const {
  if (slots < 1 || slot_dim < 1) throw ParameterError("slots and slot_dim must be >= 1");
  if (cor_iterations < 1) throw ParameterError("corrector iterations must be >= 1");
  if (enc_widths.size() != enc_strides.size())
    throw ParameterError("encoder widths and strides must align");
  const int s = overall_stride();
  if (height % s != 0 || width % s != 0)
    throw ParameterError("resolution " + std::to_string(height) + "x" +
                         std::to_string(width) + " not divisible by encoder stride " +
                         std::to_string(s));
  auto check_groups = [&](int w) {
    if (w % gn_groups != 0)
      throw ParameterError("channel width " + std::to_string(w) +
                           " not divisible by gn_groups " + std::to_string(gn_groups));
  };
  check_groups(enc_root_width);
  for (int w : enc_widths) check_groups(w);
  if (use_transformer && tr_heads * tr_head_dim < 1)
    throw ParameterError("transformer head configuration is empty");
  if (pred_qkv % pred_heads != 0)
    throw ParameterError("predictor qkv width must divide across heads");
  int h = dec_grid_h, w = dec_grid_w;
  for (std::size_t i = 0; i < dec_widths.size(); ++i) {
    h *= 2;
    w *= 2;
  }
  if (h != height || w != width)
    throw ParameterError("decoder stages reach " + std::to_string(h) + "x" +
                         std::to_string(w) + " instead of " + std::to_string(height) +
                         "x" + std::to_string(width));
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["height"] = height;
  j["width"] = width;
  j["slots"] = slots;
  j["slot_dim"] = slot_dim;
  j["target_channels"] = target_channels;
  j["enc_root_width"] = enc_root_width;
  j["enc_widths"] = enc_widths;
  j["enc_strides"] = enc_strides;
  j["gn_groups"] = gn_groups;
  j["use_transformer"] = use_transformer;
  j["tr_layers"] = tr_layers;
  j["tr_heads"] = tr_heads;
  j["tr_head_dim"] = tr_head_dim;
  j["tr_mlp_hidden"] = tr_mlp_hidden;
  j["cor_qkv"] = cor_qkv;
  j["cor_mlp_hidden"] = cor_mlp_hidden;
  j["cor_iterations"] = cor_iterations;
  j["pred_qkv"] = pred_qkv;
  j["pred_heads"] = pred_heads;
  j["pred_mlp_hidden"] = pred_mlp_hidden;
  j["dec_grid_h"] = dec_grid_h;
  j["dec_grid_w"] = dec_grid_w;
  j["dec_widths"] = dec_widths;
  j["readout_hidden"] = readout_hidden;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.slots = j.at("slots").get<int>();
  c.slot_dim = j.at("slot_dim").get<int>();
  c.target_channels = j.at("target_channels").get<int>();
  c.enc_root_width = j.at("enc_root_width").get<int>();
  c.enc_widths = j.at("enc_widths").get<std::vector<int>>();
  c.enc_strides = j.at("enc_strides").get<std::vector<int>>();
  c.gn_groups = j.at("gn_groups").get<int>();
  c.use_transformer = j.at("use_transformer").get<bool>();
  c.tr_layers = j.at("tr_layers").get<int>();
  c.tr_heads = j.at("tr_heads").get<int>();
  c.tr_head_dim = j.at("tr_head_dim").get<int>();
  c.tr_mlp_hidden = j.at("tr_mlp_hidden").get<int>();
  c.cor_qkv = j.at("cor_qkv").get<int>();
  c.cor_mlp_hidden = j.at("cor_mlp_hidden").get<int>();
  c.cor_iterations = j.at("cor_iterations").get<int>();
  c.pred_qkv = j.at("pred_qkv").get<int>();
  c.pred_heads = j.at("pred_heads").get<int>();
  c.pred_mlp_hidden = j.at("pred_mlp_hidden").get<int>();
  c.dec_grid_h = j.at("dec_grid_h").get<int>();
  c.dec_grid_w = j.at("dec_grid_w").get<int>();
  c.dec_widths = j.at("dec_widths").get<std::vector<int>>();
  c.readout_hidden = j.at("readout_hidden").get<int>();
  return c;
}

std::uint64_t ModelConfig::digest() const {
  const std::string canon = to_json().dump();
  return fnv1a64(canon.data(), canon.size());
}

ModelConfig ModelConfig::tiny(int slots, int slot_dim) {
  ModelConfig c;
  c.height = c.width = 16;
  c.slots = slots;
  c.slot_dim = slot_dim;
  c.enc_root_width = 4;
  c.enc_widths = {4, 8};
  c.enc_strides = {2, 2};
  c.gn_groups = 2;
  c.tr_layers = 1;
  c.tr_heads = 2;
  c.tr_head_dim = 4;
  c.tr_mlp_hidden = 16;
  c.cor_qkv = 8;
  c.cor_mlp_hidden = 8;
  c.pred_qkv = 8;
  c.pred_heads = 2;
  c.pred_mlp_hidden = 16;
  c.dec_grid_h = c.dec_grid_w = 4;
  c.dec_widths = {8, 8};
  c.readout_hidden = 8;
  return c;
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.height = c.width = 128;
  c.slots = 24;
  c.slot_dim = 128;
  c.enc_root_width = 64;
  c.enc_widths = {64, 128, 256, 256};
  c.enc_strides = {2, 2, 2, 1};
  c.gn_groups = 32;
  c.tr_layers = 4;
  c.tr_heads = 4;
  c.tr_head_dim = 16;
  c.tr_mlp_hidden = 1024;
  c.cor_qkv = 256;
  c.cor_mlp_hidden = 256;
  c.pred_qkv = 256;
  c.pred_heads = 4;
  c.pred_mlp_hidden = 1024;
  c.dec_grid_h = c.dec_grid_w = 8;
  c.dec_widths = {64, 64, 64, 64};
  c.readout_hidden = 256;
  return c;
}

}  // namespace savipp::model
