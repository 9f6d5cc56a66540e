#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "multibreath/model.hpp"

namespace mb::nn {

namespace {

constexpr char kMagic[8] = {'M', 'B', 'C', 'K', 'P', 'T', '1', '\n'};
constexpr std::uint32_t kVersion = 1;

using json = nlohmann::json;

void wr(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void wr_pod(std::ofstream& f, T v) {
  wr(f, &v, sizeof(v));
}

void rd(std::ifstream& f, void* p, std::size_t n, const std::string& path) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(f.gcount()) != n)
    throw CheckpointFormatError("truncated checkpoint file: " + path);
}

template <class T>
T rd_pod(std::ifstream& f, const std::string& path) {
  T v;
  rd(f, &v, sizeof(v), path);
  return v;
}

void write_record(std::ofstream& f, const std::string& name,
                  const Array<float>& a) {
  wr_pod<std::uint32_t>(f, static_cast<std::uint32_t>(name.size()));
  wr(f, name.data(), name.size());
  wr_pod<std::uint32_t>(f, static_cast<std::uint32_t>(a.shape.size()));
  for (long d : a.shape) wr_pod<std::uint64_t>(f, static_cast<std::uint64_t>(d));
  wr(f, a.v.data(), a.v.size() * sizeof(float));
}

json head_to_json(const CsraHeadConfig& h) {
  json j;
  j["num_classes"] = h.num_classes;
  j["num_heads"] = h.num_heads;
  json temps = json::array();
  for (double t : h.temperatures)
    temps.push_back(std::isfinite(t) ? json(t) : json("inf"));
  j["temperatures"] = temps;
  j["lambda"] = h.lambda;
  j["feature_dim"] = h.feature_dim;
  j["share_weights"] = h.share_weights;
  j["sum_heads"] = h.sum_heads;
  return j;
}

CsraHeadConfig head_from_json(const json& j) {
  CsraHeadConfig h;
  h.num_classes = j.at("num_classes").get<long>();
  h.num_heads = j.at("num_heads").get<long>();
  for (const auto& t : j.at("temperatures"))
    h.temperatures.push_back(
        t.is_string() ? std::numeric_limits<double>::infinity()
                      : t.get<double>());
  h.lambda = j.at("lambda").get<double>();
  h.feature_dim = j.at("feature_dim").get<long>();
  h.share_weights = j.at("share_weights").get<bool>();
  h.sum_heads = j.at("sum_heads").get<bool>();
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const std::string& extra_json) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint: " + path);

  json cfg;
  cfg["backbone"] = {{"widths", model.cfg.backbone.widths},
                     {"kernel", model.cfg.backbone.kernel},
                     {"pad", model.cfg.backbone.pad}};
  cfg["head"] = head_to_json(model.cfg.head);
  cfg["loss_mode"] = loss_mode_name(model.cfg.loss_mode);
  cfg["input_mean"] = model.cfg.input_mean;
  cfg["input_std"] = model.cfg.input_std;
  cfg["extra"] = json::parse(extra_json);
  const std::string cfg_text = cfg.dump();

  wr(f, kMagic, sizeof(kMagic));
  wr_pod<std::uint32_t>(f, kVersion);
  wr_pod<std::uint64_t>(f, cfg_text.size());
  wr(f, cfg_text.data(), cfg_text.size());

  std::uint32_t n_records = static_cast<std::uint32_t>(model.params.size()) +
                            2 * static_cast<std::uint32_t>(
                                    model.backbone_state.bn_stats.size());
  wr_pod<std::uint32_t>(f, n_records);
  for (const auto& [name, p] : model.params) write_record(f, name, p.value());
  for (std::size_t b = 0; b < model.backbone_state.bn_stats.size(); ++b) {
    const std::string prefix = "backbone.block" + std::to_string(b) + ".bn.";
    write_record(f, prefix + "running_mean",
                 model.backbone_state.bn_stats[b].running_mean);
    write_record(f, prefix + "running_var",
                 model.backbone_state.bn_stats[b].running_var);
  }
  if (!f) throw DataError("short write to checkpoint: " + path);
}

Model<float> load_checkpoint(const std::string& path, std::string* extra_json) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint: " + path);

  char magic[8];
  rd(f, magic, sizeof(magic), path);
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointFormatError("bad magic bytes, not a checkpoint: " + path);
  const auto version = rd_pod<std::uint32_t>(f, path);
  if (version != kVersion)
    throw CheckpointVersionError("checkpoint version " +
                                 std::to_string(version) + " unsupported (want " +
                                 std::to_string(kVersion) + "): " + path);

  const auto cfg_len = rd_pod<std::uint64_t>(f, path);
  std::string cfg_text(cfg_len, '\0');
  rd(f, cfg_text.data(), cfg_len, path);
  json cfg;
  try {
    cfg = json::parse(cfg_text);
  } catch (const json::exception& e) {
    throw CheckpointFormatError("unparseable config in checkpoint " + path +
                                ": " + e.what());
  }

  ModelConfig mc;
  mc.backbone.widths = cfg.at("backbone").at("widths").get<std::vector<long>>();
  mc.backbone.kernel = cfg.at("backbone").at("kernel").get<long>();
  mc.backbone.pad = cfg.at("backbone").at("pad").get<long>();
  mc.head = head_from_json(cfg.at("head"));
  mc.loss_mode = loss_mode_from_name(cfg.at("loss_mode").get<std::string>());
  mc.input_mean = cfg.at("input_mean").get<double>();
  mc.input_std = cfg.at("input_std").get<double>();
  if (extra_json) *extra_json = cfg.at("extra").dump();

  Model<float> model = Model<float>::init(mc, /*seed=*/0);

  const auto n_records = rd_pod<std::uint32_t>(f, path);
  for (std::uint32_t r = 0; r < n_records; ++r) {
    const auto name_len = rd_pod<std::uint32_t>(f, path);
    std::string name(name_len, '\0');
    rd(f, name.data(), name_len, path);
    const auto rank = rd_pod<std::uint32_t>(f, path);
    Shape shape(rank);
    for (auto& d : shape)
      d = static_cast<long>(rd_pod<std::uint64_t>(f, path));
    Array<float> a(shape);
    rd(f, a.v.data(), a.v.size() * sizeof(float), path);

    Array<float>* dst = nullptr;
    if (model.params.contains(name)) {
      dst = &model.params.at(name).raw_value();
    } else {
      // batchnorm buffers
      for (std::size_t b = 0; b < model.backbone_state.bn_stats.size(); ++b) {
        const std::string prefix = "backbone.block" + std::to_string(b) + ".bn.";
        if (name == prefix + "running_mean")
          dst = &model.backbone_state.bn_stats[b].running_mean;
        else if (name == prefix + "running_var")
          dst = &model.backbone_state.bn_stats[b].running_var;
      }
    }
    if (!dst)
      throw CheckpointShapeError("checkpoint record '" + name +
                                 "' does not match any model tensor: " + path);
    if (dst->shape != a.shape)
      throw CheckpointShapeError("checkpoint record '" + name + "' has shape " +
                                 shape_str(a.shape) + ", model expects " +
                                 shape_str(dst->shape) + ": " + path);
    *dst = std::move(a);
  }
  return model;
}

}  // namespace mb::nn
