#include "glandscreen/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "glandscreen/dataset.hpp"
#include "glandscreen/error.hpp"

using nlohmann::json;

namespace glandscreen::model {

void ModelConfig::validate() const {
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "dropout must lie in [0, 1)");
  }
  if (input_size < 32) throw Error(ErrorCode::InvalidArgument, "input_size must be >= 32");
}

json to_json(const ModelConfig& cfg) {
  return {{"backbone", cfg.backbone},
          {"pretrained", cfg.pretrained},
          {"dropout", cfg.dropout},
          {"input_size", cfg.input_size},
          {"init_seed", cfg.init_seed},
          {"num_classes", kNumClasses}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.backbone = j.at("backbone").get<std::string>();
  cfg.pretrained = j.value("pretrained", false);
  cfg.dropout = j.value("dropout", cfg.dropout);
  cfg.input_size = j.value("input_size", cfg.input_size);
  cfg.init_seed = j.value("init_seed", cfg.init_seed);
  if (j.value("num_classes", kNumClasses) != kNumClasses) {
    throw Error(ErrorCode::BadCheckpoint, "model must have exactly 2 output logits");
  }
  return cfg;
}

std::vector<std::string> available_backbones() { return {"small_cnn", "mbconv_small"}; }

namespace {

using namespace glandscreen::nn;

Sequential small_cnn() {
  Sequential s;
  const int widths[] = {16, 32, 64, 64};
  int in = 3;
  for (int i = 0; i < 4; ++i) {
    const std::string idx = std::to_string(i + 1);
    s.add("conv" + idx, std::make_unique<Conv2d>("conv" + idx, in, widths[i], 3, 2, 1, 1, false))
        .add("bn" + idx, std::make_unique<BatchNorm2d>("bn" + idx, widths[i]))
        .add("act" + idx, std::make_unique<ReLU>());
    in = widths[i];
  }
  return s;
}

// EfficientNet-style stack scaled down for CPU training: stem, five MBConv
// blocks with squeeze-excite, 1x1 head conv. Total stride 16.
Sequential mbconv_small() {
  Sequential s;
  s.add("stem", std::make_unique<Conv2d>("stem", 3, 16, 3, 2, 1, 1, false))
      .add("stem_bn", std::make_unique<BatchNorm2d>("stem_bn", 16))
      .add("stem_act", std::make_unique<SiLU>());
  struct Block {
    int in, out, expand, kernel, stride;
  };
  const Block blocks[] = {{16, 16, 1, 3, 1}, {16, 24, 4, 3, 2}, {24, 40, 4, 5, 2},
                          {40, 80, 4, 3, 2}, {80, 80, 4, 3, 1}};
  int i = 1;
  for (const auto& b : blocks) {
    const std::string name = "block" + std::to_string(i++);
    s.add(name, std::make_unique<MBConv>(name, b.in, b.out, b.expand, b.kernel, b.stride));
  }
  s.add("head_conv", std::make_unique<Conv2d>("head_conv", 80, 128, 1, 1, 0, 1, false))
      .add("head_bn", std::make_unique<BatchNorm2d>("head_bn", 128))
      .add("head_act", std::make_unique<SiLU>());
  return s;
}

int feature_width(const std::string& backbone) { return backbone == "small_cnn" ? 64 : 128; }

}  // namespace

Classifier::Classifier(ModelConfig cfg, nn::Sequential backbone, nn::Sequential head)
    : cfg_(std::move(cfg)), backbone_(std::move(backbone)), head_(std::move(head)) {}

std::unique_ptr<Classifier> build_model(const ModelConfig& cfg) {
  cfg.validate();
  const auto known = available_backbones();
  if (std::find(known.begin(), known.end(), cfg.backbone) == known.end()) {
    std::string msg = "unknown backbone '" + cfg.backbone + "'";
    if (cfg.backbone.rfind("efficientnet", 0) == 0) {
      msg += " (ImageNet-pretrained EfficientNet weights are not bundled with this build)";
    }
    msg += "; available: small_cnn, mbconv_small";
    throw Error(ErrorCode::UnknownBackbone, msg);
  }
  if (cfg.pretrained) {
    throw Error(ErrorCode::UnknownBackbone,
                "no pretrained weights available for backbone '" + cfg.backbone + "'");
  }
  nn::Sequential backbone = cfg.backbone == "small_cnn" ? small_cnn() : mbconv_small();
  nn::Sequential head;
  head.add("pool", std::make_unique<nn::GlobalAvgPool>())
      .add("dropout", std::make_unique<nn::Dropout>(static_cast<float>(cfg.dropout)))
      .add("fc", std::make_unique<nn::Linear>("fc", feature_width(cfg.backbone), kNumClasses));
  Rng rng(cfg.init_seed);
  backbone.init(rng);
  head.init(rng);
  return std::make_unique<Classifier>(cfg, std::move(backbone), std::move(head));
}

nn::Tensor Classifier::forward(const nn::Tensor& input, bool training) {
  return head_.forward(backbone_.forward(input, training), training);
}

nn::Tensor Classifier::backward(const nn::Tensor& grad_logits) {
  return backbone_.backward(head_.backward(grad_logits));
}

std::vector<nn::Param*> Classifier::params() {
  auto p = backbone_.params();
  auto h = head_.params();
  p.insert(p.end(), h.begin(), h.end());
  return p;
}

std::vector<std::pair<std::string, nn::Tensor*>> Classifier::buffers() {
  auto b = backbone_.buffers();
  auto h = head_.buffers();
  b.insert(b.end(), h.begin(), h.end());
  return b;
}

void Classifier::zero_grad() {
  for (auto* p : params()) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
}

void Classifier::set_dropout_seed(std::uint64_t seed) {
  for (std::size_t i = 0; i < head_.size(); ++i) {
    if (auto* d = dynamic_cast<nn::Dropout*>(&head_.at(i))) d->reseed(seed);
  }
}

std::string Classifier::last_feature_layer() const {
  for (std::size_t i = backbone_.size(); i > 0; --i) {
    if (const_cast<nn::Sequential&>(backbone_).at(i - 1).spatial()) {
      return backbone_.name_at(i - 1);
    }
  }
  throw Error(ErrorCode::NoConvFeatures, "backbone has no spatial layers");
}

std::array<double, 2> softmax2(float logit0, float logit1) {
  const double a = logit0, b = logit1;
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  const double s = ea + eb;
  return {ea / s, eb / s};
}

std::vector<std::array<double, 2>> Classifier::predict_proba(std::span<const RgbImage> images,
                                                             int batch_size) {
  std::vector<std::array<double, 2>> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    const nn::Tensor logits = forward(to_input_tensor(images.subspan(start, end - start)), false);
    for (int n = 0; n < logits.n(); ++n) out.push_back(softmax2(logits.at(n, 0), logits.at(n, 1)));
  }
  return out;
}

nn::Tensor to_input_tensor(std::span<const RgbImage> images) {
  if (images.empty()) throw Error(ErrorCode::InvalidArgument, "no images to batch");
  const int h = images.front().height(), w = images.front().width();
  static constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
  static constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};
  nn::Tensor t(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (img.height() != h || img.width() != w) {
      throw Error(ErrorCode::DimensionMismatch, "batched images must share dimensions");
    }
    const unsigned char* px = img.mat().ptr<unsigned char>(0);
    float* dst = t.sample(static_cast<int>(n));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < plane; ++i) {
      for (int c = 0; c < 3; ++c) {
        dst[c * plane + i] = (static_cast<float>(px[i * 3 + c]) / 255.0f - kMean[c]) / kStd[c];
      }
    }
  }
  return t;
}

// Checkpoint layout: "GSCKPT01", u64 header length, JSON header, then the
// float32 payload of every tensor listed in the header, in order.
namespace {

constexpr char kMagic[8] = {'G', 'S', 'C', 'K', 'P', 'T', '0', '1'};

struct NamedTensor {
  std::string name;
  nn::Tensor* tensor;
};

std::vector<NamedTensor> state(Classifier& model) {
  std::vector<NamedTensor> out;
  for (auto* p : model.params()) out.push_back({p->name, &p->value});
  for (auto& [name, t] : model.buffers()) out.push_back({name, t});
  std::set<std::string> seen;
  for (const auto& nt : out) {
    if (!seen.insert(nt.name).second) {
      throw Error(ErrorCode::BadCheckpoint, "duplicate tensor name: " + nt.name);
    }
  }
  return out;
}

}  // namespace

std::vector<unsigned char> serialize(Classifier& model, const json& extra) {
  const auto tensors = state(model);
  json header;
  header["model_config"] = to_json(model.config());
  header["class_order"] = {kClassOrder[0], kClassOrder[1]};
  header["extra"] = extra;
  header["tensors"] = json::array();
  std::size_t floats = 0;
  for (const auto& nt : tensors) {
    header["tensors"].push_back({{"name", nt.name}, {"shape", nt.tensor->shape}});
    floats += nt.tensor->size();
  }
  const std::string h = header.dump();
  const std::uint64_t hlen = h.size();
  std::vector<unsigned char> out(sizeof kMagic + sizeof hlen + h.size() + floats * sizeof(float));
  unsigned char* p = out.data();
  std::memcpy(p, kMagic, sizeof kMagic);
  p += sizeof kMagic;
  std::memcpy(p, &hlen, sizeof hlen);
  p += sizeof hlen;
  std::memcpy(p, h.data(), h.size());
  p += h.size();
  for (const auto& nt : tensors) {
    std::memcpy(p, nt.tensor->data.data(), nt.tensor->size() * sizeof(float));
    p += nt.tensor->size() * sizeof(float);
  }
  return out;
}

std::unique_ptr<Classifier> deserialize(std::span<const unsigned char> bytes, json* extra) {
  std::uint64_t hlen = 0;
  if (bytes.size() < sizeof kMagic + sizeof hlen ||
      std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw Error(ErrorCode::BadCheckpoint, "not a glandscreen checkpoint");
  }
  std::memcpy(&hlen, bytes.data() + sizeof kMagic, sizeof hlen);
  std::size_t pos = sizeof kMagic + sizeof hlen;
  if (hlen > bytes.size() - pos) throw Error(ErrorCode::BadCheckpoint, "truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BadCheckpoint, std::string("bad checkpoint header: ") + e.what());
  }
  pos += hlen;
  const auto order = header.at("class_order").get<std::vector<std::string>>();
  if (order.size() != 2 || order[0] != kClassOrder[0] || order[1] != kClassOrder[1]) {
    throw Error(ErrorCode::BadCheckpoint, "checkpoint class order must be [abnormal, normal]");
  }
  ModelConfig cfg = model_config_from_json(header.at("model_config"));
  auto model = build_model(cfg);
  const auto tensors = state(*model);
  const auto& listed = header.at("tensors");
  if (listed.size() != tensors.size()) {
    throw Error(ErrorCode::BadCheckpoint, "checkpoint tensor count does not match architecture");
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& nt = tensors[i];
    if (listed[i].at("name").get<std::string>() != nt.name ||
        listed[i].at("shape").get<std::array<int, 4>>() != nt.tensor->shape) {
      throw Error(ErrorCode::BadCheckpoint, "checkpoint tensor mismatch at " + nt.name);
    }
    const std::size_t nbytes = nt.tensor->size() * sizeof(float);
    if (nbytes > bytes.size() - pos) throw Error(ErrorCode::BadCheckpoint, "truncated payload");
    std::memcpy(nt.tensor->data.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
  }
  if (pos != bytes.size()) throw Error(ErrorCode::BadCheckpoint, "trailing bytes in checkpoint");
  if (extra) *extra = header.value("extra", json::object());
  return model;
}

void save_checkpoint(const std::filesystem::path& path, Classifier& model, const json& extra) {
  const auto bytes = serialize(model, extra);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "cannot write checkpoint " + path.string());
}

std::unique_ptr<Classifier> load_checkpoint(const std::filesystem::path& path, json* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return deserialize(bytes, extra);
}

}  // namespace glandscreen::model
