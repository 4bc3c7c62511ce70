#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafbench/errors.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/layers.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

// ===========================================================================
// Backbone adapter boundary
// ===========================================================================

/// A convolutional feature extractor. Output is [n, h, w, c]; the head applies
/// global average pooling whenever h * w > 1.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  /// Expected per-sample input shape (n is ignored).
  virtual Shape input_shape() const = 0;
  virtual Shape output_shape() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<ParamRef<T>> parameters() = 0;
  virtual std::vector<BufferRef<T>> buffers() = 0;
  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;
  /// Architecture description written into model.json.
  virtual nlohmann::json config() const { return nlohmann::json::object(); }
};

// ===========================================================================
// MicroCNN
// ===========================================================================

struct ConvBlockSpec {
  std::size_t out_channels = 8;
  std::size_t kernel_size = 3;
  std::size_t stride = 1;
  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

/// Reference network: [conv -> batchnorm -> relu -> 2x2 max pool] per block,
/// flatten, one sigmoid dense layer of width head_dim.
struct MicroCNNConfig {
  std::vector<ConvBlockSpec> blocks{{8, 3, 1}, {16, 3, 1}, {32, 3, 1}};
  std::size_t head_dim = 0;  // 0 means "take it from the label space"
  std::size_t input_side = 120;
  std::size_t input_channels = 3;
  Padding padding = Padding::same;

  friend bool operator==(const MicroCNNConfig&, const MicroCNNConfig&) = default;

  nlohmann::json to_json() const {
    nlohmann::json b = nlohmann::json::array();
    for (const auto& blk : blocks) b.push_back({blk.out_channels, blk.kernel_size, blk.stride});
    return {{"blocks", b},
            {"head_dim", head_dim},
            {"input_side", input_side},
            {"input_channels", input_channels},
            {"padding", to_string(padding)}};
  }

  static MicroCNNConfig from_json(const nlohmann::json& j) {
    MicroCNNConfig c;
    try {
      c.blocks.clear();
      for (const auto& b : j.at("blocks"))
        c.blocks.push_back({b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(), b.at(2).get<std::size_t>()});
      c.head_dim = j.value("head_dim", std::size_t{0});
      c.input_side = j.value("input_side", std::size_t{120});
      c.input_channels = j.value("input_channels", std::size_t{3});
      c.padding = parse_padding(j.value("padding", std::string("same")));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("malformed MicroCNN config: ") + e.what());
    }
    return c;
  }
};

template <typename T>
class MicroCNNBackbone final : public FeatureExtractor<T> {
 public:
  MicroCNNBackbone(const MicroCNNConfig& config, std::uint64_t seed) : config_(config) {
    if (config.blocks.empty()) throw Error(ErrorKind::ConfigError, "MicroCNN needs at least one block");
    if (config.input_side == 0 || config.input_channels == 0)
      throw Error(ErrorKind::ConfigError, "MicroCNN input must be non-empty");
    std::mt19937_64 gen(seed);
    Shape shape{1, config.input_side, config.input_side, config.input_channels};
    for (const auto& blk : config.blocks) {
      if (blk.kernel_size > kMaxKernelSide) throw Error(ErrorKind::ConfigError, "kernel side must not exceed 5");
      ConvLayerParams<T> p(blk.out_channels, shape.c, blk.kernel_size, blk.kernel_size, blk.stride, config.padding);
      glorot_uniform<T>(p.kernels, shape.c * blk.kernel_size * blk.kernel_size,
                        blk.out_channels * blk.kernel_size * blk.kernel_size, gen);
      net_.add(std::make_unique<Conv2DLayer<T>>(std::move(p)));
      net_.add(std::make_unique<BatchNormLayer<T>>(BatchNormState<T>(blk.out_channels)));
      net_.add(std::make_unique<ReluLayer<T>>());
      net_.add(std::make_unique<MaxPool2Layer<T>>());
      try {
        shape = net_.output_shape(Shape{1, config.input_side, config.input_side, config.input_channels});
      } catch (const Error& e) {
        throw Error(ErrorKind::ConfigError, std::string("MicroCNN blocks do not fit the input: ") + e.what());
      }
    }
    spatial_ = shape;
  }

  std::string name() const override { return "MicroCNN"; }
  Shape input_shape() const override { return {1, config_.input_side, config_.input_side, config_.input_channels}; }
  /// Flattened: the spatial map of the last block becomes one feature vector.
  Shape output_shape() const override { return {1, 1, 1, spatial_.per_sample()}; }

  Tensor<T> forward(const Tensor<T>& x, bool training) override {
    const auto& s = x.shape();
    if (s.h != config_.input_side || s.w != config_.input_side || s.c != config_.input_channels)
      throw Error(ErrorKind::ShapeMismatch, "MicroCNN expects " + input_shape().str() + " inputs, got " + s.str());
    auto y = net_.forward(x, training);
    return std::move(y).reshaped(Shape{s.n, 1, 1, spatial_.per_sample()});
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const Shape s{grad_out.shape().n, spatial_.h, spatial_.w, spatial_.c};
    // The network input is data, so the first layer skips its input gradient.
    return net_.backward(grad_out.reshaped(s), false);
  }

  std::vector<ParamRef<T>> parameters() override { return net_.parameters(); }
  std::vector<BufferRef<T>> buffers() override { return net_.buffers(); }
  std::unique_ptr<FeatureExtractor<T>> clone() const override { return std::make_unique<MicroCNNBackbone>(*this); }
  nlohmann::json config() const override { return config_.to_json(); }

  const MicroCNNConfig& micro_config() const { return config_; }
  Sequential<T>& layers() { return net_; }

 private:
  MicroCNNConfig config_;
  Sequential<T> net_;
  Shape spatial_{};
};

// ===========================================================================
// Multi-label network: backbone + single sigmoid dense head
// ===========================================================================

template <typename T>
class MultiLabelNet {
 public:
  MultiLabelNet(std::unique_ptr<FeatureExtractor<T>> backbone, std::size_t head_dim, bool freeze_backbone,
                std::uint64_t seed)
      : backbone_(std::move(backbone)), freeze_(freeze_backbone) {
    if (!backbone_) throw Error(ErrorKind::ConfigError, "null backbone");
    if (head_dim == 0) throw Error(ErrorKind::ConfigError, "head width must be positive");
    const auto out = backbone_->output_shape();
    pool_ = out.h * out.w > 1;
    const std::size_t features = out.c * (pool_ ? 1 : out.h * out.w);
    DenseParams<T> p(features, head_dim);
    std::mt19937_64 gen(seed ^ 0x9E3779B97F4A7C15ULL);
    glorot_uniform<T>(p.weights, features, head_dim, gen);
    head_ = std::make_unique<DenseLayer<T>>(std::move(p));
  }

  MultiLabelNet(const MultiLabelNet& o)
      : backbone_(o.backbone_->clone()), head_(std::make_unique<DenseLayer<T>>(o.head_->params())), pool_(o.pool_),
        freeze_(o.freeze_) {}
  MultiLabelNet& operator=(const MultiLabelNet& o) {
    if (this != &o) *this = MultiLabelNet(o);
    return *this;
  }
  MultiLabelNet(MultiLabelNet&&) noexcept = default;
  MultiLabelNet& operator=(MultiLabelNet&&) noexcept = default;

  std::string backbone_name() const { return backbone_->name(); }
  FeatureExtractor<T>& backbone() { return *backbone_; }
  const FeatureExtractor<T>& backbone() const { return *backbone_; }
  DenseLayer<T>& head() { return *head_; }
  Shape input_shape() const { return backbone_->input_shape(); }
  std::size_t head_dim() const { return head_->params().out_dim; }
  bool frozen() const { return freeze_; }

  /// Raw head outputs before the sigmoid, shape [n, 1, 1, head_dim].
  Tensor<T> forward_logits(const Tensor<T>& x, bool training) {
    // A frozen backbone always runs on its stored statistics.
    auto f = backbone_->forward(x, training && !freeze_);
    if (pool_) f = gap_.forward(f, training);
    return head_->forward(f, training);
  }

  /// Sigmoid outputs, shape [n, 1, 1, head_dim].
  Tensor<T> forward(const Tensor<T>& x, bool training) {
    auto y = forward_logits(x, training);
    for (auto& v : y.values()) v = sigmoid(v);
    return y;
  }

  Tensor<T> predict(const Tensor<T>& x) { return forward(x, false); }

  /// Backpropagates a gradient on the logits of the last forward pass.
  void backward_logits(const Tensor<T>& grad_logits) {
    auto g = head_->backward(grad_logits, !freeze_);
    if (freeze_) return;
    if (pool_) g = gap_.backward(g, true);
    backbone_->backward(g);
  }

  /// Parameters the optimizer updates: the head, plus the backbone unless frozen.
  std::vector<ParamRef<T>> trainable_parameters() {
    std::vector<ParamRef<T>> out;
    if (!freeze_) out = prefixed(backbone_->parameters(), "backbone.");
    for (auto p : head_->parameters()) {
      p.name = "head." + p.name;
      out.push_back(p);
    }
    return out;
  }

  /// Every parameter, trainable or not.
  std::vector<ParamRef<T>> all_parameters() {
    auto out = prefixed(backbone_->parameters(), "backbone.");
    for (auto p : head_->parameters()) {
      p.name = "head." + p.name;
      out.push_back(p);
    }
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    auto out = backbone_->buffers();
    for (auto& b : out) b.name = "backbone." + b.name;
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : trainable_parameters()) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : all_parameters()) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  /// Copy of every parameter and buffer, in a fixed order.
  std::vector<std::vector<T>> snapshot() {
    std::vector<std::vector<T>> s;
    for (const auto& p : all_parameters()) s.emplace_back(p.value.begin(), p.value.end());
    for (const auto& b : buffers()) s.emplace_back(b.value.begin(), b.value.end());
    return s;
  }

  void restore(const std::vector<std::vector<T>>& s) {
    auto ps = all_parameters();
    auto bs = buffers();
    if (s.size() != ps.size() + bs.size()) throw Error(ErrorKind::ShapeMismatch, "snapshot does not match model");
    std::size_t k = 0;
    const auto copy = [&](std::span<T> dst) {
      if (s[k].size() != dst.size()) throw Error(ErrorKind::ShapeMismatch, "snapshot buffer length mismatch");
      std::copy(s[k].begin(), s[k].end(), dst.begin());
      ++k;
    };
    for (auto& p : ps) copy(p.value);
    for (auto& b : bs) copy(b.value);
  }

 private:
  static std::vector<ParamRef<T>> prefixed(std::vector<ParamRef<T>> ps, const std::string& prefix) {
    for (auto& p : ps) p.name = prefix + p.name;
    return ps;
  }

  std::unique_ptr<FeatureExtractor<T>> backbone_;
  std::unique_ptr<DenseLayer<T>> head_;
  GlobalAvgPoolLayer<T> gap_;
  bool pool_ = false;
  bool freeze_ = false;
};

/// Appends the sigmoid head with one output per label-space position.
template <typename T>
MultiLabelNet<T> attach_multilabel_head(std::unique_ptr<FeatureExtractor<T>> backbone, const LabelSpace& space,
                                        bool freeze_backbone, std::uint64_t seed) {
  return MultiLabelNet<T>(std::move(backbone), space.dim(), freeze_backbone, seed);
}

template <typename T>
MultiLabelNet<T> build_micro_cnn(MicroCNNConfig config, const LabelSpace& space, std::uint64_t seed) {
  if (config.head_dim == 0) config.head_dim = space.dim();
  if (config.head_dim != space.dim())
    throw Error(ErrorKind::ConfigError, "head_dim " + std::to_string(config.head_dim) +
                                            " does not match label dimension " + std::to_string(space.dim()));
  return MultiLabelNet<T>(std::make_unique<MicroCNNBackbone<T>>(config, seed), config.head_dim, false, seed);
}

// ===========================================================================
// Backbone registry
// ===========================================================================

struct BackboneInfo {
  std::string_view name;
  double parameters_million;  // trainable parameters reported for the full model
};

/// The published backbone line-up, in report order.
inline constexpr std::array<BackboneInfo, 15> kPublishedBackbones = {{
    {"DenseNet121", 7},     {"DenseNet169", 13}, {"DenseNet201", 19},  {"InceptionV3", 23},
    {"InceptionResNetV2", 54}, {"MobileNet", 3}, {"ResNet50", 24},     {"ResNet50V2", 24},
    {"ResNet101", 43},      {"ResNet101V2", 43}, {"ResNet152", 59},    {"ResNet152V2", 59},
    {"VGG16", 137},         {"VGG19", 142},      {"Xception", 21},
}};

inline std::optional<BackboneInfo> published_backbone(std::string_view name) {
  for (const auto& b : kPublishedBackbones)
    if (b.name == name) return b;
  return std::nullopt;
}

struct BackboneRequest {
  Shape input{1, 120, 120, 3};
  MicroCNNConfig micro;  // used by MicroCNN only
  std::uint64_t seed = 0;
};

/// Maps backbone names to factories. MicroCNN is always present; pretrained
/// backbones are supplied by the host environment through `add`.
template <typename T>
class BackboneRegistry {
 public:
  using Factory = std::function<std::unique_ptr<FeatureExtractor<T>>(const BackboneRequest&)>;

  BackboneRegistry() {
    add("MicroCNN", [](const BackboneRequest& r) -> std::unique_ptr<FeatureExtractor<T>> {
      auto cfg = r.micro;
      cfg.input_side = r.input.h;
      cfg.input_channels = r.input.c;
      return std::make_unique<MicroCNNBackbone<T>>(cfg, r.seed);
    });
  }

  void add(std::string name, Factory factory) { factories_[std::move(name)] = std::move(factory); }
  bool available(const std::string& name) const { return factories_.contains(name); }

  /// Creates a backbone, refusing any that does not accept the requested input
  /// shape as-is.
  std::unique_ptr<FeatureExtractor<T>> create(const std::string& name, const BackboneRequest& request) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) {
      const bool known = published_backbone(name).has_value();
      throw Error(ErrorKind::BackboneUnavailable,
                  known ? "no provider for pretrained backbone '" + name + "' in this environment"
                        : "unknown backbone '" + name + "'");
    }
    std::unique_ptr<FeatureExtractor<T>> bb;
    try {
      bb = it->second(request);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::BackboneUnavailable) throw;
      if (name == "MicroCNN") throw;
      throw Error(ErrorKind::BackboneUnavailable, "provider for '" + name + "' failed: " + e.what());
    }
    if (!bb) throw Error(ErrorKind::BackboneUnavailable, "provider for '" + name + "' returned nothing");
    const auto in = bb->input_shape();
    if (in.h != request.input.h || in.w != request.input.w || in.c != request.input.c)
      throw Error(ErrorKind::BackboneUnavailable, "backbone '" + name + "' does not accept " + request.input.str() +
                                                      " inputs (expects " + in.str() + ")");
    return bb;
  }

  /// Builds backbone plus head for a label space.
  MultiLabelNet<T> build(const std::string& name, const BackboneRequest& request, const LabelSpace& space,
                         bool freeze_backbone) const {
    if (name == "MicroCNN") {
      auto cfg = request.micro;
      cfg.input_side = request.input.h;
      cfg.input_channels = request.input.c;
      return build_micro_cnn<T>(cfg, space, request.seed);
    }
    return attach_multilabel_head<T>(create(name, request), space, freeze_backbone, request.seed);
  }

 private:
  std::map<std::string, Factory, std::less<>> factories_;
};

// ===========================================================================
// Checkpoints: <dir>/{model.json, labelspace.json, weights.json}
// ===========================================================================

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p, ErrorKind kind) {
  std::ifstream is(p);
  if (!is) throw Error(kind, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(kind, p.string() + ": " + e.what());
  }
}

/// Writes through a temporary file and renames it into place.
inline void write_text_atomic(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error(ErrorKind::ConfigError, "cannot write " + tmp.string());
    os << text;
    if (!os) throw Error(ErrorKind::ConfigError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

}  // namespace detail

template <typename T>
void save_checkpoint(MultiLabelNet<T>& net, const LabelSpace& space, const std::filesystem::path& dir) {
  if (net.head_dim() != space.dim()) throw Error(ErrorKind::ConfigError, "model head does not match label space");
  nlohmann::json model = {{"backbone_name", net.backbone_name()},
                          {"head_dim", net.head_dim()},
                          {"freeze_backbone", net.frozen()},
                          {"micro_cnn_config", nullptr}};
  if (net.backbone_name() == "MicroCNN") model["micro_cnn_config"] = net.backbone().config();
  const auto in = net.input_shape();
  model["input_shape"] = {in.h, in.w, in.c};

  nlohmann::json params = nlohmann::json::object(), buffers = nlohmann::json::object();
  for (const auto& p : net.all_parameters()) params[p.name] = std::vector<T>(p.value.begin(), p.value.end());
  for (const auto& b : net.buffers()) buffers[b.name] = std::vector<T>(b.value.begin(), b.value.end());

  detail::write_text_atomic(dir / "model.json", model.dump(2) + "\n");
  detail::write_text_atomic(dir / "labelspace.json", space.to_json().dump(2) + "\n");
  detail::write_text_atomic(dir / "weights.json", nlohmann::json{{"parameters", params}, {"buffers", buffers}}.dump() + "\n");
}

template <typename T>
struct LoadedModel {
  MultiLabelNet<T> net;
  LabelSpace space;
};

template <typename T>
LoadedModel<T> load_checkpoint(const std::filesystem::path& dir,
                               const BackboneRegistry<T>& registry = BackboneRegistry<T>()) {
  const auto model = detail::read_json_file(dir / "model.json", ErrorKind::CheckpointCorrupt);
  const auto space_json = detail::read_json_file(dir / "labelspace.json", ErrorKind::CheckpointCorrupt);
  const auto weights = detail::read_json_file(dir / "weights.json", ErrorKind::CheckpointCorrupt);
  LabelSpace space;
  try {
    space = LabelSpace::from_json(space_json);
  } catch (const Error& e) {
    throw Error(ErrorKind::CheckpointCorrupt, e.what());
  }
  try {
    const auto name = model.at("backbone_name").get<std::string>();
    const auto head_dim = model.at("head_dim").get<std::size_t>();
    if (head_dim != space.dim()) throw Error(ErrorKind::CheckpointCorrupt, "head_dim disagrees with labelspace.json");
    BackboneRequest req;
    const auto shape = model.at("input_shape");
    req.input = Shape{1, shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(), shape.at(2).get<std::size_t>()};
    if (!model.at("micro_cnn_config").is_null()) req.micro = MicroCNNConfig::from_json(model.at("micro_cnn_config"));
    auto net = registry.build(name, req, space, model.at("freeze_backbone").get<bool>());

    const auto& params = weights.at("parameters");
    const auto& buffers = weights.at("buffers");
    const auto fill = [](std::span<T> dst, const nlohmann::json& src, const std::string& what) {
      if (!src.is_array() || src.size() != dst.size())
        throw Error(ErrorKind::CheckpointCorrupt, "weights for '" + what + "' have the wrong length");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i].get<T>();
    };
    for (auto& p : net.all_parameters()) {
      if (!params.contains(p.name)) throw Error(ErrorKind::CheckpointCorrupt, "missing weights for '" + p.name + "'");
      fill(p.value, params[p.name], p.name);
    }
    for (auto& b : net.buffers()) {
      if (!buffers.contains(b.name)) throw Error(ErrorKind::CheckpointCorrupt, "missing buffer '" + b.name + "'");
      fill(b.value, buffers[b.name], b.name);
    }
    return {std::move(net), std::move(space)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CheckpointCorrupt, std::string("malformed checkpoint: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::BackboneUnavailable || e.kind() == ErrorKind::CheckpointCorrupt) throw;
    throw Error(ErrorKind::CheckpointCorrupt, e.what());
  }
}

}  // namespace leafbench
