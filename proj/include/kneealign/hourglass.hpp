#pragma once

// Encoder/decoder hourglass whose skip connections pass through attention
// gates.
//
//   stem:       3x3 conv 1 -> N, relu
//   encoder i:  residual block at 1/2^i resolution (skip s_i), then 2x2 max pool
//   bottleneck: residual block at 1/2^d resolution
//   decoder i:  g' = res_block(upsample(conv1x1(g)) + gate(s_i, g)), i = d-1 .. 0
//   head:       1x1 conv N -> K (zero-initialised)
//
// Channels at level i are min(N * 2^i, 4N). Residual blocks are two 3x3 convs
// with an identity (or 1x1 projection) shortcut. The gate for skip s_i is fed
// by the decoder feature of the next coarser level.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kneealign/config.hpp"
#include "kneealign/ops.hpp"
#include "kneealign/weights_io.hpp"

namespace ka {

struct HourglassConfig {
  int depth = 3;
  int width = 8;
  int landmarks = 2;
  int input_height = 64;
  int input_width = 64;
  double sigma_target = 2.5;
  double wing_w = 10.0;
  double wing_epsilon = 2.0;
  double learning_rate = 1e-3;
  double lr_final_factor = 1.0;  // cosine decay to learning_rate * factor over the epochs; 1 = constant
  int epochs = 40;
  int batch_size = 4;
  std::uint64_t seed = 1;
  double softargmax_beta = 1.0;
  double heatmap_loss_weight = 0.0;
  bool attention_gates = true;
  bool flip_augment = false;

  int channels(int level) const { return std::min(width << level, 4 * width); }
  int gate_channels(int level) const { return std::max(channels(level) / 2, 1); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw Error(Errc::ConfigError, msg); };
    if (depth < 1) fail("depth must be >= 1");
    if (width < 4) fail("width must be >= 4");
    if (landmarks < 1) fail("landmarks must be >= 1");
    const int step = 1 << depth;
    if (input_height <= 0 || input_width <= 0 || input_height % step || input_width % step) {
      fail("input size must be positive and divisible by 2^depth");
    }
    if (!(sigma_target > 0) || !(wing_w > 0) || !(wing_epsilon > 0)) fail("sigma/wing parameters must be > 0");
    if (!(learning_rate > 0)) fail("learning_rate must be > 0");
    if (!(lr_final_factor > 0 && lr_final_factor <= 1)) fail("lr_final_factor must be in (0, 1]");
    if (epochs < 0 || batch_size < 1) fail("epochs must be >= 0 and batch_size >= 1");
    if (!(softargmax_beta > 0)) fail("softargmax_beta must be > 0");
    if (heatmap_loss_weight < 0) fail("heatmap_loss_weight must be >= 0");
  }

  static const std::set<std::string>& keys() {
    static const std::set<std::string> k{"depth", "width", "landmarks", "input_height", "input_width",
                                         "sigma_target", "wing_w", "wing_epsilon", "learning_rate", "lr_final_factor",
                                         "epochs", "batch_size", "seed", "softargmax_beta",
                                         "heatmap_loss_weight", "attention_gates", "flip_augment"};
    return k;
  }

  KeyValueConfig to_key_values() const {
    KeyValueConfig kv;
    kv.set("depth", std::to_string(depth));
    kv.set("width", std::to_string(width));
    kv.set("landmarks", std::to_string(landmarks));
    kv.set("input_height", std::to_string(input_height));
    kv.set("input_width", std::to_string(input_width));
    kv.set("sigma_target", format_double(sigma_target));
    kv.set("wing_w", format_double(wing_w));
    kv.set("wing_epsilon", format_double(wing_epsilon));
    kv.set("learning_rate", format_double(learning_rate));
    kv.set("lr_final_factor", format_double(lr_final_factor));
    kv.set("epochs", std::to_string(epochs));
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("seed", std::to_string(seed));
    kv.set("softargmax_beta", format_double(softargmax_beta));
    kv.set("heatmap_loss_weight", format_double(heatmap_loss_weight));
    kv.set("attention_gates", attention_gates ? "1" : "0");
    kv.set("flip_augment", flip_augment ? "1" : "0");
    return kv;
  }

  /// Overrides fields present in `kv`; keys outside keys() are ignored here so
  /// a larger run config can carry them.
  void apply(const KeyValueConfig& kv, const std::string& prefix = {}) {
    auto key = [&](const char* k) { return prefix + k; };
    depth = static_cast<int>(kv.get_int(key("depth"), depth));
    width = static_cast<int>(kv.get_int(key("width"), width));
    landmarks = static_cast<int>(kv.get_int(key("landmarks"), landmarks));
    input_height = static_cast<int>(kv.get_int(key("input_height"), input_height));
    input_width = static_cast<int>(kv.get_int(key("input_width"), input_width));
    sigma_target = kv.get_double(key("sigma_target"), sigma_target);
    wing_w = kv.get_double(key("wing_w"), wing_w);
    wing_epsilon = kv.get_double(key("wing_epsilon"), wing_epsilon);
    learning_rate = kv.get_double(key("learning_rate"), learning_rate);
    lr_final_factor = kv.get_double(key("lr_final_factor"), lr_final_factor);
    epochs = static_cast<int>(kv.get_int(key("epochs"), epochs));
    batch_size = static_cast<int>(kv.get_int(key("batch_size"), batch_size));
    seed = static_cast<std::uint64_t>(kv.get_int(key("seed"), static_cast<long long>(seed)));
    softargmax_beta = kv.get_double(key("softargmax_beta"), softargmax_beta);
    heatmap_loss_weight = kv.get_double(key("heatmap_loss_weight"), heatmap_loss_weight);
    attention_gates = kv.get_bool(key("attention_gates"), attention_gates);
    flip_augment = kv.get_bool(key("flip_augment"), flip_augment);
  }

  static HourglassConfig from_key_values(const KeyValueConfig& kv) {
    kv.reject_unknown(keys());
    HourglassConfig c;
    c.apply(kv);
    c.validate();
    return c;
  }
};

template <class T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  int padding = 0;

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, 1, padding); }
};

template <class T>
struct ResidualBlock {
  ConvLayer<T> conv1;
  ConvLayer<T> conv2;
  std::optional<ConvLayer<T>> projection;

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = conv2(relu(conv1(x)));
    return relu(add(h, projection ? (*projection)(x) : x));
  }
};

/// alpha = sigmoid(psi(relu(W_x x + upsample(W_g g)))); output = x * alpha.
/// W_x, W_g and psi are 1x1 convolutions; psi has a single output channel.
template <class T>
struct AttentionGate {
  ConvLayer<T> skip_proj;
  ConvLayer<T> gate_proj;
  ConvLayer<T> psi;

  Tensor<T> coefficients(const Tensor<T>& x, const Tensor<T>& g) const {
    Tensor<T> gp = gate_proj(g);
    if (gp.dim(2) != x.dim(2) || gp.dim(3) != x.dim(3)) {
      if (gp.dim(2) * 2 != x.dim(2) || gp.dim(3) * 2 != x.dim(3)) {
        throw Error(Errc::ShapeMismatch, "attention gate: gating feature must be same size or half of skip");
      }
      gp = upsample_nearest2(gp);
    }
    return sigmoid(psi(relu(add(skip_proj(x), gp))));
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& g) const { return mul(x, coefficients(x, g)); }
};

template <class T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
class HourglassModel {
 public:
  explicit HourglassModel(HourglassConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    const int d = config_.depth;
    stem_ = make_conv(rng, 1, config_.channels(0), 3, 1.0);
    for (int i = 0; i < d; ++i) {
      const int in = i == 0 ? config_.channels(0) : config_.channels(i - 1);
      encoder_.push_back(make_block(rng, in, config_.channels(i)));
    }
    bottleneck_ = make_block(rng, config_.channels(d - 1), config_.channels(d));
    for (int i = 0; i < d; ++i) {
      up_proj_.push_back(make_conv(rng, config_.channels(i + 1), config_.channels(i), 1, 1.0));
      decoder_.push_back(make_block(rng, config_.channels(i), config_.channels(i)));
      gates_.push_back(AttentionGate<T>{make_conv(rng, config_.channels(i), config_.gate_channels(i), 1, 1.0),
                                        make_conv(rng, config_.channels(i + 1), config_.gate_channels(i), 1, 1.0),
                                        make_conv(rng, config_.gate_channels(i), 1, 1, 1.0)});
    }
    head_ = make_conv(rng, config_.channels(0), config_.landmarks, 1, 0.0);
  }

  const HourglassConfig& config() const { return config_; }

  /// image [N,1,H,W] -> heatmap logits [N,K,H,W]. When `gate_maps` is given,
  /// the attention coefficients of each level (fine to coarse) are appended.
  Tensor<T> forward(const Tensor<T>& image, std::vector<Tensor<T>>* gate_maps = nullptr) const {
    if (image.rank() != 4 || image.dim(1) != 1 || image.dim(2) != config_.input_height ||
        image.dim(3) != config_.input_width) {
      throw Error(Errc::ShapeMismatch, "hourglass input " + shape_str(image.shape()) + " does not match config " +
                                           std::to_string(config_.input_height) + "x" +
                                           std::to_string(config_.input_width));
    }
    const int d = config_.depth;
    std::vector<Tensor<T>> skips;
    Tensor<T> x = relu(stem_(image));
    for (int i = 0; i < d; ++i) {
      skips.push_back(encoder_[static_cast<std::size_t>(i)](x));
      x = maxpool2(skips.back());
    }
    Tensor<T> g = bottleneck_(x);
    if (gate_maps) gate_maps->assign(static_cast<std::size_t>(d), Tensor<T>());
    for (int i = d - 1; i >= 0; --i) {
      const auto ui = static_cast<std::size_t>(i);
      Tensor<T> skip = skips[ui];
      if (config_.attention_gates) {
        Tensor<T> alpha = gates_[ui].coefficients(skip, g);
        if (gate_maps) (*gate_maps)[ui] = alpha;
        skip = mul(skip, alpha);
      }
      Tensor<T> up = upsample_nearest2(up_proj_[ui](g));
      g = decoder_[ui](add(up, skip));
    }
    return head_(g);
  }

  std::vector<NamedParameter<T>> named_parameters() const {
    std::vector<NamedParameter<T>> out;
    auto conv = [&](const std::string& name, const ConvLayer<T>& c) {
      out.push_back({name + ".weight", c.weight});
      out.push_back({name + ".bias", c.bias});
    };
    auto block = [&](const std::string& name, const ResidualBlock<T>& b) {
      conv(name + ".conv1", b.conv1);
      conv(name + ".conv2", b.conv2);
      if (b.projection) conv(name + ".projection", *b.projection);
    };
    conv("stem", stem_);
    for (std::size_t i = 0; i < encoder_.size(); ++i) block("encoder" + std::to_string(i), encoder_[i]);
    block("bottleneck", bottleneck_);
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const std::string lvl = std::to_string(i);
      conv("up" + lvl, up_proj_[i]);
      block("decoder" + lvl, decoder_[i]);
      conv("gate" + lvl + ".skip", gates_[i].skip_proj);
      conv("gate" + lvl + ".gating", gates_[i].gate_proj);
      conv("gate" + lvl + ".psi", gates_[i].psi);
    }
    conv("head", head_);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& p : named_parameters()) p.tensor.node()->grad.clear();
  }

  /// Drives every gate to alpha == 1 (psi weights 0, psi bias large), which
  /// turns the network into the plain hourglass with identity skips.
  void force_gates_open(T bias = T(60)) {
    for (auto& gate : gates_) {
      for (auto& w : gate.psi.weight.data()) w = T(0);
      for (auto& b : gate.psi.bias.data()) b = bias;
    }
  }

  std::vector<NamedArray> to_arrays() const {
    std::vector<NamedArray> out;
    for (auto& p : named_parameters()) {
      NamedArray a{p.name, p.tensor.shape(), {}};
      a.values.reserve(p.tensor.numel());
      for (T v : p.tensor.data()) a.values.push_back(static_cast<float>(v));
      out.push_back(std::move(a));
    }
    return out;
  }

  /// Copies values from `arrays` by name; every parameter must be present
  /// with a matching shape.
  void load_arrays(const std::vector<NamedArray>& arrays) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (auto& p : named_parameters()) {
      auto it = by_name.find(p.name);
      if (it == by_name.end()) throw Error(Errc::SchemaMismatch, "weights missing tensor '" + p.name + "'");
      if (it->second->shape != p.tensor.shape()) {
        throw Error(Errc::ShapeMismatch, "weights tensor '" + p.name + "' has shape " +
                                             shape_str(it->second->shape) + ", model expects " +
                                             shape_str(p.tensor.shape()));
      }
      auto dst = p.tensor.data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    }
  }

  /// Same architecture and values in another scalar type.
  template <class U>
  HourglassModel<U> cast() const {
    HourglassModel<U> other(config_);
    other.load_arrays_exact(*this);
    return other;
  }

  template <class U>
  void load_arrays_exact(const HourglassModel<U>& src) {
    auto mine = named_parameters();
    auto theirs = src.named_parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) {
      auto dst = mine[i].tensor.data();
      auto from = theirs[i].tensor.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(from[j]);
    }
  }

  /// Checkpoint = KAW1 weights at `path` plus a `key = value` sidecar at
  /// path + ".cfg".
  void save(const std::filesystem::path& path) const {
    save_weights(path, to_arrays());
    config_.to_key_values().save(sidecar_path(path), "# hourglass model config\n");
  }

  static HourglassModel load(const std::filesystem::path& path) {
    HourglassConfig cfg = HourglassConfig::from_key_values(KeyValueConfig::load(sidecar_path(path)));
    HourglassModel model(cfg);
    model.load_arrays(load_weights(path));
    return model;
  }

  static std::filesystem::path sidecar_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".cfg");
  }

  // Building blocks are exposed for reference implementations in tests.
  const ConvLayer<T>& stem() const { return stem_; }
  const std::vector<ResidualBlock<T>>& encoder() const { return encoder_; }
  const ResidualBlock<T>& bottleneck() const { return bottleneck_; }
  const std::vector<ResidualBlock<T>>& decoder() const { return decoder_; }
  const std::vector<ConvLayer<T>>& up_projections() const { return up_proj_; }
  const std::vector<AttentionGate<T>>& gates() const { return gates_; }
  const ConvLayer<T>& head() const { return head_; }

 private:
  static ConvLayer<T> make_conv(std::mt19937_64& rng, int in, int out, int k, double gain) {
    // He-normal fan-in initialisation scaled by `gain`; biases start at zero.
    const double stddev = gain * std::sqrt(2.0 / static_cast<double>(in * k * k));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<T> w(static_cast<std::size_t>(out) * in * k * k);
    for (auto& v : w) v = static_cast<T>(stddev * normal(rng));
    return ConvLayer<T>{Tensor<T>::parameter({out, in, k, k}, std::move(w)),
                        Tensor<T>::parameter({out}, std::vector<T>(static_cast<std::size_t>(out), T(0))), k / 2};
  }

  static ResidualBlock<T> make_block(std::mt19937_64& rng, int in, int out) {
    ResidualBlock<T> b;
    b.conv1 = make_conv(rng, in, out, 3, 1.0);
    b.conv2 = make_conv(rng, out, out, 3, 0.5);
    if (in != out) b.projection = make_conv(rng, in, out, 1, 1.0);
    return b;
  }

  HourglassConfig config_;
  ConvLayer<T> stem_;
  std::vector<ResidualBlock<T>> encoder_;
  ResidualBlock<T> bottleneck_;
  std::vector<ConvLayer<T>> up_proj_;
  std::vector<ResidualBlock<T>> decoder_;
  std::vector<AttentionGate<T>> gates_;
  ConvLayer<T> head_;
};

}  // namespace ka
