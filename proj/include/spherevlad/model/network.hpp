#pragma once

// The place-recognition network: a four-layer spherical encoder with batch
// normalization, optional contextual attention and a NetVLAD head.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spherevlad/common/error.hpp"
#include "spherevlad/common/random.hpp"
#include "spherevlad/model/layers.hpp"
#include "spherevlad/model/parameters.hpp"
#include "spherevlad/model/spherical_conv.hpp"
#include "spherevlad/sphere/panorama.hpp"

namespace spherevlad::model {

enum class Variant { SphereVlad, SphereVladPP };

inline std::string to_string(Variant v) { return v == Variant::SphereVlad ? "sphere_vlad" : "sphere_vlad_pp"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "sphere_vlad") return Variant::SphereVlad;
  if (s == "sphere_vlad_pp") return Variant::SphereVladPP;
  throw Error(ErrorCode::BadConfig, "unknown variant '" + s + "' (expected sphere_vlad or sphere_vlad_pp)");
}

struct LayerSpec {
  int channels = 0;
  int bandwidth = 0;
  bool operator==(const LayerSpec&) const = default;
};

struct EncoderConfig {
  int input_bandwidth = 32;
  std::vector<LayerSpec> layers{{16, 16}, {32, 8}, {64, 4}, {16, 4}};
  bool batchnorm = true;
  int oversample = 1;  // hidden layers are sampled on a grid this many times finer

  static EncoderConfig standard() { return {}; }
  static EncoderConfig desk() { return {16, {{16, 8}, {32, 4}, {64, 4}, {16, 4}}, true}; }
  static EncoderConfig tiny() { return {4, {{4, 4}, {4, 2}, {4, 2}, {4, 2}}, true}; }

  /// Bandwidth of the grid a layer's activations live on; the last layer
  /// always uses its own so the local descriptor count stays (2B)^3.
  int grid_bandwidth(std::size_t layer) const {
    return layer + 1 == layers.size() ? layers[layer].bandwidth : oversample * layers[layer].bandwidth;
  }

  int feature_channels() const { return layers.back().channels; }
  int feature_bandwidth() const { return layers.back().bandwidth; }
  int local_count() const {
    const int n = 2 * feature_bandwidth();
    return n * n * n;
  }

  void validate() const {
    if (input_bandwidth < 1) throw Error(ErrorCode::BadConfig, "input_bandwidth must be positive");
    if (oversample < 1) throw Error(ErrorCode::BadConfig, "oversample must be at least 1");
    if (layers.size() < 2) throw Error(ErrorCode::BadConfig, "encoder needs an S2 layer and at least one SO(3) layer");
    int b = input_bandwidth;
    for (const auto& l : layers) {
      if (l.channels < 1) throw Error(ErrorCode::BadConfig, "layer channels must be positive");
      if (l.bandwidth < 1 || l.bandwidth > b)
        throw Error(ErrorCode::BadConfig, "layer bandwidths must be positive and non-increasing");
      b = l.bandwidth;
    }
  }
  bool operator==(const EncoderConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  int clusters = 32;
  Variant variant = Variant::SphereVladPP;
  bool attention = true;  // ablation switch; plain SphereVLAD never attends
  bool haar_pooling = true;  // weight attention keys and VLAD sums by each grid cell's Haar measure

  static ModelConfig standard() { return {}; }
  static ModelConfig desk() { return {EncoderConfig::desk(), 32, Variant::SphereVladPP, true, true}; }
  static ModelConfig tiny() { return {EncoderConfig::tiny(), 4, Variant::SphereVladPP, true, true}; }

  bool uses_attention() const { return variant == Variant::SphereVladPP && attention; }
  int descriptor_dim() const { return clusters * encoder.feature_channels(); }

  void validate() const {
    encoder.validate();
    if (clusters < 2) throw Error(ErrorCode::BadConfig, "clusters must be at least 2");
  }
  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const LayerSpec& l) { j = nlohmann::json::array({l.channels, l.bandwidth}); }
inline void from_json(const nlohmann::json& j, LayerSpec& l) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::BadConfig, "layer spec must be [channels, bandwidth]");
  l = {j[0].get<int>(), j[1].get<int>()};
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_bandwidth", c.encoder.input_bandwidth},
       {"layers", c.encoder.layers},
       {"batchnorm", c.encoder.batchnorm},
       {"oversample", c.encoder.oversample},
       {"clusters", c.clusters},
       {"variant", to_string(c.variant)},
       {"attention", c.attention},
       {"haar_pooling", c.haar_pooling}};
}

/// Named presets: "default", "desk" or "tiny".
inline ModelConfig model_preset(const std::string& name) {
  if (name == "default") return ModelConfig::standard();
  if (name == "desk") return ModelConfig::desk();
  if (name == "tiny") return ModelConfig::tiny();
  throw Error(ErrorCode::BadConfig, "unknown model preset '" + name + "'");
}

/// Overlays the keys of j onto c. A "preset" key, if present, is applied first.
inline void apply_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "model config must be a JSON object");
  if (j.contains("preset")) c = model_preset(j.at("preset").get<std::string>());
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") continue;
    else if (key == "input_bandwidth") c.encoder.input_bandwidth = value.get<int>();
    else if (key == "layers") c.encoder.layers = value.get<std::vector<LayerSpec>>();
    else if (key == "batchnorm") c.encoder.batchnorm = value.get<bool>();
    else if (key == "oversample") c.encoder.oversample = value.get<int>();
    else if (key == "clusters") c.clusters = value.get<int>();
    else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
    else if (key == "attention") c.attention = value.get<bool>();
    else if (key == "haar_pooling") c.haar_pooling = value.get<bool>();
    else throw Error(ErrorCode::BadConfig, "unknown model config key '" + key + "'");
  }
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  apply_json(j, c);
}

struct GlobalDescriptor {
  std::vector<double> values;
  Variant variant = Variant::SphereVladPP;
  std::int64_t frame_id = -1;
};

struct ForwardMode {
  bool training = false;        // batch statistics in BN
  bool update_running = false;  // fold batch statistics into the running averages
};

template <typename T>
class Model {
 public:
  struct Cache {
    std::vector<S2ConvCache<T>> s2;
    std::vector<std::vector<SO3ConvCache<T>>> so3;                // [layer-1][sample]
    std::vector<std::vector<harmonic::SO3FeatureMap<T>>> output;  // post-activation, [layer][sample]
    std::vector<BatchNormCache<T>> bn;
    std::vector<AttentionCache<T>> attention;
    std::vector<VladCache<T>> vlad;
  };

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    declare();
    if (cfg_.haar_pooling) {
      pool_weights_ = haar_cell_weights<T>(cfg_.encoder.feature_bandwidth());
      for (auto& w : pool_weights_) w *= static_cast<T>(pool_weights_.size());  // mean one
    }
  }

  /// Random initialization from a seed.
  static Model random(const ModelConfig& cfg, std::uint64_t seed) {
    Model m(cfg);
    Rng rng(seed);
    m.initialize(rng);
    return m;
  }

  void initialize(Rng& rng) {
    const auto& layers = cfg_.encoder.layers;
    init_s2_filters<T>(params_.at(filter_name(0)).data, 1, rng);
    for (std::size_t i = 1; i < layers.size(); ++i)
      init_so3_filters<T>(params_.at(filter_name(i)).data, layers[i - 1].channels, layers[i].bandwidth,
                          static_cast<std::size_t>(layers[i].channels) * layers[i - 1].channels, rng);
    const int c = cfg_.encoder.feature_channels();
    if (cfg_.uses_attention()) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(c));
      for (const char* name : {"att.wq", "att.wk", "att.wv"})
        for (auto& v : params_.at(name).data) v = static_cast<T>(rng.normal(0.0, sd));
    }
    for (auto& v : params_.at("vlad.centroids").data) v = static_cast<T>(rng.normal(0.0, 0.1));
    const double sd = 1.0 / std::sqrt(static_cast<double>(c));
    for (auto& v : params_.at("vlad.w").data) v = static_cast<T>(rng.normal(0.0, sd));
    for (auto& v : params_.at("vlad.b").data) v = static_cast<T>(rng.normal(0.0, 0.1));
    initialized_ = true;
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  ParameterSet<T>& buffers() { return buffers_; }
  const ParameterSet<T>& buffers() const { return buffers_; }
  bool initialized() const { return initialized_; }
  void mark_initialized() { initialized_ = true; }

  static std::string filter_name(std::size_t layer) { return "conv" + std::to_string(layer) + ".filters"; }
  static std::string bn_name(std::size_t layer, const char* what) {
    return "bn" + std::to_string(layer) + "." + what;
  }

  /// Runs the encoder on each input and returns its C x L local feature matrix.
  std::vector<Matrix<T>> encode(const std::vector<harmonic::S2Signal<T>>& inputs, ForwardMode mode, Cache* cache) {
    require_ready();
    const auto& layers = cfg_.encoder.layers;
    const std::size_t n = inputs.size();
    for (const auto& in : inputs)
      if (in.channels != 1 || in.bandwidth != cfg_.encoder.input_bandwidth)
        throw Error(ErrorCode::ShapeMismatch, "input panorama bandwidth " + std::to_string(in.bandwidth) +
                                                  " does not match the model's " +
                                                  std::to_string(cfg_.encoder.input_bandwidth));
    if (cache) {
      cache->s2.assign(n, {});
      cache->so3.assign(layers.size() - 1, std::vector<SO3ConvCache<T>>(n));
      cache->output.assign(layers.size(), {});
      cache->bn.assign(layers.size(), {});
    }
    std::vector<harmonic::SO3FeatureMap<T>> act(n);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::span<const T> filters = params_.at(filter_name(i)).data;
      for (std::size_t b = 0; b < n; ++b) {
        const int grid = cfg_.encoder.grid_bandwidth(i);
        act[b] = i == 0 ? s2_conv_forward<T>(inputs[b], filters, layers[0].channels, layers[0].bandwidth,
                                             cache ? &cache->s2[b] : nullptr, grid)
                        : so3_conv_forward<T>(act[b], filters, layers[i].channels, layers[i].bandwidth,
                                              cache ? &cache->so3[i - 1][b] : nullptr, grid);
      }
      if (cfg_.encoder.batchnorm) {
        BatchNormSettings s;
        s.training = mode.training;
        s.update_running = mode.update_running;
        batchnorm_forward<T>(act, params_.at(bn_name(i, "gamma")).data, params_.at(bn_name(i, "beta")).data,
                             buffers_.at(bn_name(i, "running_mean")).data, buffers_.at(bn_name(i, "running_var")).data,
                             s, cache ? &cache->bn[i] : nullptr);
      }
      for (auto& a : act) relu_forward(a);
      if (cache) cache->output[i] = act;
    }
    std::vector<Matrix<T>> out;
    out.reserve(n);
    for (const auto& a : act) out.push_back(ConstMatrixMap<T>(a.values.data(), a.channels, a.grid_size()));
    return out;
  }

  /// Encoder output after the attention block (identity when attention is off).
  std::vector<Matrix<T>> local_features(const std::vector<harmonic::S2Signal<T>>& inputs, ForwardMode mode,
                                        Cache* cache) {
    auto feats = encode(inputs, mode, cache);
    if (cache) cache->attention.assign(feats.size(), {});
    if (cfg_.uses_attention()) {
      const auto w = attention_weights();
      for (std::size_t b = 0; b < feats.size(); ++b)
        feats[b] = attention_forward<T>(feats[b], w, cache ? &cache->attention[b] : nullptr);
    }
    return feats;
  }

  std::vector<Vector<T>> forward(const std::vector<harmonic::S2Signal<T>>& inputs, ForwardMode mode, Cache* cache) {
    const auto feats = local_features(inputs, mode, cache);
    if (cache) cache->vlad.assign(feats.size(), {});
    const auto v = vlad_weights();
    std::vector<Vector<T>> out;
    out.reserve(feats.size());
    for (std::size_t b = 0; b < feats.size(); ++b)
      out.push_back(netvlad_forward<T>(feats[b], v, cache ? &cache->vlad[b] : nullptr));
    return out;
  }

  /// Soft assignment (L x K) of one input's local descriptors.
  Matrix<T> assignment(const harmonic::S2Signal<T>& input) {
    const auto feats = local_features({input}, {}, nullptr);
    return soft_assign<T>(feats.front(), vlad_weights());
  }

  /// Gradients of sum_b <grad_out[b], descriptor[b]> for a cached forward pass.
  ParameterSet<T> backward(const Cache& cache, const std::vector<Vector<T>>& grad_out) {
    const auto& layers = cfg_.encoder.layers;
    ParameterSet<T> grads = params_.zeros_like();
    const std::size_t n = grad_out.size();
    const auto v = vlad_weights();
    std::vector<harmonic::SO3FeatureMap<T>> g(n);
    for (std::size_t b = 0; b < n; ++b) {
      auto vg = netvlad_backward<T>(grad_out[b], cache.vlad[b], v);
      add_to(grads.at("vlad.centroids"), vg.centroids.data());
      add_to(grads.at("vlad.w"), vg.w.data());
      add_to(grads.at("vlad.b"), vg.b.data());
      Matrix<T> gf = std::move(vg.f);
      if (cfg_.uses_attention()) {
        auto ag = attention_backward<T>(gf, cache.attention[b], attention_weights());
        add_to(grads.at("att.wq"), ag.wq.data());
        add_to(grads.at("att.wk"), ag.wk.data());
        add_to(grads.at("att.wv"), ag.wv.data());
        grads.at("att.omega").data[0] += ag.omega;
        gf = std::move(ag.f);
      }
      g[b] = harmonic::SO3FeatureMap<T>(layers.back().channels, layers.back().bandwidth);
      std::copy(gf.data(), gf.data() + gf.size(), g[b].values.begin());
    }
    for (std::size_t i = layers.size(); i-- > 0;) {
      for (std::size_t b = 0; b < n; ++b) relu_backward(g[b], cache.output[i][b]);
      if (cfg_.encoder.batchnorm)
        batchnorm_backward<T>(g, cache.bn[i], params_.at(bn_name(i, "gamma")).data,
                              grads.at(bn_name(i, "gamma")).data, grads.at(bn_name(i, "beta")).data);
      std::span<T> gfilt = grads.at(filter_name(i)).data;
      for (std::size_t b = 0; b < n; ++b) {
        if (i == 0) s2_conv_backward<T>(g[b], cache.s2[b], gfilt);
        else g[b] = so3_conv_backward<T>(g[b], cache.so3[i - 1][b], gfilt);
      }
    }
    return grads;
  }

  /// Inference-mode global descriptor of one panorama.
  GlobalDescriptor describe(const sphere::SphericalPanorama& pano) {
    const auto out = forward({pano.to_signal<T>()}, {}, nullptr);
    GlobalDescriptor d;
    d.values.assign(out.front().data(), out.front().data() + out.front().size());
    d.variant = cfg_.variant;
    d.frame_id = pano.frame_id;
    return d;
  }

 private:
  void declare() {
    const auto& layers = cfg_.encoder.layers;
    auto sz = [](int v) { return static_cast<std::size_t>(v); };
    params_.add(filter_name(0), {sz(layers[0].channels), 1, harmonic::s2_coefficient_count(layers[0].bandwidth)});
    for (std::size_t i = 1; i < layers.size(); ++i)
      params_.add(filter_name(i), {sz(layers[i].channels), sz(layers[i - 1].channels),
                                   harmonic::so3_coefficient_count(layers[i].bandwidth)});
    if (cfg_.encoder.batchnorm) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        params_.add(bn_name(i, "gamma"), {sz(layers[i].channels)}, T(1));
        params_.add(bn_name(i, "beta"), {sz(layers[i].channels)}, T(0));
        buffers_.add(bn_name(i, "running_mean"), {sz(layers[i].channels)}, T(0));
        buffers_.add(bn_name(i, "running_var"), {sz(layers[i].channels)}, T(1));
      }
    }
    const std::size_t c = sz(cfg_.encoder.feature_channels()), k = sz(cfg_.clusters);
    if (cfg_.uses_attention()) {
      const std::size_t ck = sz(attention_key_channels(static_cast<int>(c)));
      params_.add("att.wq", {ck, c});
      params_.add("att.wk", {ck, c});
      params_.add("att.wv", {c, c});
      params_.add("att.omega", {1});
    }
    params_.add("vlad.centroids", {k, c});
    params_.add("vlad.w", {k, c});
    params_.add("vlad.b", {k});
  }

  void require_ready() const {
    if (!initialized_) throw Error(ErrorCode::UninitializedWeights, "model weights have not been initialized or loaded");
  }

  static ConstMatrixMap<T> as_matrix(const Tensor<T>& t) {
    return ConstMatrixMap<T>(t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
                             static_cast<Eigen::Index>(t.shape[1]));
  }

  AttentionWeights<T> attention_weights() const {
    return {as_matrix(params_.at("att.wq")), as_matrix(params_.at("att.wk")), as_matrix(params_.at("att.wv")),
            params_.at("att.omega").data[0], pool_weights_};
  }

  VladWeights<T> vlad_weights() const {
    return {as_matrix(params_.at("vlad.centroids")), as_matrix(params_.at("vlad.w")), params_.at("vlad.b").data,
            pool_weights_};
  }

  static void add_to(Tensor<T>& t, const T* src) {
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += src[i];
  }

  ModelConfig cfg_;
  ParameterSet<T> params_;
  ParameterSet<T> buffers_;
  std::vector<T> pool_weights_;
  bool initialized_ = false;
};

}  // namespace spherevlad::model
