#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rtl/tensor.hpp"

namespace rtl::nn {

using Rng = std::mt19937_64;

enum class LayerType { conv2d, dense, noisy_dense };

std::string_view to_string(LayerType t);

struct LayerKind {
    LayerType type = LayerType::dense;
    std::size_t out = 1;  // out_channels for conv, out_units otherwise
    std::size_t kernel = 1;
    std::size_t stride = 1;
    double sigma0 = 0.5;
    std::size_t padding = 0;  // zero padding on every border (conv only)

    static LayerKind conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride,
                            std::size_t padding = 0);
    static LayerKind dense(std::size_t out_units);
    static LayerKind noisy_dense(std::size_t out_units, double sigma0 = 0.5);
};

struct HeadSpec {
    std::string name;
    std::vector<LayerKind> layers;
};

/// Input shape (per sample), a sequential trunk, then optional parallel heads
/// whose outputs are concatenated in declaration order.
struct NetworkSpec {
    Shape input;
    std::vector<LayerKind> trunk;
    std::vector<HeadSpec> heads;
};

/// Desk-scale Rainbow network: three convolutions feeding a value head
/// (n_atoms outputs) and an advantage head (n_actions * n_atoms outputs),
/// each head being two noisy dense layers.
NetworkSpec rainbow_spec(std::size_t n_actions, std::size_t n_atoms, std::size_t history = 4,
                         std::size_t height = 10, std::size_t width = 10, std::size_t hidden = 128,
                         double sigma0 = 0.5);

struct Param {
    std::string name;  // "w", "b", "w_mu", "b_mu", "w_sigma", "b_sigma"
    Tensor value;
};

struct Layer {
    std::string name;    // "layer{depth}/{stream}"
    std::string stream;  // "trunk" or head name
    std::size_t depth = 0;
    LayerKind kind;
    Shape in_shape;  // per sample
    Shape out_shape;
    std::vector<Param> params;

    std::size_t in_size() const { return shape_size(in_shape); }
    std::size_t out_size() const { return shape_size(out_shape); }
    std::size_t fan_in() const;
};

/// Factorized noise for one noisy layer, already passed through f(x) = sign(x)*sqrt(|x|).
struct FactorizedNoise {
    std::size_t layer_index = 0;
    std::vector<double> in;
    std::vector<double> out;
};

struct NoiseDraw {
    std::vector<FactorizedNoise> layers;
    bool empty() const { return layers.empty(); }
    const FactorizedNoise* find(std::size_t layer_index) const;
};

double scale_noise(double x);

struct ForwardCache {
    std::uint64_t network_id = 0;
    std::uint64_t network_version = 0;
    std::size_t batch = 0;
    std::vector<Tensor> inputs;       // per layer, as fed to the layer
    std::vector<Tensor> pre_act;      // per layer, before ReLU
    std::optional<NoiseDraw> noise;
};

struct ForwardResult {
    Tensor output;
    ForwardCache cache;
};

/// Names of layers ("layer{d}/{stream}") whose parameters must not change.
using FreezeMask = std::set<std::string>;

/// One gradient tensor per parameter, in Network::parameter_names() order.
struct GradientSet {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    const Tensor& get(std::string_view full_name) const;
};

class Network {
public:
    explicit Network(NetworkSpec spec);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    /// Fresh seeded initialization: weights and biases (or noisy means) from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); noisy scales at sigma0/sqrt(fan_in).
    void initialize(std::uint64_t seed);

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t layer_index(std::string_view name) const;
    /// Number of depth positions (l).
    std::size_t depth() const { return depth_; }
    std::vector<std::string> layer_names_at_depth(std::size_t depth) const;
    const Shape& input_shape() const { return spec_.input; }
    std::size_t output_size() const { return output_size_; }
    std::string architecture_hash() const;
    std::string architecture_description() const;

    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
    const Tensor& param(std::string_view full_name) const;
    /// Mutable access invalidates outstanding forward caches.
    Tensor& mutable_param(std::string_view full_name);
    Layer& mutable_layer(std::size_t index);
    void copy_layer_from(const Network& other, std::size_t index);

    /// Batched forward. input has shape [batch, input_shape...]. Without a
    /// noise draw every noisy layer runs on its mean parameters only.
    ForwardResult forward(const Tensor& input, const NoiseDraw* noise = nullptr) const;
    GradientSet backward(const ForwardCache& cache, const Tensor& output_grad) const;
    NoiseDraw sample_noise(Rng& rng) const;
    bool has_noisy_layers() const;

    std::uint64_t id() const { return id_; }
    std::uint64_t version() const { return version_; }

    /// Bitwise parameter equality with another network of the same architecture.
    bool parameters_equal(const Network& other) const;
    /// Rounds every parameter to the nearest 32-bit float.
    void round_to_float();

private:
    void build();
    void touch() { ++version_; }

    NetworkSpec spec_;
    std::vector<Layer> layers_;
    std::size_t depth_ = 0;
    std::size_t trunk_len_ = 0;
    std::size_t output_size_ = 0;
    std::uint64_t id_ = 0;
    std::uint64_t version_ = 0;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1.5e-4;
};

/// Adaptive-moment optimizer state bound to one network's parameter layout.
class Adam {
public:
    Adam(const Network& net, AdamConfig config = {});

    /// Parameters and moments of layers named in the mask are left untouched.
    void apply(Network& net, const GradientSet& grads, const FreezeMask* mask = nullptr);

    std::uint64_t step() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

private:
    AdamConfig config_;
    std::vector<std::string> names_;
    std::vector<std::string> layer_of_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t step_ = 0;
};

}  // namespace rtl::nn
