#include "rtl/nn.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <memory>
#include <utility>

#include <cblas.h>

#include "rtl/error.hpp"
#include "rtl/hash.hpp"

namespace rtl::nn {

namespace {

std::uint64_t next_network_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

// Index of the parameter tensors inside Layer::params.
constexpr std::size_t kW = 0;
constexpr std::size_t kB = 1;
constexpr std::size_t kWSigma = 2;
constexpr std::size_t kBSigma = 3;

struct ConvGeom {
    std::size_t in_c, in_h, in_w, out_c, out_h, out_w, k, s, pad;
    std::size_t patch() const { return in_c * k * k; }
    std::size_t positions() const { return out_h * out_w; }
    std::size_t in_per() const { return in_c * in_h * in_w; }
};

ConvGeom conv_geom(const Layer& layer) {
    return {layer.in_shape[0],  layer.in_shape[1],  layer.in_shape[2], layer.out_shape[0], layer.out_shape[1],
            layer.out_shape[2], layer.kind.kernel, layer.kind.stride, layer.kind.padding};
}

// Row-major C = alpha * op(A) * op(B) + beta * C.
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
          const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
    // Trials are the unit of parallelism; keep each product on the calling thread.
    static const bool single_threaded = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)single_threaded;
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
                c, static_cast<int>(ldc));
}

// Output positions [lo, hi) along one axis whose kernel tap `kk` lands inside
// the input rather than the padding.
struct TapRange {
    std::size_t lo, hi;
};

TapRange tap_range(std::size_t kk, std::size_t in, std::size_t out, const ConvGeom& g) {
    // o * s + kk - pad must lie in [0, in)
    const std::size_t lo = kk >= g.pad ? 0 : (g.pad - kk + g.s - 1) / g.s;
    const std::size_t limit = in + g.pad;  // o * s + kk < in + pad
    const std::size_t hi = kk >= limit ? 0 : std::min(out, (limit - kk - 1) / g.s + 1);
    return {std::min(lo, hi), hi};
}

// Scratch buffer that skips zero-filling; every element is written before use.
std::unique_ptr<double[]> scratch(std::size_t n) { return std::unique_ptr<double[]>(new double[n]); }

// Unrolls a whole batch into a [patch, batch * positions] matrix; padded cells read as 0.
void im2col(const ConvGeom& g, const double* x, std::size_t batch, double* col) {
    const std::size_t P = g.positions(), N = batch * P;
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            const auto ry = tap_range(ky, g.in_h, g.out_h, g);
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const auto rx = tap_range(kx, g.in_w, g.out_w, g);
                double* row = col + ((c * g.k + ky) * g.k + kx) * N;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xc = x + b * g.in_per() + c * g.in_h * g.in_w;
                    double* dst = row + b * P;
                    std::fill(dst, dst + ry.lo * g.out_w, 0.0);
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        double* d = dst + oy * g.out_w;
                        const double* src = xc + (oy * g.s + ky - g.pad) * g.in_w + (rx.lo * g.s + kx - g.pad);
                        std::fill(d, d + rx.lo, 0.0);
                        for (std::size_t j = 0; j < rx.hi - rx.lo; ++j) d[rx.lo + j] = src[j * g.s];
                        std::fill(d + rx.hi, d + g.out_w, 0.0);
                    }
                    std::fill(dst + ry.hi * g.out_w, dst + P, 0.0);
                }
            }
        }
}

// Adjoint of im2col: scatters column gradients back onto the batch input.
void col2im(const ConvGeom& g, const double* col, std::size_t batch, double* dx) {
    const std::size_t P = g.positions(), N = batch * P;
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            const auto ry = tap_range(ky, g.in_h, g.out_h, g);
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const auto rx = tap_range(kx, g.in_w, g.out_w, g);
                const double* row = col + ((c * g.k + ky) * g.k + kx) * N;
                for (std::size_t b = 0; b < batch; ++b) {
                    double* xc = dx + b * g.in_per() + c * g.in_h * g.in_w;
                    const double* src = row + b * P;
                    for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                        double* d = xc + (oy * g.s + ky - g.pad) * g.in_w + (rx.lo * g.s + kx - g.pad);
                        const double* s_row = src + oy * g.out_w + rx.lo;
                        for (std::size_t j = 0; j < rx.hi - rx.lo; ++j) d[j * g.s] += s_row[j];
                    }
                }
            }
        }
}

void conv_forward(const Layer& layer, const double* x, double* z, std::size_t batch) {
    const auto g = conv_geom(layer);
    const double* w = layer.params[kW].value.data().data();
    const double* bias = layer.params[kB].value.data().data();
    const std::size_t K = g.patch(), P = g.positions(), N = batch * P;
    const auto col = scratch(K * N), zt = scratch(g.out_c * N);
    im2col(g, x, batch, col.get());
    gemm(false, false, g.out_c, N, K, w, K, col.get(), N, 0.0, zt.get(), N);
    // [out_c, batch, P] -> [batch, out_c, P]
    for (std::size_t o = 0; o < g.out_c; ++o)
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = zt.get() + o * N + b * P;
            double* dst = z + (b * g.out_c + o) * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bias[o];
        }
}

void conv_backward(const Layer& layer, const double* x, const double* dz, std::size_t batch,
                   double* dw, double* db, double* dx) {
    const auto g = conv_geom(layer);
    const double* w = layer.params[kW].value.data().data();
    const std::size_t K = g.patch(), P = g.positions(), N = batch * P;
    const auto col = scratch(K * N), dzt = scratch(g.out_c * N);
    im2col(g, x, batch, col.get());
    for (std::size_t o = 0; o < g.out_c; ++o) {
        double sum = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* src = dz + (b * g.out_c + o) * P;
            std::copy_n(src, P, dzt.get() + o * N + b * P);
            for (std::size_t p = 0; p < P; ++p) sum += src[p];
        }
        db[o] += sum;
    }
    gemm(false, true, g.out_c, K, N, dzt.get(), N, col.get(), N, 1.0, dw, K);
    if (!dx) return;
    const auto dcol = scratch(K * N);
    gemm(true, false, K, N, g.out_c, w, K, dzt.get(), N, 0.0, dcol.get(), N);
    col2im(g, dcol.get(), batch, dx);
}

// Effective weights and biases of a dense or noisy-dense layer for one draw.
struct DenseWeights {
    std::vector<double> w;
    std::vector<double> b;
};

const double* effective_weights(const Layer& layer, const FactorizedNoise* eps, DenseWeights& scratch,
                                const double** bias_out) {
    if (layer.kind.type != LayerType::noisy_dense || eps == nullptr) {
        *bias_out = layer.params[kB].value.data().data();
        return layer.params[kW].value.data().data();
    }
    const std::size_t in = layer.in_size();
    const std::size_t out = layer.out_size();
    const auto& mu_w = layer.params[kW].value;
    const auto& mu_b = layer.params[kB].value;
    const auto& sg_w = layer.params[kWSigma].value;
    const auto& sg_b = layer.params[kBSigma].value;
    scratch.w.resize(in * out);
    scratch.b.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        const double eo = eps->out[o];
        for (std::size_t i = 0; i < in; ++i)
            scratch.w[o * in + i] = mu_w[o * in + i] + sg_w[o * in + i] * (eo * eps->in[i]);
        scratch.b[o] = mu_b[o] + sg_b[o] * eo;
    }
    *bias_out = scratch.b.data();
    return scratch.w.data();
}

void dense_forward(const Layer& layer, const FactorizedNoise* eps, const double* x, double* z,
                   std::size_t batch) {
    const std::size_t in = layer.in_size();
    const std::size_t out = layer.out_size();
    DenseWeights scratch;
    const double* bias = nullptr;
    const double* w = effective_weights(layer, eps, scratch, &bias);
    for (std::size_t b = 0; b < batch; ++b) std::copy_n(bias, out, z + b * out);
    gemm(false, true, batch, out, in, x, in, w, in, 1.0, z, out);
}

void dense_backward(const Layer& layer, const FactorizedNoise* eps, const double* x, const double* dz,
                    std::size_t batch, std::vector<Tensor*>& grads, double* dx) {
    const std::size_t in = layer.in_size();
    const std::size_t out = layer.out_size();
    DenseWeights scratch;
    const double* bias = nullptr;
    const double* w = effective_weights(layer, eps, scratch, &bias);
    double* dw = grads[kW]->data().data();
    double* db = grads[kB]->data().data();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out; ++o) db[o] += dz[b * out + o];
    gemm(true, false, out, in, batch, dz, out, x, in, 1.0, dw, in);
    if (dx) gemm(false, false, batch, in, out, dz, out, w, in, 1.0, dx, in);
    if (layer.kind.type == LayerType::noisy_dense && eps != nullptr) {
        // d(sigma) = d(effective) * eps; gradients w.r.t. the mean are the effective ones.
        double* dsw = grads[kWSigma]->data().data();
        double* dsb = grads[kBSigma]->data().data();
        for (std::size_t o = 0; o < out; ++o) {
            const double eo = eps->out[o];
            for (std::size_t i = 0; i < in; ++i) dsw[o * in + i] = dw[o * in + i] * (eo * eps->in[i]);
            dsb[o] = db[o] * eo;
        }
    }
}

}  // namespace

std::string_view to_string(LayerType t) {
    switch (t) {
        case LayerType::conv2d: return "conv2d";
        case LayerType::dense: return "dense";
        case LayerType::noisy_dense: return "noisy_dense";
    }
    return "unknown";
}

LayerKind LayerKind::conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (out_channels == 0 || kernel == 0 || stride == 0) throw ShapeError("conv2d parameters must be >= 1");
    if (padding >= kernel) throw ShapeError("conv2d padding must be smaller than the kernel");
    return {LayerType::conv2d, out_channels, kernel, stride, 0.0, padding};
}

LayerKind LayerKind::dense(std::size_t out_units) {
    if (out_units == 0) throw ShapeError("dense out_units must be >= 1");
    return {LayerType::dense, out_units, 1, 1, 0.0};
}

LayerKind LayerKind::noisy_dense(std::size_t out_units, double sigma0) {
    if (out_units == 0) throw ShapeError("noisy_dense out_units must be >= 1");
    if (!(sigma0 >= 0.0)) throw ShapeError("noisy_dense sigma0 must be >= 0");
    return {LayerType::noisy_dense, out_units, 1, 1, sigma0};
}

NetworkSpec rainbow_spec(std::size_t n_actions, std::size_t n_atoms, std::size_t history, std::size_t height,
                         std::size_t width, std::size_t hidden, double sigma0) {
    NetworkSpec spec;
    spec.input = {history, height, width};
    spec.trunk = {LayerKind::conv2d(8, 3, 1, 1), LayerKind::conv2d(16, 3, 2, 1), LayerKind::conv2d(16, 3, 1, 1)};
    spec.heads = {
        {"value", {LayerKind::noisy_dense(hidden, sigma0), LayerKind::noisy_dense(n_atoms, sigma0)}},
        {"advantage",
         {LayerKind::noisy_dense(hidden, sigma0), LayerKind::noisy_dense(n_actions * n_atoms, sigma0)}},
    };
    return spec;
}

std::size_t Layer::fan_in() const {
    if (kind.type == LayerType::conv2d) return in_shape[0] * kind.kernel * kind.kernel;
    return in_size();
}

const FactorizedNoise* NoiseDraw::find(std::size_t layer_index) const {
    for (const auto& f : layers)
        if (f.layer_index == layer_index) return &f;
    return nullptr;
}

double scale_noise(double x) {
    return (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)) * std::sqrt(std::abs(x));
}

const Tensor& GradientSet::get(std::string_view full_name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == full_name) return tensors[i];
    throw Error("no gradient named '" + std::string(full_name) + "'");
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)), id_(next_network_id()) { build(); }

Network::Network(const Network& other)
    : spec_(other.spec_),
      layers_(other.layers_),
      depth_(other.depth_),
      trunk_len_(other.trunk_len_),
      output_size_(other.output_size_),
      id_(next_network_id()) {}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        spec_ = other.spec_;
        layers_ = other.layers_;
        depth_ = other.depth_;
        trunk_len_ = other.trunk_len_;
        output_size_ = other.output_size_;
        touch();
    }
    return *this;
}

void Network::build() {
    if (spec_.input.empty()) throw ShapeError("network input shape is empty");
    for (auto d : spec_.input)
        if (d == 0) throw ShapeError("network input dimensions must be positive");
    if (spec_.trunk.empty() && spec_.heads.empty()) throw ShapeError("network has no layers");

    auto make_layer = [](const LayerKind& kind, const Shape& in, std::size_t depth, const std::string& stream) {
        Layer layer;
        layer.name = "layer" + std::to_string(depth) + "/" + stream;
        layer.stream = stream;
        layer.depth = depth;
        layer.kind = kind;
        layer.in_shape = in;
        if (kind.type == LayerType::conv2d) {
            if (in.size() != 3)
                throw ShapeError(layer.name + ": conv2d expects a [channels x height x width] input, got " +
                                 shape_string(in));
            const std::size_t ph = in[1] + 2 * kind.padding, pw = in[2] + 2 * kind.padding;
            if (ph < kind.kernel || pw < kind.kernel)
                throw ShapeError(layer.name + ": kernel " + std::to_string(kind.kernel) +
                                 " larger than padded input " + shape_string(in));
            const std::size_t oh = (ph - kind.kernel) / kind.stride + 1;
            const std::size_t ow = (pw - kind.kernel) / kind.stride + 1;
            layer.out_shape = {kind.out, oh, ow};
            layer.params.push_back({"w", Tensor({kind.out, in[0], kind.kernel, kind.kernel})});
            layer.params.push_back({"b", Tensor({kind.out})});
        } else {
            const std::size_t n_in = shape_size(in);
            layer.out_shape = {kind.out};
            if (kind.type == LayerType::dense) {
                layer.params.push_back({"w", Tensor({kind.out, n_in})});
                layer.params.push_back({"b", Tensor({kind.out})});
            } else {
                layer.params.push_back({"w_mu", Tensor({kind.out, n_in})});
                layer.params.push_back({"b_mu", Tensor({kind.out})});
                layer.params.push_back({"w_sigma", Tensor({kind.out, n_in})});
                layer.params.push_back({"b_sigma", Tensor({kind.out})});
            }
        }
        return layer;
    };

    Shape shape = spec_.input;
    std::size_t depth = 0;
    for (const auto& kind : spec_.trunk) {
        layers_.push_back(make_layer(kind, shape, ++depth, "trunk"));
        shape = layers_.back().out_shape;
    }
    trunk_len_ = layers_.size();
    depth_ = depth;
    if (spec_.heads.empty()) {
        output_size_ = shape_size(shape);
        return;
    }
    output_size_ = 0;
    for (const auto& head : spec_.heads) {
        if (head.layers.empty()) throw ShapeError("head '" + head.name + "' has no layers");
        if (head.name.empty() || head.name == "trunk" || head.name.find('/') != std::string::npos)
            throw ShapeError("invalid head name '" + head.name + "'");
        Shape hs = shape;
        std::size_t hd = depth;
        for (const auto& kind : head.layers) {
            layers_.push_back(make_layer(kind, hs, ++hd, head.name));
            hs = layers_.back().out_shape;
        }
        depth_ = std::max(depth_, hd);
        output_size_ += shape_size(hs);
    }
}

void Network::initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& layer : layers_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.fan_in()));
        std::uniform_real_distribution<double> uni(-bound, bound);
        for (auto& p : layer.params) {
            if (p.name == "w_sigma" || p.name == "b_sigma") {
                p.value.fill(layer.kind.sigma0 * bound);
            } else {
                for (auto& v : p.value.data()) v = uni(rng);
            }
        }
    }
    touch();
}

std::size_t Network::layer_index(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].name == name) return i;
    throw Error("unknown layer '" + std::string(name) + "'");
}

std::vector<std::string> Network::layer_names_at_depth(std::size_t depth) const {
    std::vector<std::string> out;
    for (const auto& l : layers_)
        if (l.depth == depth) out.push_back(l.name);
    return out;
}

std::string Network::architecture_description() const {
    std::string s = "in=" + shape_string(spec_.input);
    for (const auto& l : layers_) {
        s += ";" + l.name + "=" + std::string(to_string(l.kind.type)) + "(" + std::to_string(l.kind.out);
        if (l.kind.type == LayerType::conv2d)
            s += ",k" + std::to_string(l.kind.kernel) + ",s" + std::to_string(l.kind.stride) + ",p" +
                 std::to_string(l.kind.padding);
        s += ")";
        for (const auto& p : l.params) s += "," + p.name + shape_string(p.value.shape());
    }
    return s;
}

std::string Network::architecture_hash() const { return hex64(fnv1a64(architecture_description())); }

std::vector<std::string> Network::parameter_names() const {
    std::vector<std::string> out;
    for (const auto& l : layers_)
        for (const auto& p : l.params) out.push_back(l.name + "/" + p.name);
    return out;
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_)
        for (const auto& p : l.params) n += p.value.size();
    return n;
}

const Tensor& Network::param(std::string_view full_name) const {
    const auto slash = full_name.rfind('/');
    if (slash == std::string_view::npos) throw Error("bad parameter name '" + std::string(full_name) + "'");
    const auto& layer = layers_[layer_index(full_name.substr(0, slash))];
    const std::string leaf(full_name.begin() + static_cast<std::ptrdiff_t>(slash) + 1, full_name.end());
    for (const auto& p : layer.params)
        if (p.name == leaf) return p.value;
    throw Error("unknown parameter '" + std::string(full_name) + "'");
}

Tensor& Network::mutable_param(std::string_view full_name) {
    touch();
    return const_cast<Tensor&>(std::as_const(*this).param(full_name));
}

Layer& Network::mutable_layer(std::size_t index) {
    touch();
    return layers_.at(index);
}

void Network::copy_layer_from(const Network& other, std::size_t index) {
    if (architecture_hash() != other.architecture_hash())
        throw ArchitectureMismatch("cannot copy layer between architectures " + architecture_hash() + " and " +
                                   other.architecture_hash());
    layers_.at(index).params = other.layers_.at(index).params;
    touch();
}

bool Network::has_noisy_layers() const {
    return std::any_of(layers_.begin(), layers_.end(),
                       [](const Layer& l) { return l.kind.type == LayerType::noisy_dense; });
}

NoiseDraw Network::sample_noise(Rng& rng) const {
    NoiseDraw draw;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.kind.type != LayerType::noisy_dense) continue;
        FactorizedNoise f;
        f.layer_index = i;
        f.in.resize(l.in_size());
        f.out.resize(l.out_size());
        for (auto& v : f.in) v = scale_noise(normal(rng));
        for (auto& v : f.out) v = scale_noise(normal(rng));
        draw.layers.push_back(std::move(f));
    }
    return draw;
}

ForwardResult Network::forward(const Tensor& input, const NoiseDraw* noise) const {
    const auto& in = input.shape();
    if (in.size() != spec_.input.size() + 1 || !std::equal(spec_.input.begin(), spec_.input.end(), in.begin() + 1))
        throw ShapeError(layers_.front().name + " expects input [batch]x" + shape_string(spec_.input) + ", got " +
                         shape_string(in));
    if (noise) {
        for (const auto& f : noise->layers) {
            if (f.layer_index >= layers_.size() || layers_[f.layer_index].kind.type != LayerType::noisy_dense ||
                f.in.size() != layers_[f.layer_index].in_size() || f.out.size() != layers_[f.layer_index].out_size())
                throw ShapeError("noise draw does not match network layout");
        }
    }
    const std::size_t batch = in[0];
    ForwardCache cache;
    cache.network_id = id_;
    cache.network_version = version_;
    cache.batch = batch;
    cache.inputs.resize(layers_.size());
    cache.pre_act.resize(layers_.size());
    if (noise) cache.noise = *noise;

    auto run_layer = [&](std::size_t i, const Tensor& x, bool relu_after) {
        const auto& l = layers_[i];
        Shape out_shape = l.out_shape;
        out_shape.insert(out_shape.begin(), batch);
        Tensor z(out_shape);
        const FactorizedNoise* eps = noise ? noise->find(i) : nullptr;
        if (l.kind.type == LayerType::conv2d)
            conv_forward(l, x.data().data(), z.data().data(), batch);
        else
            dense_forward(l, eps, x.data().data(), z.data().data(), batch);
        cache.inputs[i] = x;
        cache.pre_act[i] = z;
        if (relu_after)
            for (auto& v : z.data()) v = v > 0.0 ? v : 0.0;
        return z;
    };

    Tensor x = input;
    const bool has_heads = !spec_.heads.empty();
    for (std::size_t i = 0; i < trunk_len_; ++i) x = run_layer(i, x, has_heads || i + 1 < trunk_len_);
    if (!has_heads) {
        x.reshape({batch, output_size_});
        return {std::move(x), std::move(cache)};
    }
    Tensor output({batch, output_size_});
    std::size_t offset = 0;
    std::size_t idx = trunk_len_;
    for (const auto& head : spec_.heads) {
        Tensor h = x;
        for (std::size_t j = 0; j < head.layers.size(); ++j, ++idx) h = run_layer(idx, h, j + 1 < head.layers.size());
        const std::size_t width = layers_[idx - 1].out_size();
        for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(h.data().data() + b * width, width, output.data().data() + b * output_size_ + offset);
        offset += width;
    }
    return {std::move(output), std::move(cache)};
}

GradientSet Network::backward(const ForwardCache& cache, const Tensor& output_grad) const {
    if (cache.network_id != id_ || cache.network_version != version_)
        throw StateError("forward cache is stale or belongs to another network");
    const std::size_t batch = cache.batch;
    if (output_grad.shape() != Shape{batch, output_size_})
        throw ShapeError("output gradient shape " + shape_string(output_grad.shape()) + " does not match " +
                         shape_string({batch, output_size_}));

    GradientSet grads;
    std::vector<std::vector<Tensor*>> per_layer(layers_.size());
    for (const auto& l : layers_)
        for (const auto& p : l.params) {
            grads.names.push_back(l.name + "/" + p.name);
            grads.tensors.emplace_back(p.value.shape());
        }
    {
        std::size_t k = 0;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (std::size_t p = 0; p < layers_[i].params.size(); ++p) per_layer[i].push_back(&grads.tensors[k++]);
    }

    // g holds the gradient w.r.t. layer i's post-activation output; returns gradient w.r.t. its input.
    auto back_layer = [&](std::size_t i, Tensor g, bool relu_after, bool need_dx) {
        const auto& l = layers_[i];
        if (relu_after) {
            const auto& z = cache.pre_act[i];
            for (std::size_t n = 0; n < g.size(); ++n)
                if (!(z[n] > 0.0)) g[n] = 0.0;
        }
        Shape in_shape = l.in_shape;
        in_shape.insert(in_shape.begin(), batch);
        Tensor dx;
        if (need_dx) dx = Tensor(in_shape);
        const FactorizedNoise* eps = cache.noise ? cache.noise->find(i) : nullptr;
        if (l.kind.type == LayerType::conv2d)
            conv_backward(l, cache.inputs[i].data().data(), g.data().data(), batch,
                          per_layer[i][kW]->data().data(), per_layer[i][kB]->data().data(),
                          need_dx ? dx.data().data() : nullptr);
        else
            dense_backward(l, eps, cache.inputs[i].data().data(), g.data().data(), batch, per_layer[i],
                           need_dx ? dx.data().data() : nullptr);
        return dx;
    };

    const bool has_heads = !spec_.heads.empty();
    Tensor trunk_grad;
    if (!has_heads) {
        trunk_grad = output_grad;
        Shape s = layers_[trunk_len_ - 1].out_shape;
        s.insert(s.begin(), batch);
        trunk_grad.reshape(s);
    } else {
        Shape s = trunk_len_ ? layers_[trunk_len_ - 1].out_shape : spec_.input;
        s.insert(s.begin(), batch);
        trunk_grad = Tensor(s);
        std::size_t offset = 0;
        std::size_t idx = trunk_len_;
        for (const auto& head : spec_.heads) {
            const std::size_t first = idx;
            idx += head.layers.size();
            const std::size_t width = layers_[idx - 1].out_size();
            Tensor g({batch, width});
            for (std::size_t b = 0; b < batch; ++b)
                std::copy_n(output_grad.data().data() + b * output_size_ + offset, width, g.data().data() + b * width);
            offset += width;
            for (std::size_t i = idx; i-- > first;) {
                const bool need_dx = i > first || trunk_len_ > 0;
                g = back_layer(i, std::move(g), i + 1 < idx, need_dx);
            }
            if (trunk_len_ > 0)
                for (std::size_t n = 0; n < g.size(); ++n) trunk_grad[n] += g[n];
        }
    }
    for (std::size_t i = trunk_len_; i-- > 0;)
        trunk_grad = back_layer(i, std::move(trunk_grad), has_heads || i + 1 < trunk_len_, i > 0);
    return grads;
}

bool Network::parameters_equal(const Network& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& a = layers_[i].params;
        const auto& b = other.layers_[i].params;
        if (a.size() != b.size()) return false;
        for (std::size_t p = 0; p < a.size(); ++p)
            if (a[p].value.shape() != b[p].value.shape() ||
                !std::equal(a[p].value.data().begin(), a[p].value.data().end(), b[p].value.data().begin(),
                            [](double x, double y) { return std::bit_cast<std::uint64_t>(x) ==
                                                            std::bit_cast<std::uint64_t>(y); }))
                return false;
    }
    return true;
}

void Network::round_to_float() {
    for (auto& l : layers_)
        for (auto& p : l.params)
            for (auto& v : p.value.data()) v = static_cast<double>(static_cast<float>(v));
    touch();
}

Adam::Adam(const Network& net, AdamConfig config) : config_(config) {
    for (const auto& l : net.layers())
        for (const auto& p : l.params) {
            names_.push_back(l.name + "/" + p.name);
            layer_of_.push_back(l.name);
            m_.emplace_back(p.value.shape());
            v_.emplace_back(p.value.shape());
        }
}

void Adam::apply(Network& net, const GradientSet& grads, const FreezeMask* mask) {
    if (grads.names != names_) throw ShapeError("gradient set does not match optimizer parameter layout");
    if (mask) {
        for (const auto& name : *mask)
            if (std::find(layer_of_.begin(), layer_of_.end(), name) == layer_of_.end())
                throw ConfigError("freeze mask names unknown layer '" + name + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < names_.size(); ++k) {
        if (mask && mask->contains(layer_of_[k])) continue;
        Tensor& param = net.mutable_param(names_[k]);
        const Tensor& g = grads.tensors[k];
        if (g.shape() != param.shape()) throw ShapeError("gradient shape mismatch for " + names_[k]);
        double* __restrict m = m_[k].data().data();
        double* __restrict v = v_[k].data().data();
        double* __restrict p = param.data().data();
        const double* __restrict gd = g.data().data();
        const double b1 = config_.beta1, b2 = config_.beta2, lr = config_.lr, eps = config_.epsilon;
        const std::size_t count = param.size();
        for (std::size_t n = 0; n < count; ++n) {
            m[n] = b1 * m[n] + (1.0 - b1) * gd[n];
            v[n] = b2 * v[n] + (1.0 - b2) * gd[n] * gd[n];
            const double mhat = m[n] / c1;
            const double vhat = v[n] / c2;
            p[n] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

}  // namespace rtl::nn
