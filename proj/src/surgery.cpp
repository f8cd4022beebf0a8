#include "rtl/surgery.hpp"

#include <algorithm>
#include <bit>
#include <map>

#include "rtl/error.hpp"

namespace rtl::surgery {

namespace {

bool bitwise_equal(const nn::Tensor& a, const nn::Tensor& b) {
    return a.shape() == b.shape() &&
           std::equal(a.data().begin(), a.data().end(), b.data().begin(), [](double x, double y) {
               return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
           });
}

std::size_t depth_of(const std::string& layer_name) {
    // "layer{d}/{stream}"
    if (layer_name.rfind("layer", 0) != 0) throw FormatError("tensor name '" + layer_name + "' lacks a layer prefix");
    return std::stoul(layer_name.substr(5, layer_name.find('/') - 5));
}

using TensorMap = std::map<std::string, const nn::Tensor*>;

TensorMap tensor_map(const nn::Network& net) {
    TensorMap m;
    for (const auto& name : net.parameter_names()) m[name] = &net.param(name);
    return m;
}

TensorMap tensor_map(const Checkpoint& c) {
    TensorMap m;
    for (const auto& [name, t] : c.tensors) m[name] = &t;
    return m;
}

TransplantReport audit(const TensorMap& parent, const TensorMap& child, std::size_t k) {
    std::map<std::string, bool> equal_by_layer;
    for (const auto& [name, t] : parent) {
        const auto it = child.find(name);
        if (it == child.end() || it->second->shape() != t->shape())
            throw ArchitectureMismatch("parent and child differ in tensor '" + name + "'");
        const auto layer = name.substr(0, name.rfind('/'));
        auto [slot, inserted] = equal_by_layer.try_emplace(layer, true);
        slot->second = slot->second && bitwise_equal(*t, *it->second);
    }
    if (parent.size() != child.size()) throw ArchitectureMismatch("parent and child hold different tensor sets");
    TransplantReport report;
    report.k = k;
    report.pass = true;
    for (const auto& [layer, eq] : equal_by_layer) {
        const std::size_t depth = depth_of(layer);
        report.layers.push_back({layer, depth, eq});
        if (depth <= k ? !eq : eq) report.pass = false;
    }
    std::stable_sort(report.layers.begin(), report.layers.end(),
                     [](const LayerAudit& a, const LayerAudit& b) { return a.depth < b.depth; });
    return report;
}

}  // namespace

std::string_view to_string(TransplantMode m) { return m == TransplantMode::freeze ? "freeze" : "finetune"; }

TransplantMode parse_mode(std::string_view s) {
    if (s == "freeze" || s == "frozen") return TransplantMode::freeze;
    if (s == "finetune" || s == "finetuned") return TransplantMode::finetune;
    throw ConfigError("unknown transplant mode '" + std::string(s) + "' (expected freeze or finetune)");
}

nn::FreezeMask freeze_mask(const nn::Network& net, std::size_t k, TransplantMode mode) {
    nn::FreezeMask mask;
    if (mode == TransplantMode::finetune) return mask;
    for (const auto& l : net.layers())
        if (l.depth <= k) mask.insert(l.name);
    return mask;
}

Transplanted transplant(const nn::Network& parent, const TransplantSpec& spec) {
    if (spec.k > parent.depth())
        throw ConfigError("transplant k=" + std::to_string(spec.k) + " exceeds network depth l=" +
                          std::to_string(parent.depth()));
    nn::Network child(parent.spec());
    child.initialize(spec.reinit_seed);
    for (std::size_t i = 0; i < parent.layers().size(); ++i)
        if (parent.layers()[i].depth <= spec.k) child.copy_layer_from(parent, i);
    auto mask = freeze_mask(child, spec.k, spec.mode);
    return {std::move(child), std::move(mask)};
}

Transplanted transplant(const Checkpoint& parent, const nn::NetworkSpec& arch, const TransplantSpec& spec) {
    return transplant(to_network(parent, arch), spec);
}

TransplantReport verify_transplant(const nn::Network& parent, const nn::Network& child, std::size_t k) {
    if (parent.architecture_hash() != child.architecture_hash())
        throw ArchitectureMismatch("cannot audit transplant across architectures " + parent.architecture_hash() +
                                   " and " + child.architecture_hash());
    return audit(tensor_map(parent), tensor_map(child), k);
}

TransplantReport verify_transplant(const Checkpoint& parent, const Checkpoint& child, std::size_t k) {
    if (parent.architecture_hash() != child.architecture_hash())
        throw ArchitectureMismatch("cannot audit transplant across architectures " + parent.architecture_hash() +
                                   " and " + child.architecture_hash());
    return audit(tensor_map(parent), tensor_map(child), k);
}

bool frozen_layers_equal(const nn::Network& reference, const nn::Network& trained, const nn::FreezeMask& mask) {
    for (const auto& name : mask) {
        const auto& a = reference.layers().at(reference.layer_index(name));
        const auto& b = trained.layers().at(trained.layer_index(name));
        for (std::size_t p = 0; p < a.params.size(); ++p)
            if (!bitwise_equal(a.params[p].value, b.params[p].value)) return false;
    }
    return true;
}

}  // namespace rtl::surgery
