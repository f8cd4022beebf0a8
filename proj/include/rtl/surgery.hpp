#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "rtl/checkpoint.hpp"
#include "rtl/nn.hpp"

namespace rtl::surgery {

enum class TransplantMode { freeze, finetune };

std::string_view to_string(TransplantMode m);
TransplantMode parse_mode(std::string_view s);

struct TransplantSpec {
    std::size_t k = 0;  // depth positions copied from the parent
    TransplantMode mode = TransplantMode::finetune;
    std::uint64_t reinit_seed = 0;
};

struct Transplanted {
    nn::Network child;
    nn::FreezeMask mask;
};

/// Layers at depth <= k in freeze mode, nothing in finetune mode.
nn::FreezeMask freeze_mask(const nn::Network& net, std::size_t k, TransplantMode mode);

/// Child = fresh network initialized from reinit_seed with depth positions
/// 1..k copied from the parent (every stream at a shared depth).
Transplanted transplant(const nn::Network& parent, const TransplantSpec& spec);
Transplanted transplant(const Checkpoint& parent, const nn::NetworkSpec& arch, const TransplantSpec& spec);

struct LayerAudit {
    std::string name;
    std::size_t depth = 0;
    bool equal = false;
};

struct TransplantReport {
    std::size_t k = 0;
    std::vector<LayerAudit> layers;
    bool pass = false;
};

/// Passes iff every layer at depth <= k is bitwise equal and every layer
/// deeper than k differs in at least one parameter.
TransplantReport verify_transplant(const nn::Network& parent, const nn::Network& child, std::size_t k);
TransplantReport verify_transplant(const Checkpoint& parent, const Checkpoint& child, std::size_t k);

/// True when every layer named in the mask is bitwise equal between the two networks.
bool frozen_layers_equal(const nn::Network& reference, const nn::Network& trained, const nn::FreezeMask& mask);

}  // namespace rtl::surgery
