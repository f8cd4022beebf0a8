#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rtl/nn.hpp"

namespace rtl::surgery {

inline constexpr char kMagic[4] = {'R', 'T', 'L', '1'};
inline constexpr int kFormatVersion = 1;

/// Serialized network: key-value metadata plus named parameter tensors
/// ("layer{d}/{stream}/{param}") held at 32-bit precision.
struct Checkpoint {
    int format_version = kFormatVersion;
    std::map<std::string, std::string> metadata;
    std::map<std::string, nn::Tensor> tensors;

    const std::string& meta(const std::string& key) const;
    std::string meta_or(const std::string& key, std::string fallback) const;
    std::string architecture_hash() const { return meta("architecture_hash"); }
    std::string env() const { return meta_or("env", ""); }
    std::uint64_t training_steps() const;
};

/// Metadata written alongside every checkpoint. Anything in `extra` is kept verbatim.
struct CheckpointInfo {
    std::string env;
    std::uint64_t training_steps = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> extra;
};

Checkpoint make_checkpoint(const nn::Network& net, const CheckpointInfo& info);

std::vector<unsigned char> serialize(const Checkpoint& ckpt);
/// Throws FormatError, VersionError or ArchitectureMismatch (when expected_hash is given).
Checkpoint deserialize(const std::vector<unsigned char>& bytes,
                       const std::optional<std::string>& expected_hash = std::nullopt);

/// Atomic write: temp file in the same directory, then rename.
void save(const nn::Network& net, const CheckpointInfo& info, const std::filesystem::path& path);
void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path, const std::optional<std::string>& expected_hash = std::nullopt);

/// Builds a network of the given architecture and fills it from the checkpoint.
nn::Network to_network(const Checkpoint& ckpt, const nn::NetworkSpec& spec);

}  // namespace rtl::surgery
