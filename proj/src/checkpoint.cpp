#include "rtl/checkpoint.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "rtl/error.hpp"
#include "rtl/hash.hpp"

namespace rtl::surgery {

namespace {

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const unsigned char*>(p);
        out_.insert(out_.end(), c, c + n);
    }
    template <typename T>
    void le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float f) { le(std::bit_cast<std::uint32_t>(f)); }
    std::vector<unsigned char>& buffer() { return out_; }

private:
    std::vector<unsigned char> out_;
};

class Reader {
public:
    Reader(const unsigned char* data, std::size_t size) : p_(data), end_(data + size) {}

    const unsigned char* take(std::size_t n, const char* what) {
        if (static_cast<std::size_t>(end_ - p_) < n)
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        const auto* r = p_;
        p_ += n;
        return r;
    }
    template <typename T>
    T le(const char* what) {
        const auto* b = take(sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b[i]) << (8 * i));
        return v;
    }
    bool done() const { return p_ == end_; }

private:
    const unsigned char* p_;
    const unsigned char* end_;
};

std::string render_metadata(const std::map<std::string, std::string>& md) {
    std::string s;
    for (const auto& [k, v] : md) {
        if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw Error("metadata entry '" + k + "' cannot be serialized");
        s += k + "=" + v + "\n";
    }
    return s;
}

std::map<std::string, std::string> parse_metadata(const std::string& text) {
    std::map<std::string, std::string> md;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) throw FormatError("malformed checkpoint metadata line '" + line + "'");
        md[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return md;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_atomic(const std::vector<unsigned char>& bytes, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::random_device rd;
    auto tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

const std::string& Checkpoint::meta(const std::string& key) const {
    const auto it = metadata.find(key);
    if (it == metadata.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
    return it->second;
}

std::string Checkpoint::meta_or(const std::string& key, std::string fallback) const {
    const auto it = metadata.find(key);
    return it == metadata.end() ? fallback : it->second;
}

std::uint64_t Checkpoint::training_steps() const { return std::stoull(meta_or("training_steps", "0")); }

Checkpoint make_checkpoint(const nn::Network& net, const CheckpointInfo& info) {
    Checkpoint c;
    c.metadata = info.extra;
    c.metadata["format_version"] = std::to_string(kFormatVersion);
    c.metadata["env"] = info.env;
    c.metadata["training_steps"] = std::to_string(info.training_steps);
    c.metadata["seed"] = std::to_string(info.seed);
    c.metadata["architecture_hash"] = net.architecture_hash();
    if (!c.metadata.contains("created")) c.metadata["created"] = utc_timestamp();
    for (const auto& name : net.parameter_names()) {
        nn::Tensor t = net.param(name);
        for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
        c.tensors.emplace(name, std::move(t));
    }
    return c;
}

std::vector<unsigned char> serialize(const Checkpoint& ckpt) {
    Writer w;
    w.bytes(kMagic, 4);
    auto md = ckpt.metadata;
    md["format_version"] = std::to_string(ckpt.format_version);
    const std::string text = render_metadata(md);
    w.le(static_cast<std::uint32_t>(text.size()));
    w.bytes(text.data(), text.size());
    for (const auto& [name, t] : ckpt.tensors) {  // std::map iterates in sorted-name order
        if (name.size() > 0xFFFF) throw Error("tensor name too long: " + name);
        if (t.rank() > 0xFF) throw Error("tensor rank too large: " + name);
        w.le(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.le(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) w.le(static_cast<std::uint32_t>(d));
        for (double v : t.data()) w.f32(static_cast<float>(v));
    }
    const std::uint64_t checksum = fnv1a64(w.buffer());
    w.le(checksum);
    return std::move(w.buffer());
}

Checkpoint deserialize(const std::vector<unsigned char>& bytes, const std::optional<std::string>& expected_hash) {
    if (bytes.size() < 4 + 4 + 8) throw FormatError("checkpoint truncated: only " + std::to_string(bytes.size()) + " bytes");
    if (std::memcmp(bytes.data(), kMagic, 3) != 0) throw FormatError("bad checkpoint magic (expected \"RTL1\")");
    if (bytes[3] != static_cast<unsigned char>(kMagic[3]))
        throw VersionError(std::string("unsupported checkpoint version '") + static_cast<char>(bytes[3]) +
                           "' (expected '1')");
    const std::size_t body = bytes.size() - 8;
    Reader tail(bytes.data() + body, 8);
    const auto stored = tail.le<std::uint64_t>("checksum");
    const auto actual = fnv1a64({bytes.data(), body});
    if (stored != actual)
        throw FormatError("checkpoint checksum mismatch (stored " + hex64(stored) + ", computed " + hex64(actual) +
                          "); file is corrupt or truncated");

    Reader r(bytes.data() + 4, body - 4);
    Checkpoint c;
    const auto md_len = r.le<std::uint32_t>("metadata length");
    const auto* md = r.take(md_len, "metadata");
    c.metadata = parse_metadata(std::string(reinterpret_cast<const char*>(md), md_len));
    const auto version = c.meta_or("format_version", "");
    if (version != std::to_string(kFormatVersion))
        throw VersionError("unsupported checkpoint format_version '" + version + "'");
    c.format_version = kFormatVersion;
    std::string previous;
    while (!r.done()) {
        const auto name_len = r.le<std::uint16_t>("tensor name length");
        const auto* np = r.take(name_len, "tensor name");
        std::string name(reinterpret_cast<const char*>(np), name_len);
        if (!previous.empty() && name <= previous) throw FormatError("checkpoint tensors are not in sorted order");
        previous = name;
        const auto ndim = r.le<std::uint8_t>("tensor rank");
        nn::Shape shape(ndim);
        for (auto& d : shape) {
            d = r.le<std::uint32_t>("tensor dims");
            if (d == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
        }
        const std::size_t count = nn::shape_size(shape);
        const auto* payload = r.take(count * 4, "tensor payload");
        std::vector<double> data(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = 0;
            for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[i * 4 + b]) << (8 * b);
            data[i] = static_cast<double>(std::bit_cast<float>(bits));
        }
        c.tensors.emplace(std::move(name), nn::Tensor(std::move(shape), std::move(data)));
    }
    if (!c.metadata.contains("architecture_hash")) throw FormatError("checkpoint metadata lacks architecture_hash");
    if (expected_hash && *expected_hash != c.architecture_hash())
        throw ArchitectureMismatch("checkpoint architecture_hash " + c.architecture_hash() +
                                   " does not match expected " + *expected_hash);
    return c;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) { write_atomic(serialize(ckpt), path); }

void save(const nn::Network& net, const CheckpointInfo& info, const std::filesystem::path& path) {
    save(make_checkpoint(net, info), path);
}

Checkpoint load(const std::filesystem::path& path, const std::optional<std::string>& expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes, expected_hash);
}

nn::Network to_network(const Checkpoint& ckpt, const nn::NetworkSpec& spec) {
    nn::Network net(spec);
    if (net.architecture_hash() != ckpt.architecture_hash())
        throw ArchitectureMismatch("checkpoint architecture_hash " + ckpt.architecture_hash() +
                                   " does not match network architecture_hash " + net.architecture_hash());
    const auto names = net.parameter_names();
    if (names.size() != ckpt.tensors.size())
        throw ArchitectureMismatch("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, network needs " +
                                   std::to_string(names.size()));
    for (const auto& name : names) {
        const auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw ArchitectureMismatch("checkpoint lacks tensor '" + name + "'");
        auto& p = net.mutable_param(name);
        if (p.shape() != it->second.shape())
            throw ArchitectureMismatch("tensor '" + name + "' has shape " + nn::shape_string(it->second.shape()) +
                                       ", network expects " + nn::shape_string(p.shape()));
        p = it->second;
    }
    return net;
}

}  // namespace rtl::surgery
