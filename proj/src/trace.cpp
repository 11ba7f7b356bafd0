#include "mmlens/trace.hpp"

#include <cstring>
#include <fstream>

namespace mmlens {

namespace {

constexpr char kMagic[4] = {'T', 'R', 'C', 'E'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& f, T v) {
    uint8_t buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i));
    f.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& f) {
    uint8_t buf[sizeof(T)];
    f.read(reinterpret_cast<char*>(buf), sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

} // namespace

const Mat* ActivationTrace::find(LayerId layer, int step) const {
    auto it = entries.find(TraceKey{layer.kind, layer.index, step});
    return it == entries.end() ? nullptr : &it->second;
}

const Mat& ActivationTrace::require(LayerId layer, int step) const {
    const Mat* m = find(layer, step);
    if (!m)
        throw MissingTraceEntry("trace has no entry for " + layer.display() + " at step " +
                                std::to_string(step));
    return *m;
}

void ActivationTrace::insert(LayerId layer, int step, Mat m) {
    entries[TraceKey{layer.kind, layer.index, step}] = std::move(m);
}

void ActivationTrace::check_fingerprint(const ModelConfig& cfg) const {
    if (config_fingerprint != cfg.fingerprint())
        throw FingerprintMismatch("trace was captured from a different model configuration");
}

void ActivationTrace::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write trace: " + path.string());
    f.write(kMagic, 4);
    write_le<uint16_t>(f, kVersion);
    f.write(reinterpret_cast<const char*>(config_fingerprint.data()), 32);
    write_le<uint32_t>(f, static_cast<uint32_t>(entries.size()));
    for (const auto& [key, mat] : entries) {
        write_le<uint8_t>(f, static_cast<uint8_t>(key.kind));
        write_le<uint16_t>(f, static_cast<uint16_t>(key.index));
        write_le<uint16_t>(f, static_cast<uint16_t>(key.step));
        f.write(reinterpret_cast<const char*>(mat.data.data()),
                static_cast<std::streamsize>(mat.data.size() * sizeof(float)));
    }
    if (!f) throw IoError("failed writing trace: " + path.string());
}

ActivationTrace ActivationTrace::load(const std::filesystem::path& path,
                                      const ModelConfig& expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read trace: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a trace file: " + path.string());
    uint16_t version = read_le<uint16_t>(f);
    if (version != kVersion)
        throw IoError("unsupported trace version");

    ActivationTrace trace;
    f.read(reinterpret_cast<char*>(trace.config_fingerprint.data()), 32);
    trace.check_fingerprint(expected);

    const uint32_t count = read_le<uint32_t>(f);
    const int rows = expected.text_len;
    const int cols = expected.d_model;
    for (uint32_t i = 0; i < count; ++i) {
        TraceKey key{};
        key.kind = static_cast<LayerKind>(read_le<uint8_t>(f));
        key.index = read_le<uint16_t>(f);
        key.step = read_le<uint16_t>(f);
        Mat m(rows, cols);
        f.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(m.data.size() * sizeof(float)));
        if (!f) throw IoError("truncated trace file: " + path.string());
        trace.entries[key] = std::move(m);
    }
    return trace;
}

} // namespace mmlens
