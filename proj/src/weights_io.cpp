#include "mmlens/weights_io.hpp"

#include <cstring>
#include <fstream>

#include "mmlens/model.hpp"

namespace mmlens {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'D', 'L'};
constexpr uint16_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& f, T v) {
    uint8_t buf[sizeof(T)];
    for (size_t i = 0; i < sizeof(T); ++i)
        buf[i] = static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i));
    f.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
bool read_le(std::ifstream& f, T& out) {
    uint8_t buf[sizeof(T)];
    f.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!f) return false;
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    out = static_cast<T>(v);
    return true;
}

} // namespace

void save_tensors(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, const Mat*>>& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write tensors: " + path.string());
    f.write(kMagic, 4);
    write_le<uint16_t>(f, kVersion);
    for (const auto& [name, mat] : tensors) {
        write_le<uint32_t>(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint32_t>(f, 2);
        write_le<uint64_t>(f, static_cast<uint64_t>(mat->rows));
        write_le<uint64_t>(f, static_cast<uint64_t>(mat->cols));
        f.write(reinterpret_cast<const char*>(mat->data.data()),
                static_cast<std::streamsize>(mat->data.size() * sizeof(float)));
    }
    if (!f) throw IoError("failed writing tensors: " + path.string());
}

std::map<std::string, Mat> load_tensors(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read tensors: " + path.string());
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a tensor container: " + path.string());
    uint16_t version;
    if (!read_le(f, version) || version != kVersion)
        throw IoError("unsupported tensor container version");

    std::map<std::string, Mat> out;
    for (;;) {
        uint32_t name_len;
        if (!read_le(f, name_len)) break;   // clean EOF
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        uint32_t rank;
        if (!f || !read_le(f, rank))
            throw IoError("truncated tensor record: " + path.string());
        std::vector<uint64_t> dims(rank);
        uint64_t count = 1;
        for (auto& d : dims) {
            if (!read_le(f, d)) throw IoError("truncated tensor dims: " + path.string());
            count *= d;
        }
        if (rank != 2)
            throw IoError("expected rank-2 tensors, got rank " + std::to_string(rank));
        Mat m(static_cast<int>(dims[0]), static_cast<int>(dims[1]));
        f.read(reinterpret_cast<char*>(m.data.data()),
               static_cast<std::streamsize>(count * sizeof(float)));
        if (!f) throw IoError("truncated tensor payload: " + path.string());
        out.emplace(std::move(name), std::move(m));
    }
    return out;
}

void Model::save_weights(const std::filesystem::path& path) const {
    save_tensors(path, named_tensors());
}

void Model::load_weights(const std::filesystem::path& path) {
    auto loaded = load_tensors(path);
    for (auto& [name, slot] : named_tensors()) {
        auto it = loaded.find(name);
        if (it == loaded.end())
            throw IoError("weights file is missing tensor " + name);
        if (!slot->same_shape(it->second))
            throw ShapeMismatch("tensor " + name + " has the wrong shape");
        *slot = std::move(it->second);
        loaded.erase(it);
    }
    if (!loaded.empty())
        throw IoError("weights file carries unknown tensor " + loaded.begin()->first);
}

} // namespace mmlens
