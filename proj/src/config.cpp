#include "mmlens/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "mmlens/rng.hpp"

namespace mmlens {

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0)
        throw InvalidConfig("d_model and n_heads must be positive");
    if (d_model % n_heads != 0)
        throw InvalidConfig("d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0)
        throw InvalidConfig("head dim must be even (rotary pairs)");
    if (n_double_blocks <= 0 || n_single_blocks <= 0)
        throw InvalidConfig("block counts must be positive");
    if (total_blocks() < 2)
        throw InvalidConfig("need at least 2 blocks in total");
    if (text_len < 1)
        throw InvalidConfig("text_len must be >= 1");
    if (latent_h < 1 || latent_w < 1)
        throw InvalidConfig("latent grid dims must be >= 1");
    if (n_steps < 1)
        throw InvalidConfig("n_steps must be >= 1");
    if (rng_scheme != Rng::kScheme)
        throw InvalidConfig("unknown rng scheme: " + rng_scheme);
    if (patch_size() < 1)
        throw InvalidConfig("d_model too small for the pixel codec (need >= 3)");
}

int ModelConfig::patch_size() const {
    int p = static_cast<int>(std::sqrt(static_cast<double>(d_model) / 3.0));
    while (p > 0 && 3 * p * p > d_model) --p;
    return p;
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "d_model = " << d_model << "\n";
    os << "n_heads = " << n_heads << "\n";
    os << "n_double_blocks = " << n_double_blocks << "\n";
    os << "n_single_blocks = " << n_single_blocks << "\n";
    os << "text_len = " << text_len << "\n";
    os << "latent_h = " << latent_h << "\n";
    os << "latent_w = " << latent_w << "\n";
    os << "n_steps = " << n_steps << "\n";
    os << "rng_scheme = " << rng_scheme << "\n";
    os << "seed = " << seed << "\n";
    return os.str();
}

static std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

ModelConfig ModelConfig::from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("config line missing '=': " + line);
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        try {
            if (key == "d_model") cfg.d_model = std::stoi(val);
            else if (key == "n_heads") cfg.n_heads = std::stoi(val);
            else if (key == "n_double_blocks") cfg.n_double_blocks = std::stoi(val);
            else if (key == "n_single_blocks") cfg.n_single_blocks = std::stoi(val);
            else if (key == "text_len") cfg.text_len = std::stoi(val);
            else if (key == "latent_h") cfg.latent_h = std::stoi(val);
            else if (key == "latent_w") cfg.latent_w = std::stoi(val);
            else if (key == "n_steps") cfg.n_steps = std::stoi(val);
            else if (key == "rng_scheme") cfg.rng_scheme = val;
            else if (key == "seed") cfg.seed = std::stoull(val);
            else throw InvalidConfig("unknown config key: " + key);
        } catch (const std::invalid_argument&) {
            throw InvalidConfig("bad value for " + key + ": " + val);
        } catch (const std::out_of_range&) {
            throw InvalidConfig("value out of range for " + key + ": " + val);
        }
    }
    cfg.validate();
    return cfg;
}

void ModelConfig::save(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config: " + path.string());
    f << to_text();
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config: " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return from_text(os.str());
}

std::array<uint8_t, 32> ModelConfig::fingerprint() const {
    std::ostringstream os;
    os << d_model << '|' << n_heads << '|' << n_double_blocks << '|'
       << n_single_blocks << '|' << text_len << '|' << rng_scheme << '|' << seed;
    Rng h(fnv1a64(os.str()));
    std::array<uint8_t, 32> fp{};
    for (int lane = 0; lane < 4; ++lane) {
        uint64_t v = h.next_u64();
        for (int b = 0; b < 8; ++b)
            fp[lane * 8 + b] = static_cast<uint8_t>(v >> (8 * b));
    }
    return fp;
}

void LayerId::validate(const ModelConfig& cfg) const {
    switch (kind) {
        case LayerKind::Double:
            if (index < 0 || index >= cfg.n_double_blocks)
                throw UnknownLayer("double block index out of range: " + std::to_string(index));
            break;
        case LayerKind::Single:
            if (index < 0 || index >= cfg.n_single_blocks)
                throw UnknownLayer("single block index out of range: " + std::to_string(index));
            break;
        case LayerKind::InputEmbedding:
            if (index != 0)
                throw UnknownLayer("input embedding has a single slot (index 0)");
            break;
    }
}

int LayerId::ordinal(const ModelConfig& cfg) const {
    validate(cfg);
    if (kind == LayerKind::Double) return index;
    if (kind == LayerKind::Single) return cfg.n_double_blocks + index;
    throw UnknownLayer("input embedding has no block ordinal");
}

LayerId LayerId::from_ordinal(const ModelConfig& cfg, int ordinal) {
    if (ordinal < 0 || ordinal >= cfg.total_blocks())
        throw UnknownLayer("block ordinal out of range: " + std::to_string(ordinal));
    if (ordinal < cfg.n_double_blocks) return LayerId{LayerKind::Double, ordinal};
    return LayerId{LayerKind::Single, ordinal - cfg.n_double_blocks};
}

std::string LayerId::display() const {
    switch (kind) {
        case LayerKind::Double: return "double#" + std::to_string(index + 1);
        case LayerKind::Single: return "single#" + std::to_string(index + 1);
        default: return "input";
    }
}

LayerId LayerId::parse(const std::string& s) {
    if (s == "input") return input_embedding();
    size_t hash = s.find('#');
    if (hash == std::string::npos)
        throw UnknownLayer("cannot parse layer id: " + s);
    std::string kind = s.substr(0, hash);
    int one_based = 0;
    try {
        one_based = std::stoi(s.substr(hash + 1));
    } catch (...) {
        throw UnknownLayer("cannot parse layer index: " + s);
    }
    if (one_based < 1)
        throw UnknownLayer("layer indices are 1-based in text form: " + s);
    if (kind == "double") return double_block(one_based - 1);
    if (kind == "single") return single_block(one_based - 1);
    throw UnknownLayer("unknown layer kind: " + kind);
}

} // namespace mmlens
