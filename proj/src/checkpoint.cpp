#include "aspvm/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace aspvm::ckpt {

namespace {

constexpr char kMagic[8] = {'A', 'S', 'P', 'V', 'M', 'C', 'K', '1'};
constexpr uint32_t kVersion = 1;

void write_bytes(std::ofstream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename I>
void write_int(std::ofstream& os, I v) {
    // layout is little-endian; serialize byte by byte
    for (size_t i = 0; i < sizeof(I); ++i) {
        const char b = static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
        os.put(b);
    }
}

void write_string(std::ofstream& os, const std::string& s) {
    write_int<uint32_t>(os, static_cast<uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

void write_f32_array(std::ofstream& os, const float* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        uint32_t bits;
        std::memcpy(&bits, &data[i], 4);
        write_int<uint32_t>(os, bits);
    }
}

struct Reader {
    std::ifstream is;
    std::string path;

    explicit Reader(const std::string& p) : is(p, std::ios::binary), path(p) {
        if (!is) throw IoError("checkpoint: cannot open '" + p + "'");
    }

    void read_bytes(void* p, size_t n) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!is) throw IoError("checkpoint: truncated or corrupt file '" + path + "'");
    }

    template <typename I>
    I read_int() {
        uint64_t v = 0;
        for (size_t i = 0; i < sizeof(I); ++i) {
            unsigned char b;
            read_bytes(&b, 1);
            v |= static_cast<uint64_t>(b) << (8 * i);
        }
        return static_cast<I>(v);
    }

    std::string read_string() {
        const uint32_t n = read_int<uint32_t>();
        std::string s(n, '\0');
        if (n) read_bytes(s.data(), n);
        return s;
    }

    std::vector<float> read_f32_array(size_t n) {
        std::vector<float> out(n);
        for (size_t i = 0; i < n; ++i) {
            const uint32_t bits = read_int<uint32_t>();
            std::memcpy(&out[i], &bits, 4);
        }
        return out;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, net::Network<float>& network,
                     const TrainerState* state) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot write '" + path + "'");
    write_bytes(os, kMagic, sizeof(kMagic));
    write_int<uint32_t>(os, kVersion);
    write_string(os, network.config().to_json());

    const auto& params = network.params().items();
    write_int<uint64_t>(os, params.size());
    for (const auto& p : params) {
        write_string(os, p.name);
        write_int<uint64_t>(os, static_cast<uint64_t>(p.tensor.numel()));
        write_f32_array(os, p.tensor.data(), static_cast<size_t>(p.tensor.numel()));
    }

    const auto& buffers = network.buffers().items();
    write_int<uint64_t>(os, buffers.size());
    for (const auto& b : buffers) {
        write_string(os, b.name);
        write_int<uint64_t>(os, b.data->size());
        write_f32_array(os, b.data->data(), b.data->size());
    }

    os.put(state ? 1 : 0);
    if (state) {
        if (state->moment1.size() != params.size() || state->moment2.size() != params.size()) {
            throw ConfigError("checkpoint: optimizer state does not match parameter count");
        }
        write_int<uint64_t>(os, state->step);
        for (size_t i = 0; i < params.size(); ++i) {
            write_int<uint64_t>(os, state->moment1[i].size());
            write_f32_array(os, state->moment1[i].data(), state->moment1[i].size());
            write_f32_array(os, state->moment2[i].data(), state->moment2[i].size());
        }
        write_int<uint64_t>(os, state->epoch);
        write_string(os, state->rng_state);
        write_int<uint32_t>(os, static_cast<uint32_t>(state->norm_mean.size()));
        write_f32_array(os, state->norm_mean.data(), state->norm_mean.size());
        write_f32_array(os, state->norm_std.data(), state->norm_std.size());
    }
    if (!os) throw IoError("checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.read_bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw IoError("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
    }
    const uint32_t version = r.read_int<uint32_t>();
    if (version != kVersion) {
        throw IoError("checkpoint: format version " + std::to_string(version) +
                      " unsupported (expected " + std::to_string(kVersion) + ")");
    }
    LoadedCheckpoint out;
    out.config = net::NetworkConfig::from_json(r.read_string());
    Rng rng(0);  // all values are overwritten below
    out.network = std::make_unique<net::Network<float>>(out.config, rng);

    const uint64_t n_params = r.read_int<uint64_t>();
    auto& reg = out.network->params();
    if (n_params != reg.items().size()) {
        throw IoError("checkpoint: parameter count " + std::to_string(n_params) +
                      " does not match the rebuilt network (" +
                      std::to_string(reg.items().size()) + ")");
    }
    for (uint64_t i = 0; i < n_params; ++i) {
        const std::string name = r.read_string();
        const uint64_t count = r.read_int<uint64_t>();
        auto values = r.read_f32_array(count);
        auto* t = reg.find(name);
        if (!t) throw IoError("checkpoint: unknown parameter '" + name + "'");
        if (static_cast<uint64_t>(t->numel()) != count) {
            throw IoError("checkpoint: parameter '" + name + "' has " + std::to_string(count) +
                          " values, expected " + std::to_string(t->numel()));
        }
        std::copy(values.begin(), values.end(), t->data());
    }

    const uint64_t n_buffers = r.read_int<uint64_t>();
    auto& bufs = out.network->buffers();
    for (uint64_t i = 0; i < n_buffers; ++i) {
        const std::string name = r.read_string();
        const uint64_t count = r.read_int<uint64_t>();
        auto values = r.read_f32_array(count);
        auto* b = bufs.find(name);
        if (!b) throw IoError("checkpoint: unknown buffer '" + name + "'");
        if (b->size() != count) {
            throw IoError("checkpoint: buffer '" + name + "' has wrong length");
        }
        std::copy(values.begin(), values.end(), b->begin());
    }

    unsigned char has_state;
    r.read_bytes(&has_state, 1);
    if (has_state) {
        out.has_state = true;
        out.state.step = r.read_int<uint64_t>();
        out.state.moment1.resize(n_params);
        out.state.moment2.resize(n_params);
        for (uint64_t i = 0; i < n_params; ++i) {
            const uint64_t count = r.read_int<uint64_t>();
            out.state.moment1[i] = r.read_f32_array(count);
            out.state.moment2[i] = r.read_f32_array(count);
        }
        out.state.epoch = r.read_int<uint64_t>();
        out.state.rng_state = r.read_string();
        const uint32_t nstats = r.read_int<uint32_t>();
        out.state.norm_mean = r.read_f32_array(nstats);
        out.state.norm_std = r.read_f32_array(nstats);
    }
    return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path, const net::NetworkConfig& expected) {
    auto loaded = load_checkpoint(path);
    auto fields = net::NetworkConfig::diff(loaded.config, expected);
    if (!fields.empty()) {
        std::string msg = "checkpoint: config mismatch in field(s):";
        for (const auto& f : fields) msg += " " + f;
        throw ConfigError(msg);
    }
    return loaded;
}

}  // namespace aspvm::ckpt
