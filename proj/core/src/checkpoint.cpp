#include "omni/model.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace omni {

static constexpr char     kMagic[4] = {'O', 'M', 'C', 'K'};
static constexpr uint32_t kVersion  = 1;

namespace {

struct FileCloser {
    void operator()(FILE * f) const { if (f) std::fclose(f); }
};
using File = std::unique_ptr<FILE, FileCloser>;

void put_u32(FILE * f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    std::fwrite(b, 1, 4, f);
}

void put_u64(FILE * f, uint64_t v) {
    put_u32(f, static_cast<uint32_t>(v));
    put_u32(f, static_cast<uint32_t>(v >> 32));
}

void put_f32(FILE * f, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(f, bits);
}

bool get_u32(FILE * f, uint32_t & v) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) return false;
    v = static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
        static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
    return true;
}

bool get_u64(FILE * f, uint64_t & v) {
    uint32_t lo, hi;
    if (!get_u32(f, lo) || !get_u32(f, hi)) return false;
    v = static_cast<uint64_t>(hi) << 32 | lo;
    return true;
}

bool get_f32(FILE * f, float & v) {
    uint32_t bits;
    if (!get_u32(f, bits)) return false;
    std::memcpy(&v, &bits, 4);
    return true;
}

} // namespace

void save_checkpoint(const std::string & path, const OmniModel & model) {
    File f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    std::fwrite(kMagic, 1, 4, f.get());
    put_u32(f.get(), kVersion);
    std::string cfg_json = config_to_json(model.cfg);
    put_u32(f.get(), static_cast<uint32_t>(cfg_json.size()));
    std::fwrite(cfg_json.data(), 1, cfg_json.size(), f.get());

    auto params = model.named_params();
    put_u32(f.get(), static_cast<uint32_t>(params.size()));
    for (auto & [name, t] : params) {
        put_u32(f.get(), static_cast<uint32_t>(name.size()));
        std::fwrite(name.data(), 1, name.size(), f.get());
        put_u32(f.get(), static_cast<uint32_t>(t.shape().size()));
        for (int64_t d : t.shape()) put_u64(f.get(), static_cast<uint64_t>(d));
        for (double v : t.data()) put_f32(f.get(), static_cast<float>(v));
    }
    if (std::ferror(f.get())) throw DataError("checkpoint: write error on '" + path + "'");
}

static void read_header(FILE * f, const std::string & path, std::string & cfg_json) {
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("checkpoint: '" + path + "' is not a checkpoint file (bad magic)");
    }
    uint32_t version;
    if (!get_u32(f, version)) throw DataError("checkpoint: truncated header in '" + path + "'");
    if (version != kVersion) {
        throw DataError("checkpoint: version " + std::to_string(version) + " unsupported (expected " +
                        std::to_string(kVersion) + ")");
    }
    uint32_t len;
    if (!get_u32(f, len)) throw DataError("checkpoint: truncated header in '" + path + "'");
    cfg_json.resize(len);
    if (std::fread(cfg_json.data(), 1, len, f) != len) {
        throw DataError("checkpoint: truncated config in '" + path + "'");
    }
}

ModelConfig peek_checkpoint_config(const std::string & path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string cfg_json;
    read_header(f.get(), path, cfg_json);
    return config_from_json(cfg_json);
}

OmniModel load_checkpoint(const std::string & path, Dtype dt) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string cfg_json;
    read_header(f.get(), path, cfg_json);
    ModelConfig cfg = config_from_json(cfg_json);

    OmniModel model(cfg, dt, 0);
    auto params = model.named_params();
    std::vector<bool> seen(params.size(), false);

    uint32_t n_params;
    if (!get_u32(f.get(), n_params)) throw DataError("checkpoint: truncated parameter table in '" + path + "'");
    for (uint32_t i = 0; i < n_params; ++i) {
        uint32_t name_len;
        if (!get_u32(f.get(), name_len)) {
            throw DataError("checkpoint: truncated at parameter " + std::to_string(i));
        }
        std::string name(name_len, '\0');
        if (std::fread(name.data(), 1, name_len, f.get()) != name_len) {
            throw DataError("checkpoint: truncated name at parameter " + std::to_string(i));
        }
        uint32_t ndim;
        if (!get_u32(f.get(), ndim)) throw DataError("checkpoint: truncated shape of '" + name + "'");
        std::vector<int64_t> shape(ndim);
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            uint64_t dim;
            if (!get_u64(f.get(), dim)) throw DataError("checkpoint: truncated shape of '" + name + "'");
            shape[d] = static_cast<int64_t>(dim);
            numel *= shape[d];
        }
        size_t slot = params.size();
        for (size_t p = 0; p < params.size(); ++p) {
            if (params[p].first == name) { slot = p; break; }
        }
        if (slot == params.size()) {
            throw DataError("checkpoint: unknown parameter '" + name + "' (config mismatch?)");
        }
        Tensor & t = params[slot].second;
        if (t.shape() != shape) {
            throw DataError("checkpoint: parameter '" + name + "' has shape " + t.shape_str() +
                            " in model but different shape on disk");
        }
        for (int64_t e = 0; e < numel; ++e) {
            float v;
            if (!get_f32(f.get(), v)) {
                throw DataError("checkpoint: truncated values of '" + name + "'");
            }
            t.data()[static_cast<size_t>(e)] = static_cast<double>(v);
        }
        seen[slot] = true;
    }
    for (size_t p = 0; p < params.size(); ++p) {
        if (!seen[p]) throw DataError("checkpoint: parameter '" + params[p].first + "' missing from file");
    }
    return model;
}

int64_t load_matching_params(OmniModel & model, const std::string & path) {
    OmniModel donor = load_checkpoint(path, model.dtype);
    auto donor_params = donor.named_params();
    int64_t copied = 0;
    for (auto & [name, t] : model.named_params()) {
        for (auto & [dname, dt] : donor_params) {
            if (dname == name && dt.shape() == t.shape()) {
                t.data() = dt.data();
                ++copied;
                break;
            }
        }
    }
    return copied;
}

} // namespace omni
