#pragma once

#include <memory>

#include "omni/modality.hpp"
#include "omni/talker.hpp"
#include "omni/thinker.hpp"

namespace omni {

// The full trainable bundle: backbone, the two modality projectors and the
// talker. Frozen stub encoders have no parameters and live outside.
struct OmniModel {
    ModelConfig cfg;
    Dtype       dtype;
    Thinker     thinker;
    Projector   proj_audio;
    Projector   proj_vision;
    Talker      talker;

    OmniModel(const ModelConfig & config, Dtype dt, uint64_t seed);

    // "thinker.*", "proj_audio.*", "proj_vision.*", "talker.*"
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    std::vector<Tensor> params_with_prefix(const std::string & prefix) const;
    int64_t param_count() const;
    // fnv1a-64 over the raw value bytes of every parameter whose name starts
    // with the prefix (empty prefix = all).
    uint64_t param_hash(const std::string & prefix = "") const;
};

// Flat binary checkpoint: header (magic, version, config json), then named
// blobs (name length, name, shape, 32-bit little-endian values). The file
// round-trips bit-exactly.
void save_checkpoint(const std::string & path, const OmniModel & model);
OmniModel load_checkpoint(const std::string & path, Dtype dt);
ModelConfig peek_checkpoint_config(const std::string & path);

// Copies every checkpoint parameter whose name and shape match into the
// model, leaving the rest at their current values (warm starts across rank
// or width changes). Returns the number of parameters copied.
int64_t load_matching_params(OmniModel & model, const std::string & path);

} // namespace omni
