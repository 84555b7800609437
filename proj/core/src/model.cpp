#include "omni/model.hpp"

#include "omni/rng.hpp"

namespace omni {

OmniModel::OmniModel(const ModelConfig & config, Dtype dt, uint64_t seed)
    : cfg(config),
      dtype(dt),
      thinker(config, dt, mix_seed(seed, 0xE11)),
      talker(config, dt, mix_seed(seed, 0xA77)) {
    proj_audio.init(cfg.audio_feature_dim, cfg.hidden_size, cfg.norm_eps, dt,
                    mix_seed(seed, 0xF00D), cfg.init_std);
    proj_vision.init(cfg.vision_feature_dim, cfg.hidden_size, cfg.norm_eps, dt,
                     mix_seed(seed, 0xF00E), cfg.init_std);
    talker.init_from_thinker(thinker);
}

std::vector<std::pair<std::string, Tensor>> OmniModel::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    thinker.collect(out);
    proj_audio.collect("proj_audio", out);
    proj_vision.collect("proj_vision", out);
    talker.collect(out);
    return out;
}

std::vector<Tensor> OmniModel::params_with_prefix(const std::string & prefix) const {
    std::vector<Tensor> out;
    for (auto & [name, t] : named_params()) {
        if (name.rfind(prefix, 0) == 0) out.push_back(t);
    }
    return out;
}

int64_t OmniModel::param_count() const {
    int64_t n = 0;
    for (auto & [name, t] : named_params()) n += t.numel();
    return n;
}

uint64_t OmniModel::param_hash(const std::string & prefix) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (auto & [name, t] : named_params()) {
        if (name.rfind(prefix, 0) != 0) continue;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t.data().data(), t.data().size() * sizeof(double), h);
    }
    return h;
}

} // namespace omni
