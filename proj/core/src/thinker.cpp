#include "omni/thinker.hpp"

#include "omni/rng.hpp"

namespace omni {

Thinker::Thinker(const ModelConfig & config, Dtype dt, uint64_t seed) : cfg(config) {
    cfg.validate();
    embed = Tensor::zeros({cfg.text_vocab, cfg.hidden_size}, dt, true);
    fill_normal(embed, cfg.init_std, mix_seed(seed, fnv1a64("thinker.embed", 13)));
    TransformerDims d = dims();
    blocks.resize(static_cast<size_t>(cfg.num_hidden_layers));
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].init(d, dt, mix_seed(seed, fnv1a64("thinker.block", 12) + i), cfg.init_std);
    }
    final_norm = Tensor::full({cfg.hidden_size}, 1.0, dt, true);
}

TransformerDims Thinker::dims() const {
    return TransformerDims{cfg.hidden_size, cfg.num_query_heads, cfg.num_kv_heads,
                           cfg.mlp_intermediate, cfg.rope_theta, cfg.norm_eps};
}

Tensor Thinker::embed_tokens(const std::vector<int64_t> & ids) const {
    return embedding(embed, ids);
}

ThinkerOutput Thinker::forward(const Tensor & embeddings, int64_t batch, int64_t seq,
                               KvCache * cache, int64_t expected_pos) const {
    if (embeddings.rows() != batch * seq || embeddings.cols() != cfg.hidden_size) {
        throw ShapeError("thinker: embeddings " + embeddings.shape_str() + " do not match batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq) +
                         " x hidden " + std::to_string(cfg.hidden_size));
    }
    int64_t pos_offset = 0;
    if (cache != nullptr) {
        if (cache->layers.empty()) cache->layers.resize(blocks.size());
        if (expected_pos >= 0 && expected_pos != cache->pos) {
            throw DataError("thinker: cache position mismatch, cache at " + std::to_string(cache->pos) +
                            " but caller expected " + std::to_string(expected_pos));
        }
        pos_offset = cache->pos;
    }

    TransformerDims d = dims();
    int64_t bridge_at = cfg.resolved_bridge_index();
    Tensor x = embeddings;
    ThinkerOutput out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        x = block_forward(blocks[i], d, x, batch, seq,
                          cache ? &cache->layers[i] : nullptr, pos_offset);
        if (static_cast<int64_t>(i) == bridge_at) {
            // Tap is the residual stream after this block, before the next.
            out.bridge.states = x;
            out.bridge.source_layer = static_cast<int64_t>(i);
        }
    }
    if (cache != nullptr) cache->pos += seq;

    Tensor h = rmsnorm(x, final_norm, cfg.norm_eps);
    out.logits = matmul_nt(h, embed);  // tied head
    return out;
}

void Thinker::collect(std::vector<std::pair<std::string, Tensor>> & out) const {
    out.emplace_back("thinker.embed", embed);
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect("thinker.block" + std::to_string(i), out);
    }
    out.emplace_back("thinker.final_norm", final_norm);
}

} // namespace omni
