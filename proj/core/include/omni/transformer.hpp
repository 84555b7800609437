#pragma once

#include <string>
#include <vector>

#include "omni/tensor.hpp"

namespace omni {

struct TransformerDims {
    int64_t hidden;
    int64_t n_q_heads;
    int64_t n_kv_heads;
    int64_t intermediate;
    double  rope_theta;
    double  norm_eps;
};

// Pre-norm block: RMSNorm -> rotary GQA attention -> residual,
// RMSNorm -> SwiGLU MLP -> residual. No biases.
struct BlockWeights {
    Tensor attn_norm;          // [H]
    Tensor wq, wk, wv, wo;     // [H,H] [H,kv] [H,kv] [H,H]
    Tensor mlp_norm;           // [H]
    Tensor w_gate, w_up, w_down;

    void init(const TransformerDims & d, Dtype dt, uint64_t seed, double init_std);
    void collect(const std::string & prefix, std::vector<std::pair<std::string, Tensor>> & out) const;
    // Bit-identical weight copy (used for talker initialization).
    void copy_from(const BlockWeights & other);
};

// Per-layer rolling key/value memory for incremental decoding. Keys are
// stored post-rotary. Cached forward supports batch == 1 only.
struct KvLayer {
    Tensor k, v;  // [len, kv_dim], undefined while empty
    int64_t len = 0;
};

struct KvCache {
    std::vector<KvLayer> layers;
    int64_t pos = 0;  // number of positions already consumed
};

Tensor block_forward(const BlockWeights & w, const TransformerDims & d,
                     const Tensor & x, int64_t batch, int64_t seq,
                     KvLayer * cache, int64_t pos_offset);

} // namespace omni
