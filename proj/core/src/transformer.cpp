#include "omni/transformer.hpp"

#include "omni/rng.hpp"

namespace omni {

void BlockWeights::init(const TransformerDims & d, Dtype dt, uint64_t seed, double init_std) {
    int64_t H = d.hidden;
    int64_t kv = d.n_kv_heads * (H / d.n_q_heads);
    attn_norm = Tensor::full({H}, 1.0, dt, true);
    wq = Tensor::zeros({H, H}, dt, true);
    wk = Tensor::zeros({H, kv}, dt, true);
    wv = Tensor::zeros({H, kv}, dt, true);
    wo = Tensor::zeros({H, H}, dt, true);
    mlp_norm = Tensor::full({H}, 1.0, dt, true);
    w_gate = Tensor::zeros({H, d.intermediate}, dt, true);
    w_up   = Tensor::zeros({H, d.intermediate}, dt, true);
    w_down = Tensor::zeros({d.intermediate, H}, dt, true);
    fill_normal(wq, init_std, mix_seed(seed, 1));
    fill_normal(wk, init_std, mix_seed(seed, 2));
    fill_normal(wv, init_std, mix_seed(seed, 3));
    fill_normal(wo, init_std, mix_seed(seed, 4));
    fill_normal(w_gate, init_std, mix_seed(seed, 5));
    fill_normal(w_up, init_std, mix_seed(seed, 6));
    fill_normal(w_down, init_std, mix_seed(seed, 7));
}

void BlockWeights::collect(const std::string & prefix, std::vector<std::pair<std::string, Tensor>> & out) const {
    out.emplace_back(prefix + ".attn_norm", attn_norm);
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
    out.emplace_back(prefix + ".mlp_norm", mlp_norm);
    out.emplace_back(prefix + ".w_gate", w_gate);
    out.emplace_back(prefix + ".w_up", w_up);
    out.emplace_back(prefix + ".w_down", w_down);
}

void BlockWeights::copy_from(const BlockWeights & other) {
    auto cp = [](Tensor & dst, const Tensor & src) {
        if (dst.shape() != src.shape()) {
            throw ShapeError("block copy: shape mismatch " + dst.shape_str() + " vs " + src.shape_str());
        }
        dst.data() = src.data();
    };
    cp(attn_norm, other.attn_norm);
    cp(wq, other.wq);
    cp(wk, other.wk);
    cp(wv, other.wv);
    cp(wo, other.wo);
    cp(mlp_norm, other.mlp_norm);
    cp(w_gate, other.w_gate);
    cp(w_up, other.w_up);
    cp(w_down, other.w_down);
}

Tensor block_forward(const BlockWeights & w, const TransformerDims & d,
                     const Tensor & x, int64_t batch, int64_t seq,
                     KvLayer * cache, int64_t pos_offset) {
    if (cache != nullptr && batch != 1) {
        throw ShapeError("block_forward: cached decoding supports batch 1 only");
    }
    Tensor h = rmsnorm(x, w.attn_norm, d.norm_eps);
    Tensor q = rope(matmul(h, w.wq), batch, seq, d.n_q_heads, pos_offset, d.rope_theta);
    Tensor k = rope(matmul(h, w.wk), batch, seq, d.n_kv_heads, pos_offset, d.rope_theta);
    Tensor v = matmul(h, w.wv);

    int64_t kv_len = seq;
    if (cache != nullptr) {
        if (cache->len > 0) {
            k = concat_rows({cache->k, k});
            v = concat_rows({cache->v, v});
        }
        cache->k = k;
        cache->v = v;
        cache->len = k.rows();
        kv_len = cache->len;
    }

    Tensor attn = causal_attention(q, k, v, batch, seq, kv_len, d.n_q_heads, d.n_kv_heads);
    Tensor x1 = add(x, matmul(attn, w.wo));

    Tensor h2 = rmsnorm(x1, w.mlp_norm, d.norm_eps);
    Tensor mlp = matmul(mul(silu(matmul(h2, w.w_gate)), matmul(h2, w.w_up)), w.w_down);
    return add(x1, mlp);
}

} // namespace omni
