#include "omni/talker.hpp"

#include "omni/rng.hpp"

namespace omni {

Talker::Talker(const ModelConfig & config, Dtype dt, uint64_t seed) : cfg(config) {
    cfg.validate();
    TransformerDims d = dims();
    blocks.resize(static_cast<size_t>(cfg.num_talker_hidden_layers));
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].init(d, dt, mix_seed(seed, fnv1a64("talker.block", 12) + i), cfg.init_std);
    }
    final_norm = Tensor::full({cfg.talker_hidden}, 1.0, dt, true);

    int64_t AV = cfg.audio_vocab, TH = cfg.talker_hidden;
    embed.shared_table = Tensor::zeros({AV, TH}, dt, true);
    fill_normal(embed.shared_table, cfg.init_std, mix_seed(seed, fnv1a64("talker.embed.shared", 18)));
    head.shared_head = Tensor::zeros({TH, AV}, dt, true);
    fill_normal(head.shared_head, cfg.init_std, mix_seed(seed, fnv1a64("talker.head.shared", 17)));
    for (int64_t q = 0; q < cfg.codebook_count; ++q) {
        if (cfg.adapter_rank_embed > 0) {
            Tensor a = Tensor::zeros({AV, cfg.adapter_rank_embed}, dt, true);
            Tensor b = Tensor::zeros({cfg.adapter_rank_embed, TH}, dt, true);
            fill_normal(a, cfg.init_std, mix_seed(seed, fnv1a64("talker.embed.a", 13) + static_cast<uint64_t>(q)));
            fill_normal(b, cfg.init_std, mix_seed(seed, fnv1a64("talker.embed.b", 13) + static_cast<uint64_t>(q)));
            embed.a.push_back(a);
            embed.b.push_back(b);
        }
        if (cfg.adapter_rank_head > 0) {
            Tensor u = Tensor::zeros({TH, cfg.adapter_rank_head}, dt, true);
            Tensor v = Tensor::zeros({cfg.adapter_rank_head, AV}, dt, true);
            fill_normal(u, cfg.init_std, mix_seed(seed, fnv1a64("talker.head.u", 12) + static_cast<uint64_t>(q)));
            fill_normal(v, cfg.init_std, mix_seed(seed, fnv1a64("talker.head.v", 12) + static_cast<uint64_t>(q)));
            head.u.push_back(u);
            head.v.push_back(v);
        }
    }
    scales.text_scale = Tensor::scalar(1.0, dt, true);
    scales.audio_scale = Tensor::scalar(1.0, dt, true);

    embed_proj_w = Tensor::zeros({cfg.hidden_size, TH}, dt, true);
    embed_proj_b = Tensor::zeros({TH}, dt, true);
    codec_proj_w = Tensor::zeros({TH, TH}, dt, true);
    codec_proj_b = Tensor::zeros({TH}, dt, true);
    spk_proj_w = Tensor::zeros({cfg.speaker_dim, TH}, dt, true);
    spk_proj_b = Tensor::zeros({TH}, dt, true);
    fill_normal(embed_proj_w, cfg.init_std, mix_seed(seed, fnv1a64("talker.embed_proj", 16)));
    fill_normal(codec_proj_w, cfg.init_std, mix_seed(seed, fnv1a64("talker.codec_proj", 16)));
    fill_normal(spk_proj_w, cfg.init_std, mix_seed(seed, fnv1a64("talker.spk_proj", 14)));
}

TransformerDims Talker::dims() const {
    return TransformerDims{cfg.talker_hidden, cfg.num_query_heads, cfg.num_kv_heads,
                           cfg.talker_intermediate(), cfg.rope_theta, cfg.norm_eps};
}

bool Talker::init_from_thinker(const Thinker & thinker, std::string * report) {
    if (cfg.talker_hidden != thinker.cfg.hidden_size ||
        cfg.talker_intermediate() != thinker.cfg.mlp_intermediate) {
        if (report) {
            *report = "talker init: hidden " + std::to_string(cfg.talker_hidden) +
                      " does not match thinker hidden " + std::to_string(thinker.cfg.hidden_size) +
                      ", keeping fresh init";
        }
        return false;
    }
    if (thinker.cfg.num_hidden_layers < cfg.num_talker_hidden_layers) {
        if (report) *report = "talker init: thinker has too few blocks, keeping fresh init";
        return false;
    }
    int64_t first = thinker.cfg.num_hidden_layers - cfg.num_talker_hidden_layers;
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].copy_from(thinker.blocks[static_cast<size_t>(first) + i]);
    }
    if (report) {
        *report = "talker init: copied thinker blocks " + std::to_string(first) + ".." +
                  std::to_string(thinker.cfg.num_hidden_layers - 1);
    }
    return true;
}

Tensor Talker::embed_grid(const std::vector<std::vector<int64_t>> & grid,
                          const std::vector<std::pair<int64_t, std::vector<double>>> & spk_rows) const {
    if (static_cast<int64_t>(grid.size()) != cfg.codebook_count) {
        throw ShapeError("talker embed: grid has " + std::to_string(grid.size()) + " rows, expected " +
                         std::to_string(cfg.codebook_count) + " codebooks");
    }
    int64_t spk = cfg.audio_spk_id();
    size_t rows = grid[0].size();
    for (const auto & r : grid) {
        if (r.size() != rows) throw ShapeError("talker embed: ragged code grid");
    }
    // spk columns must be all-spk; non-spk columns must contain no spk id
    std::vector<bool> is_spk(rows, false);
    for (size_t t = 0; t < rows; ++t) {
        int n = 0;
        for (const auto & r : grid) n += (r[t] == spk) ? 1 : 0;
        if (n != 0 && n != cfg.codebook_count) {
            throw DataError("talker embed: position " + std::to_string(t) +
                            " mixes spk and non-spk ids across codebooks");
        }
        is_spk[t] = n == cfg.codebook_count;
    }
    for (const auto & [row, vec] : spk_rows) {
        if (row < 0 || static_cast<size_t>(row) >= rows || !is_spk[static_cast<size_t>(row)]) {
            throw DataError("talker embed: speaker vector given for non-spk position " + std::to_string(row));
        }
        if (static_cast<int64_t>(vec.size()) != cfg.speaker_dim) {
            throw DataError("talker embed: speaker vector length " + std::to_string(vec.size()) +
                            " != " + std::to_string(cfg.speaker_dim));
        }
    }
    {
        std::vector<bool> covered(rows, false);
        for (const auto & [row, vec] : spk_rows) covered[static_cast<size_t>(row)] = true;
        for (size_t t = 0; t < rows; ++t) {
            if (is_spk[t] && !covered[t]) {
                throw DataError("talker embed: spk position " + std::to_string(t) +
                                " lacks a speaker vector");
            }
        }
    }

    Tensor acc;
    for (int64_t q = 0; q < cfg.codebook_count; ++q) {
        Tensor e = embedding(embed.shared_table, grid[static_cast<size_t>(q)]);
        if (!embed.a.empty()) {
            Tensor lowrank = matmul(embedding(embed.a[static_cast<size_t>(q)], grid[static_cast<size_t>(q)]),
                                    embed.b[static_cast<size_t>(q)]);
            e = add(e, lowrank);
        }
        acc = q == 0 ? e : add(acc, e);
    }
    for (const auto & [row, vec] : spk_rows) {
        Tensor sv = Tensor::from_data({1, cfg.speaker_dim}, vec, acc.dtype());
        Tensor proj = add_bias(matmul(sv, spk_proj_w), spk_proj_b);
        acc = inject_rows(acc, row, proj);  // replaces the summed embedding entirely
    }
    return acc;
}

Tensor Talker::embed_codes(const std::vector<int64_t> & column,
                           const std::optional<std::vector<double>> & speaker_override) const {
    if (static_cast<int64_t>(column.size()) != cfg.codebook_count) {
        throw ShapeError("talker embed: column has " + std::to_string(column.size()) +
                         " ids, expected " + std::to_string(cfg.codebook_count));
    }
    std::vector<std::vector<int64_t>> grid(column.size());
    for (size_t q = 0; q < column.size(); ++q) grid[q] = {column[q]};
    std::vector<std::pair<int64_t, std::vector<double>>> spk_rows;
    if (speaker_override.has_value()) spk_rows.emplace_back(0, *speaker_override);
    return embed_grid(grid, spk_rows);
}

Tensor Talker::fuse_inputs(const Tensor & bridge_states, const Tensor & codec_embedding) const {
    if (bridge_states.rows() != codec_embedding.rows()) {
        throw ShapeError("talker fuse: bridge length " + bridge_states.shape_str() +
                         " != codec history length " + codec_embedding.shape_str());
    }
    Tensor text_stream = add_bias(matmul(bridge_states, embed_proj_w), embed_proj_b);
    Tensor audio_stream = add_bias(matmul(codec_embedding, codec_proj_w), codec_proj_b);
    return add(scale_by(text_stream, scales.text_scale), scale_by(audio_stream, scales.audio_scale));
}

std::vector<Tensor> Talker::forward(const Tensor & fused, int64_t batch, int64_t seq,
                                    KvCache * cache, int64_t expected_pos) const {
    if (fused.rows() != batch * seq || fused.cols() != cfg.talker_hidden) {
        throw ShapeError("talker: fused input " + fused.shape_str() + " does not match batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
    }
    int64_t pos_offset = 0;
    if (cache != nullptr) {
        if (cache->layers.empty()) cache->layers.resize(blocks.size());
        if (expected_pos >= 0 && expected_pos != cache->pos) {
            throw DataError("talker: cache position mismatch, cache at " + std::to_string(cache->pos) +
                            " but caller expected " + std::to_string(expected_pos));
        }
        pos_offset = cache->pos;
    }
    TransformerDims d = dims();
    Tensor x = fused;
    for (size_t i = 0; i < blocks.size(); ++i) {
        x = block_forward(blocks[i], d, x, batch, seq,
                          cache ? &cache->layers[i] : nullptr, pos_offset);
    }
    if (cache != nullptr) cache->pos += seq;
    Tensor h = rmsnorm(x, final_norm, cfg.norm_eps);  // own norm, not shared with thinker

    std::vector<Tensor> logits;
    logits.reserve(static_cast<size_t>(cfg.codebook_count));
    Tensor shared = matmul(h, head.shared_head);
    for (int64_t q = 0; q < cfg.codebook_count; ++q) {
        if (head.u.empty()) {
            logits.push_back(shared);
        } else {
            Tensor lowrank = matmul(matmul(h, head.u[static_cast<size_t>(q)]), head.v[static_cast<size_t>(q)]);
            logits.push_back(add(shared, lowrank));
        }
    }
    return logits;
}

void Talker::collect(std::vector<std::pair<std::string, Tensor>> & out) const {
    for (size_t i = 0; i < blocks.size(); ++i) {
        blocks[i].collect("talker.block" + std::to_string(i), out);
    }
    out.emplace_back("talker.final_norm", final_norm);
    out.emplace_back("talker.embed.shared", embed.shared_table);
    for (size_t q = 0; q < embed.a.size(); ++q) {
        out.emplace_back("talker.embed.a" + std::to_string(q), embed.a[q]);
        out.emplace_back("talker.embed.b" + std::to_string(q), embed.b[q]);
    }
    out.emplace_back("talker.head.shared", head.shared_head);
    for (size_t q = 0; q < head.u.size(); ++q) {
        out.emplace_back("talker.head.u" + std::to_string(q), head.u[q]);
        out.emplace_back("talker.head.v" + std::to_string(q), head.v[q]);
    }
    out.emplace_back("talker.text_scale", scales.text_scale);
    out.emplace_back("talker.audio_scale", scales.audio_scale);
    out.emplace_back("talker.embed_proj.w", embed_proj_w);
    out.emplace_back("talker.embed_proj.b", embed_proj_b);
    out.emplace_back("talker.codec_proj.w", codec_proj_w);
    out.emplace_back("talker.codec_proj.b", codec_proj_b);
    out.emplace_back("talker.spk_proj.w", spk_proj_w);
    out.emplace_back("talker.spk_proj.b", spk_proj_b);
}

} // namespace omni
