#pragma once

#include <optional>
#include <vector>

#include "omni/config.hpp"
#include "omni/thinker.hpp"
#include "omni/transformer.hpp"

namespace omni {

// Shared embedding table plus per-codebook low-rank adapters:
//   embed(c, q) = shared[c] + A_q[c] * B_q
// Rank 0 disables the adapters (all codebooks embed identically).
struct TalkerEmbedding {
    Tensor shared_table;          // [audio_vocab, talker_hidden]
    std::vector<Tensor> a, b;     // per codebook: [audio_vocab, r_e], [r_e, talker_hidden]
};

// Shared linear head plus per-codebook low-rank adapters:
//   logits(h, q) = h * shared_head + (h * U_q) * V_q
struct TalkerHead {
    Tensor shared_head;           // [talker_hidden, audio_vocab]
    std::vector<Tensor> u, v;     // per codebook: [talker_hidden, r_h], [r_h, audio_vocab]
};

// Learned scalar gains on the two fused input streams.
struct FusionScales {
    Tensor text_scale;   // init 1.0
    Tensor audio_scale;  // init 1.0
};

// Independent speech-code generator: bridge/codec fusion, staggered
// eight-codebook embedding and heads, speaker vector injection.
class Talker {
  public:
    Talker(const ModelConfig & cfg, Dtype dt, uint64_t seed);

    // Copies the trailing thinker blocks into the talker blocks when the
    // hidden sizes match (bit-identical); otherwise keeps the fresh init.
    // Returns true when weights were copied.
    bool init_from_thinker(const Thinker & thinker, std::string * report = nullptr);

    // Embeds one grid column (codebook_count ids). A column whose ids are
    // all the spk token takes the projected speaker vector instead; mixed
    // spk/non-spk columns are a layout violation.
    Tensor embed_codes(const std::vector<int64_t> & column,
                       const std::optional<std::vector<double>> & speaker_override) const;

    // Batched column embedding over a codebook-major id grid laid out as
    // grid[q][row] with rows = batch*seq. spk_rows lists row indices whose
    // embedding is replaced by spk_proj(speaker vector).
    Tensor embed_grid(const std::vector<std::vector<int64_t>> & grid,
                      const std::vector<std::pair<int64_t, std::vector<double>>> & spk_rows) const;

    // text_scale * embed_proj(bridge) + audio_scale * codec_proj(codec_embedding)
    Tensor fuse_inputs(const Tensor & bridge_states, const Tensor & codec_embedding) const;

    // Runs the talker blocks + own final RMSNorm and returns one logit
    // sequence per codebook. Cache semantics match Thinker::forward.
    std::vector<Tensor> forward(const Tensor & fused, int64_t batch, int64_t seq,
                                KvCache * cache = nullptr, int64_t expected_pos = -1) const;

    TransformerDims dims() const;
    void collect(std::vector<std::pair<std::string, Tensor>> & out) const;

    ModelConfig cfg;
    std::vector<BlockWeights> blocks;
    Tensor final_norm;
    TalkerEmbedding embed;
    TalkerHead head;
    FusionScales scales;
    Tensor embed_proj_w, embed_proj_b;  // [hidden, talker_hidden]
    Tensor codec_proj_w, codec_proj_b;  // [talker_hidden, talker_hidden]
    Tensor spk_proj_w, spk_proj_b;      // [speaker_dim, talker_hidden]
};

} // namespace omni
