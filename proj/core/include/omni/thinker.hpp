#pragma once

#include <vector>

#include "omni/config.hpp"
#include "omni/transformer.hpp"

namespace omni {

// Hidden states tapped from the middle of the backbone (post-residual).
struct BridgeState {
    Tensor  states;        // [batch*seq, hidden]
    int64_t source_layer = -1;
};

struct ThinkerOutput {
    Tensor      logits;    // [batch*seq, text_vocab]
    BridgeState bridge;
};

// Causal transformer backbone: token embedding, GQA blocks, final RMSNorm
// and a tied LM head (the embedding matrix transposed).
class Thinker {
  public:
    Thinker(const ModelConfig & cfg, Dtype dt, uint64_t seed);

    // Taped token-embedding lookup (gradient reaches the tied table).
    Tensor embed_tokens(const std::vector<int64_t> & ids) const;

    // Runs the backbone over already-injected embeddings. When a cache is
    // given, expected_pos must equal cache->pos (position consistency).
    ThinkerOutput forward(const Tensor & embeddings, int64_t batch, int64_t seq,
                          KvCache * cache = nullptr, int64_t expected_pos = -1) const;

    TransformerDims dims() const;
    void collect(std::vector<std::pair<std::string, Tensor>> & out) const;

    ModelConfig cfg;
    Tensor embed;                     // [text_vocab, hidden], tied with LM head
    std::vector<BlockWeights> blocks;
    Tensor final_norm;                // [hidden]
};

} // namespace omni
