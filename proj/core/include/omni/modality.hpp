#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omni/config.hpp"
#include "omni/tensor.hpp"

namespace omni {

enum class Modality { audio, vision };

inline const char * modality_name(Modality m) { return m == Modality::audio ? "audio" : "vision"; }

// Contiguous run of placeholder token ids in the text stream that projected
// encoder states replace.
struct PlaceholderSpan {
    Modality modality;
    int64_t  start  = 0;
    int64_t  length = 0;

    bool operator==(const PlaceholderSpan &) const = default;
};

struct StubConfig {
    int64_t audio_bytes_per_feature = 1024;  // audio stub length rule: L = ceil(bytes / this)
};

// Deterministic frozen-encoder stand-in. Identical bytes always produce
// identical features; vision output length is fixed at image_token_count,
// audio length follows the bytes-per-feature rule.
Tensor encode_stub(Modality kind, const std::vector<uint8_t> & content,
                   const ModelConfig & cfg, Dtype dt, const StubConfig & stub = {});

int64_t stub_feature_length(Modality kind, size_t content_bytes,
                            const ModelConfig & cfg, const StubConfig & stub = {});

// LayerNorm -> Linear -> GELU -> Linear, feature_dim -> hidden.
struct Projector {
    Tensor ln_gain, ln_bias;  // [feature_dim]
    Tensor w1, b1;            // [feature_dim, hidden], [hidden]
    Tensor w2, b2;            // [hidden, hidden], [hidden]
    double norm_eps = 1e-5;

    void init(int64_t feature_dim, int64_t hidden, double eps, Dtype dt, uint64_t seed, double init_std);
    Tensor forward(const Tensor & features) const;
    int64_t input_dim() const { return ln_gain.numel(); }
    void collect(const std::string & prefix, std::vector<std::pair<std::string, Tensor>> & out) const;
};

// Replaces the rows of each span with the matching projected states; rows
// outside every span are bit-identical to the input. Spans must be disjoint
// and each projected block must have exactly span.length rows.
Tensor inject_spans(const Tensor & embeddings, const std::vector<PlaceholderSpan> & spans,
                    const std::vector<Tensor> & projected);

} // namespace omni
