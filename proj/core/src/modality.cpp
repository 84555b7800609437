#include "omni/modality.hpp"

#include <algorithm>

#include "omni/rng.hpp"

namespace omni {

int64_t stub_feature_length(Modality kind, size_t content_bytes,
                            const ModelConfig & cfg, const StubConfig & stub) {
    if (kind == Modality::vision) return cfg.image_token_count;
    int64_t per = stub.audio_bytes_per_feature;
    return static_cast<int64_t>((content_bytes + static_cast<size_t>(per) - 1) / static_cast<size_t>(per));
}

Tensor encode_stub(Modality kind, const std::vector<uint8_t> & content,
                   const ModelConfig & cfg, Dtype dt, const StubConfig & stub) {
    if (content.empty()) {
        throw DataError(std::string("encode_stub: empty ") + modality_name(kind) + " content");
    }
    int64_t L = stub_feature_length(kind, content.size(), cfg, stub);
    int64_t D = kind == Modality::audio ? cfg.audio_feature_dim : cfg.vision_feature_dim;
    uint64_t key = fnv1a64(content.data(), content.size());
    key = mix_seed(key, kind == Modality::audio ? 0xA11D10ULL : 0x715105ULL);
    Tensor out = Tensor::zeros({L, D}, dt);
    for (int64_t i = 0; i < L; ++i) {
        for (int64_t j = 0; j < D; ++j) {
            uint64_t h = splitmix64(key ^ splitmix64(static_cast<uint64_t>(i) * 0x9E37ULL + static_cast<uint64_t>(j)));
            // uniform in [-1, 1)
            double v = static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
            out.data()[static_cast<size_t>(i * D + j)] =
                dt == Dtype::f32 ? static_cast<double>(static_cast<float>(v)) : v;
        }
    }
    return out;
}

void Projector::init(int64_t feature_dim, int64_t hidden, double eps, Dtype dt,
                     uint64_t seed, double init_std) {
    norm_eps = eps;
    ln_gain = Tensor::full({feature_dim}, 1.0, dt, true);
    ln_bias = Tensor::zeros({feature_dim}, dt, true);
    w1 = Tensor::zeros({feature_dim, hidden}, dt, true);
    b1 = Tensor::zeros({hidden}, dt, true);
    w2 = Tensor::zeros({hidden, hidden}, dt, true);
    b2 = Tensor::zeros({hidden}, dt, true);
    fill_normal(w1, init_std, mix_seed(seed, 1));
    fill_normal(w2, init_std, mix_seed(seed, 2));
}

Tensor Projector::forward(const Tensor & features) const {
    if (features.cols() != input_dim()) {
        throw ShapeError("projector: feature dim of " + features.shape_str() +
                         " does not match projector input [" + std::to_string(input_dim()) + "]");
    }
    Tensor h = layernorm(features, ln_gain, ln_bias, norm_eps);
    h = add_bias(matmul(h, w1), b1);
    h = gelu(h);
    return add_bias(matmul(h, w2), b2);  // sequence axis preserved
}

void Projector::collect(const std::string & prefix, std::vector<std::pair<std::string, Tensor>> & out) const {
    out.emplace_back(prefix + ".ln_gain", ln_gain);
    out.emplace_back(prefix + ".ln_bias", ln_bias);
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
}

Tensor inject_spans(const Tensor & embeddings, const std::vector<PlaceholderSpan> & spans,
                    const std::vector<Tensor> & projected) {
    if (spans.size() != projected.size()) {
        throw DataError("inject: " + std::to_string(spans.size()) + " spans but " +
                        std::to_string(projected.size()) + " projected blocks");
    }
    // overlap check over sorted starts
    std::vector<size_t> order(spans.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return spans[a].start < spans[b].start; });
    for (size_t i = 1; i < order.size(); ++i) {
        const PlaceholderSpan & prev = spans[order[i - 1]];
        const PlaceholderSpan & cur = spans[order[i]];
        if (prev.start + prev.length > cur.start) {
            throw DataError("inject: overlapping spans at " + std::to_string(prev.start) +
                            " and " + std::to_string(cur.start));
        }
    }
    Tensor out = embeddings;
    for (size_t i = 0; i < spans.size(); ++i) {
        const PlaceholderSpan & s = spans[i];
        if (projected[i].rows() != s.length) {
            throw DataError(std::string("inject: ") + modality_name(s.modality) + " span at " +
                            std::to_string(s.start) + " has length " + std::to_string(s.length) +
                            " but projected states have " + std::to_string(projected[i].rows()) + " rows");
        }
        if (s.start < 0 || s.start + s.length > embeddings.rows()) {
            throw DataError("inject: span at " + std::to_string(s.start) + " length " +
                            std::to_string(s.length) + " exceeds sequence of " +
                            std::to_string(embeddings.rows()) + " rows");
        }
        out = inject_rows(out, s.start, projected[i]);
    }
    return out;
}

} // namespace omni
