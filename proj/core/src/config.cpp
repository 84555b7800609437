#include "omni/config.hpp"

#include <json.hpp>

namespace omni {

int64_t default_bridge_index(int64_t num_hidden_layers) {
    if (num_hidden_layers < 2) {
        throw DataError("default_bridge_index: " + std::to_string(num_hidden_layers) +
                        " layers leave no valid middle layer (need >= 2)");
    }
    return num_hidden_layers / 2 - 1;
}

int64_t ModelConfig::resolved_bridge_index() const {
    if (bridge_layer_index >= 0) {
        if (bridge_layer_index >= num_hidden_layers) {
            throw DataError("config: bridge_layer_index " + std::to_string(bridge_layer_index) +
                            " out of range for " + std::to_string(num_hidden_layers) + " layers");
        }
        return bridge_layer_index;
    }
    return default_bridge_index(num_hidden_layers);
}

void ModelConfig::validate() const {
    auto fail = [](const std::string & rule) { throw DataError("config: " + rule); };
    if (num_hidden_layers < 0 || num_talker_hidden_layers < 0) fail("layer counts must be non-negative");
    if (hidden_size <= 0 || talker_hidden <= 0) fail("hidden sizes must be positive");
    if (num_query_heads <= 0 || num_kv_heads <= 0) fail("head counts must be positive");
    if (num_query_heads % num_kv_heads != 0) fail("num_query_heads must be divisible by num_kv_heads");
    if (hidden_size % num_query_heads != 0) fail("hidden_size must be divisible by num_query_heads");
    if (talker_hidden % num_query_heads != 0) fail("talker_hidden must be divisible by num_query_heads");
    if (head_dim() % 2 != 0) fail("head_dim must be even for rotary positions");
    if (talker_head_dim() % 2 != 0) fail("talker head_dim must be even for rotary positions");
    if (codebook_count <= 0) fail("codebook_count must be positive");
    if (codebook_size <= 0) fail("codebook_size must be positive");
    if (audio_vocab < codebook_size + 4) {
        fail("audio_vocab must reserve at least 4 special ids above codebook_size");
    }
    if (adapter_rank_embed < 0 || adapter_rank_embed > talker_hidden) {
        fail("adapter_rank_embed must be in [0, talker_hidden]");
    }
    if (adapter_rank_head < 0 || adapter_rank_head > talker_hidden) {
        fail("adapter_rank_head must be in [0, talker_hidden]");
    }
    if (text_vocab <= image_placeholder_id) fail("text_vocab too small for reserved text ids");
    if (audio_feature_dim <= 0 || vision_feature_dim <= 0) fail("feature dims must be positive");
    if (image_token_count <= 0) fail("image_token_count must be positive");
    if (speaker_dim <= 0) fail("speaker_dim must be positive");
    if (lambda_audio < 0.0) fail("lambda_audio must be non-negative");
    if (stagger_offset_base < 1) fail("stagger_offset_base must be >= 1");
    if (max_sequence_length < 16) fail("max_sequence_length must be at least 16");
    if (mlp_intermediate <= 0) fail("mlp_intermediate must be positive");
    if (talker_intermediate() <= 0) fail("talker intermediate width resolves to zero");
}

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.num_hidden_layers = 4;
    c.hidden_size = 64;
    c.num_query_heads = 4;
    c.num_kv_heads = 2;
    c.text_vocab = 64;
    c.mlp_intermediate = 128;
    c.num_talker_hidden_layers = 2;
    c.talker_hidden = 64;
    c.audio_vocab = 68;
    c.codebook_count = 8;
    c.codebook_size = 64;
    c.adapter_rank_embed = 8;
    c.adapter_rank_head = 8;
    c.audio_feature_dim = 32;
    c.vision_feature_dim = 48;
    c.image_token_count = 8;
    c.speaker_dim = 192;
    return c;
}

static int64_t block_params(int64_t hidden, int64_t nq, int64_t nkv, int64_t inter) {
    int64_t dh = hidden / nq;
    int64_t kv_dim = nkv * dh;
    int64_t attn = hidden * hidden        // wq
                 + 2 * hidden * kv_dim    // wk, wv
                 + hidden * hidden;       // wo
    int64_t mlp = 2 * hidden * inter + inter * hidden;
    return 2 * hidden + attn + mlp;       // + two norm gains
}

static int64_t projector_params(int64_t feature_dim, int64_t hidden) {
    return 2 * feature_dim                      // layernorm gain + bias
         + feature_dim * hidden + hidden        // linear 1
         + hidden * hidden + hidden;            // linear 2
}

ParamCounts count_parameters(const ModelConfig & cfg) {
    ParamCounts pc;
    // Thinker: tied embedding/head counted once.
    pc.thinker = cfg.text_vocab * cfg.hidden_size
               + cfg.num_hidden_layers * block_params(cfg.hidden_size, cfg.num_query_heads,
                                                      cfg.num_kv_heads, cfg.mlp_intermediate)
               + cfg.hidden_size;

    int64_t th = cfg.talker_hidden;
    pc.embed_adapter_per_codebook = cfg.adapter_rank_embed * (cfg.audio_vocab + th);
    pc.head_adapter_per_codebook  = cfg.adapter_rank_head * (th + cfg.audio_vocab);
    pc.talker = cfg.num_talker_hidden_layers * block_params(th, cfg.num_query_heads,
                                                            cfg.num_kv_heads, cfg.talker_intermediate())
              + th                                        // final norm
              + cfg.audio_vocab * th                      // shared embedding table
              + cfg.codebook_count * pc.embed_adapter_per_codebook
              + th * cfg.audio_vocab                      // shared head
              + cfg.codebook_count * pc.head_adapter_per_codebook
              + cfg.hidden_size * th + th                 // embed_proj
              + th * th + th                              // codec_proj
              + cfg.speaker_dim * th + th                 // spk_proj
              + 2;                                        // fusion scales

    pc.audio_projector  = projector_params(cfg.audio_feature_dim, cfg.hidden_size);
    pc.vision_projector = projector_params(cfg.vision_feature_dim, cfg.hidden_size);
    pc.total = pc.thinker + pc.talker + pc.audio_projector + pc.vision_projector;
    return pc;
}

std::string config_to_json(const ModelConfig & c) {
    nlohmann::json j;
    j["num_hidden_layers"] = c.num_hidden_layers;
    j["hidden_size"] = c.hidden_size;
    j["num_query_heads"] = c.num_query_heads;
    j["num_kv_heads"] = c.num_kv_heads;
    j["text_vocab"] = c.text_vocab;
    j["mlp_intermediate"] = c.mlp_intermediate;
    j["num_talker_hidden_layers"] = c.num_talker_hidden_layers;
    j["talker_hidden"] = c.talker_hidden;
    j["audio_vocab"] = c.audio_vocab;
    j["codebook_count"] = c.codebook_count;
    j["codebook_size"] = c.codebook_size;
    j["adapter_rank_embed"] = c.adapter_rank_embed;
    j["adapter_rank_head"] = c.adapter_rank_head;
    j["bridge_layer_index"] = c.bridge_layer_index;
    j["audio_feature_dim"] = c.audio_feature_dim;
    j["vision_feature_dim"] = c.vision_feature_dim;
    j["image_token_count"] = c.image_token_count;
    j["speaker_dim"] = c.speaker_dim;
    j["lambda_audio"] = c.lambda_audio;
    j["rope_theta"] = c.rope_theta;
    j["norm_eps"] = c.norm_eps;
    j["init_std"] = c.init_std;
    j["stagger_offset_base"] = c.stagger_offset_base;
    j["max_sequence_length"] = c.max_sequence_length;
    j["text_pad_id"] = c.text_pad_id;
    j["text_bos_id"] = c.text_bos_id;
    j["text_eos_id"] = c.text_eos_id;
    j["audio_placeholder_id"] = c.audio_placeholder_id;
    j["image_placeholder_id"] = c.image_placeholder_id;
    return j.dump();
}

ModelConfig config_from_json(const std::string & json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const std::exception & e) {
        throw DataError(std::string("config: bad json: ") + e.what());
    }
    ModelConfig c;
    auto geti = [&](const char * k, int64_t & dst) { if (j.contains(k)) dst = j.at(k).get<int64_t>(); };
    auto getd = [&](const char * k, double & dst) { if (j.contains(k)) dst = j.at(k).get<double>(); };
    geti("num_hidden_layers", c.num_hidden_layers);
    geti("hidden_size", c.hidden_size);
    geti("num_query_heads", c.num_query_heads);
    geti("num_kv_heads", c.num_kv_heads);
    geti("text_vocab", c.text_vocab);
    geti("mlp_intermediate", c.mlp_intermediate);
    geti("num_talker_hidden_layers", c.num_talker_hidden_layers);
    geti("talker_hidden", c.talker_hidden);
    geti("audio_vocab", c.audio_vocab);
    geti("codebook_count", c.codebook_count);
    geti("codebook_size", c.codebook_size);
    geti("adapter_rank_embed", c.adapter_rank_embed);
    geti("adapter_rank_head", c.adapter_rank_head);
    geti("bridge_layer_index", c.bridge_layer_index);
    geti("audio_feature_dim", c.audio_feature_dim);
    geti("vision_feature_dim", c.vision_feature_dim);
    geti("image_token_count", c.image_token_count);
    geti("speaker_dim", c.speaker_dim);
    getd("lambda_audio", c.lambda_audio);
    getd("rope_theta", c.rope_theta);
    getd("norm_eps", c.norm_eps);
    getd("init_std", c.init_std);
    geti("stagger_offset_base", c.stagger_offset_base);
    geti("max_sequence_length", c.max_sequence_length);
    geti("text_pad_id", c.text_pad_id);
    geti("text_bos_id", c.text_bos_id);
    geti("text_eos_id", c.text_eos_id);
    geti("audio_placeholder_id", c.audio_placeholder_id);
    geti("image_placeholder_id", c.image_placeholder_id);
    return c;
}

} // namespace omni
