#pragma once

#include <cstdint>
#include <string>

#include "omni/errors.hpp"

namespace omni {

// All architecture hyperparameters. Defaults are the full-scale module
// dimensions; tests and the acceptance harness run the toy() scale.
struct ModelConfig {
    // thinker backbone
    int64_t num_hidden_layers = 8;
    int64_t hidden_size       = 768;
    int64_t num_query_heads   = 8;
    int64_t num_kv_heads      = 4;
    int64_t text_vocab        = 6400;
    // The MLP width of the backbone blocks is not pinned by the reference
    // module table; it is an explicit knob.
    int64_t mlp_intermediate  = 2048;

    // talker
    int64_t num_talker_hidden_layers = 4;
    int64_t talker_hidden            = 768;
    int64_t audio_vocab              = 2112;
    int64_t codebook_count           = 8;
    int64_t codebook_size            = 2048;
    int64_t adapter_rank_embed       = 256;
    int64_t adapter_rank_head        = 256;

    // bridge tap; -1 resolves to default_bridge_index(num_hidden_layers)
    int64_t bridge_layer_index = -1;

    // modality interfaces
    int64_t audio_feature_dim  = 512;
    int64_t vision_feature_dim = 768;
    int64_t image_token_count  = 64;
    int64_t speaker_dim        = 192;

    double lambda_audio = 1.0;

    // artifact knobs
    double  rope_theta          = 1e6;
    double  norm_eps            = 1e-5;
    double  init_std            = 0.02;
    // Codebook q' takes its first audio label at assistant_start + q' +
    // stagger_offset_base. The default 1 makes the first generated text step
    // carry no audio; 2 selects the one-based reading of the stagger rule.
    int64_t stagger_offset_base = 1;
    // Examples longer than this are rejected outright; silent truncation
    // would break the stagger alignment invisibly.
    int64_t max_sequence_length = 4096;

    // reserved text ids
    int64_t text_pad_id         = 0;
    int64_t text_bos_id         = 1;
    int64_t text_eos_id         = 2;
    int64_t audio_placeholder_id = 3;
    int64_t image_placeholder_id = 4;

    // reserved audio ids, fixed layout inside [codebook_size, audio_vocab)
    int64_t audio_pad_id() const { return codebook_size; }
    int64_t audio_bos_id() const { return codebook_size + 1; }
    int64_t audio_eos_id() const { return codebook_size + 2; }
    int64_t audio_spk_id() const { return codebook_size + 3; }

    int64_t head_dim() const { return hidden_size / num_query_heads; }
    int64_t talker_head_dim() const { return talker_hidden / num_query_heads; }
    // Talker MLP width scales with the talker hidden size.
    int64_t talker_intermediate() const { return mlp_intermediate * talker_hidden / hidden_size; }

    int64_t resolved_bridge_index() const;

    // Throws DataError naming the violated rule.
    void validate() const;

    // The end-to-end convergence scale: thinker 4x64, talker 2x64,
    // text vocab 64, 8 codebooks of size 64, rank-8 adapters.
    static ModelConfig toy();
};

// floor(num_hidden_layers / 2) - 1; requires num_hidden_layers >= 2.
int64_t default_bridge_index(int64_t num_hidden_layers);

// Structural per-module parameter counts (tied embedding/head counted once).
struct ParamCounts {
    int64_t thinker           = 0;
    int64_t talker            = 0;
    int64_t audio_projector   = 0;
    int64_t vision_projector  = 0;
    int64_t embed_adapter_per_codebook = 0;
    int64_t head_adapter_per_codebook  = 0;
    int64_t total             = 0;
};
ParamCounts count_parameters(const ModelConfig & cfg);

std::string config_to_json(const ModelConfig & cfg);
ModelConfig config_from_json(const std::string & json_text);

} // namespace omni
