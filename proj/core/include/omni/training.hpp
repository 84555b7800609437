#pragma once

#include <functional>
#include <string>
#include <vector>

#include "omni/data_io.hpp"
#include "omni/model.hpp"

namespace omni {

// The deliberately small mode switch: `all` trains backbone + talker +
// projectors; the projector modes freeze everything else. Stub encoders
// have no parameters and are never trainable.
enum class TrainMode { all, audio_proj, vision_proj };

const char * train_mode_name(TrainMode m);
TrainMode train_mode_from_string(const std::string & s);
std::vector<std::string> trainable_prefixes(TrainMode m);

struct LossBreakdown {
    int64_t step = 0;
    double  text_loss = 0.0;
    double  total = 0.0;
    std::vector<double>  audio_loss;          // per codebook
    std::vector<double>  codebook_accuracy;   // argmax == label over labeled positions
    std::vector<uint8_t> degenerate;          // codebooks with zero labeled positions
    double  grad_norm = 0.0;                  // pre-clip, 0 for eval passes

    double mean_codebook_accuracy() const;
    double mean_audio_loss() const;
    std::string to_json(const std::string & mode) const;
};

// Everything the joint objective needs, padded to one shared length.
struct PaddedBatch {
    int64_t batch = 0;
    int64_t seq = 0;
    std::vector<int64_t> text_ids;
    std::vector<int64_t> text_labels;                  // position-aligned, shifted inside the loss
    std::vector<std::vector<int64_t>> audio_ids;       // codebook-major
    std::vector<std::vector<int64_t>> audio_labels;
    std::vector<std::pair<int64_t, std::vector<double>>> spk_rows;
    std::vector<PlaceholderSpan> spans;                // starts are global rows
    std::vector<Tensor> span_features;
};
PaddedBatch pad_batch(const std::vector<const AssembledExample *> & batch, const ModelConfig & cfg);

struct ForwardOutput {
    Tensor text_logits;
    std::vector<Tensor> talker_logits;
    BridgeState bridge;
};
ForwardOutput model_forward(const OmniModel & model, const PaddedBatch & batch);

// Eq-style joint objective: total = text + lambda_audio * sum_q audio_q,
// each term a token-mean cross-entropy over its own labeled positions.
// Masked positions contribute exactly zero gradient.
struct JointLossResult {
    Tensor total;
    LossBreakdown breakdown;
};
JointLossResult joint_loss(const PaddedBatch & batch, const Tensor & text_logits,
                           const std::vector<Tensor> & talker_logits, double lambda_audio);

struct TrainHyper {
    double   lr           = 1e-3;
    int64_t  batch_size   = 16;
    int64_t  steps        = 1000;
    double   clip_norm    = 1.0;
    double   weight_decay = 0.0;
    uint64_t seed         = 0;
    int64_t  log_every    = 1;
    // Non-empty overrides the mode's trainable set (harness use).
    std::vector<std::string> trainable_override;
};

using MetricSink = std::function<void(const LossBreakdown &)>;

struct TrainResult {
    std::vector<LossBreakdown> log;
    int64_t steps_run = 0;
};

// Deterministic single-process loop: given a seed the loss trajectory is
// bit-identical between runs. A non-finite loss aborts after writing the
// last-good checkpoint to abort_checkpoint_path (when given).
TrainResult train_run(OmniModel & model, const std::vector<DatasetRecord> & data, TrainMode mode,
                      const TrainHyper & hyper, const MetricSink & sink = nullptr,
                      const std::string & abort_checkpoint_path = "");

// No-grad pass over up to max_batches batches; returns a breakdown averaged
// over batches (grad_norm = 0).
LossBreakdown eval_pass(const OmniModel & model, const std::vector<DatasetRecord> & data,
                        int64_t batch_size, int64_t max_batches, double lambda_audio);

// ---------------------------------------------------------------------------
// Experiment harnesses
// ---------------------------------------------------------------------------

struct RankCell {
    int64_t rank_embed = 0;
    int64_t rank_head = 0;
    int64_t added_params = 0;
    double  final_audio_loss = 0.0;
    double  final_codebook_accuracy = 0.0;
};

struct HarnessOptions {
    TrainHyper hyper;
    Dtype      dtype = Dtype::f32;
    uint64_t   model_seed = 0;
    int64_t    eval_batches = 4;
    int        jobs = 1;
    // Warm start: parameters with matching names/shapes are copied from this
    // checkpoint into every cell's model before training (adapters whose rank
    // differs stay freshly initialized).
    std::string init_checkpoint;
    // Streaming-eval budget for the sweeps that report oracle consistency.
    int64_t    eval_prompts = 16;
    int64_t    max_decode_steps = 48;
};

// Freezes the thinker in every run and varies the adapter ranks, sharing
// seed, data and steps across cells. Final loss/accuracy are measured over
// the training subset (convergence quality, matching the protocol's curves).
std::vector<RankCell> rank_ablation(const ModelConfig & base,
                                    const std::vector<DatasetRecord> & train_data,
                                    const std::vector<std::pair<int64_t, int64_t>> & rank_settings,
                                    const HarnessOptions & opt);

struct BridgeCell {
    int64_t layer_index = -1;
    double  final_total_loss = 0.0;
    double  oracle_cer = 1.0;
};
std::vector<BridgeCell> bridge_sweep(const ModelConfig & base,
                                     const std::vector<DatasetRecord> & train_data,
                                     const std::vector<DatasetRecord> & eval_data,
                                     const OracleTaskSpec & spec,
                                     const std::vector<int64_t> & layer_indices,
                                     const HarnessOptions & opt);

struct HiddenCell {
    int64_t talker_hidden = 0;
    int64_t talker_params = 0;
    double  final_total_loss = 0.0;
    double  oracle_cer = 1.0;
};
std::vector<HiddenCell> hidden_sweep(const ModelConfig & base,
                                     const std::vector<DatasetRecord> & train_data,
                                     const std::vector<DatasetRecord> & eval_data,
                                     const OracleTaskSpec & spec,
                                     const std::vector<int64_t> & hidden_sizes,
                                     const HarnessOptions & opt);

} // namespace omni
