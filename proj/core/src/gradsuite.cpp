#include <chrono>

#include "omni/gradcheck.hpp"
#include "omni/training.hpp"

namespace omni {

// The smallest config that still exercises every module in one loss: GQA
// blocks in both stacks, both projectors (one audio and one vision span in
// the prompt), reference codes, the speaker slot and all adapters.
static ModelConfig grad_suite_config() {
    ModelConfig c;
    c.num_hidden_layers = 2;
    c.hidden_size = 16;
    c.num_query_heads = 2;
    c.num_kv_heads = 1;
    c.text_vocab = 8;
    c.mlp_intermediate = 24;
    c.num_talker_hidden_layers = 1;
    c.talker_hidden = 16;
    c.codebook_count = 8;
    c.codebook_size = 8;
    c.audio_vocab = 12;
    c.adapter_rank_embed = 2;
    c.adapter_rank_head = 2;
    c.audio_feature_dim = 6;
    c.vision_feature_dim = 8;
    c.image_token_count = 2;
    c.speaker_dim = 192;
    c.validate();
    return c;
}

GradSuiteResult run_model_gradient_suite(uint64_t seed, int64_t coords_per_param, double epsilon) {
    auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg = grad_suite_config();
    OmniModel model(cfg, Dtype::f64, seed);

    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, seed);
    GenOptions gopt;
    gopt.count = 1;
    gopt.prompt_len_min = 2;
    gopt.prompt_len_max = 3;
    gopt.response_len_min = 3;
    gopt.response_len_max = 4;
    gopt.ref_fraction = 1.0;
    gopt.speaker_fraction = 1.0;
    gopt.vision_fraction = 1.0;
    gopt.audio_span_fraction = 1.0;
    std::vector<DatasetRecord> data = generate_oracle_dataset(spec, cfg, seed, gopt);
    AssembledExample ae = assemble_record(data[0], cfg, Dtype::f64);
    PaddedBatch pb = pad_batch({&ae}, cfg);

    auto loss_fn = [&]() {
        ForwardOutput fwd = model_forward(model, pb);
        JointLossResult jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, cfg.lambda_audio);
        return jl.total;
    };

    GradCheckOptions opt;
    opt.epsilon = epsilon;
    opt.max_coords_per_param = coords_per_param;
    opt.seed = seed;

    GradSuiteResult res;
    auto params = model.named_params();
    res.params_checked = static_cast<int64_t>(params.size());
    res.report = finite_difference_check(loss_fn, params, opt);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace omni
