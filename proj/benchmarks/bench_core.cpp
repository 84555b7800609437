// Micro-benchmarks for the hot paths: the numerical core, one training step
// at the toy scale, sequence assembly and the metric kernels.

#include <benchmark/benchmark.h>

#include "omni/gradcheck.hpp"
#include "omni/metrics.hpp"
#include "omni/optim.hpp"
#include "omni/rng.hpp"
#include "omni/streaming.hpp"
#include "omni/training.hpp"

using namespace omni;

static void BM_matmul(benchmark::State & state) {
    int64_t n = state.range(0);
    Tensor a = Tensor::zeros({n, n});
    Tensor b = Tensor::zeros({n, n});
    fill_normal(a, 1.0, 1);
    fill_normal(b, 1.0, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_causal_attention(benchmark::State & state) {
    int64_t T = state.range(0);
    int64_t H = 64;
    Tensor q = Tensor::zeros({T, H}), k = Tensor::zeros({T, H / 2}), v = Tensor::zeros({T, H / 2});
    fill_normal(q, 1.0, 1);
    fill_normal(k, 1.0, 2);
    fill_normal(v, 1.0, 3);
    for (auto _ : state) {
        benchmark::DoNotOptimize(causal_attention(q, k, v, 1, T, T, 4, 2));
    }
}
BENCHMARK(BM_causal_attention)->Arg(32)->Arg(128);

static void BM_thinker_forward(benchmark::State & state) {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 1);
    std::vector<int64_t> ids(32, 7);
    NoGradGuard ng;
    for (auto _ : state) {
        Tensor emb = model.thinker.embed_tokens(ids);
        benchmark::DoNotOptimize(model.thinker.forward(emb, 1, 32));
    }
}
BENCHMARK(BM_thinker_forward);

static void BM_train_step(benchmark::State & state) {
    ModelConfig cfg = ModelConfig::toy();
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 1);
    GenOptions opt;
    opt.count = 16;
    std::vector<DatasetRecord> data = generate_oracle_dataset(spec, cfg, 2, opt);
    OmniModel model(cfg, Dtype::f32, 3);
    std::vector<AssembledExample> keep;
    std::vector<const AssembledExample *> ptrs;
    for (const DatasetRecord & rec : data) keep.push_back(assemble_record(rec, cfg, Dtype::f32));
    for (const AssembledExample & ae : keep) ptrs.push_back(&ae);
    PaddedBatch pb = pad_batch(ptrs, cfg);
    std::vector<Tensor> params = model.params_with_prefix("");
    AdamWState st;
    AdamWConfig oc;
    for (auto _ : state) {
        for (Tensor & p : params) p.zero_grad();
        Tape tape;
        ForwardOutput fwd = model_forward(model, pb);
        JointLossResult jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, 1.0);
        tape.backward(jl.total);
        adamw_step(params, st, oc);
        benchmark::DoNotOptimize(jl.breakdown.total);
    }
}
BENCHMARK(BM_train_step)->Unit(benchmark::kMillisecond);

static void BM_session_step(benchmark::State & state) {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 4);
    SessionPrompt prompt;
    prompt.prompt_tokens = {cfg.text_bos_id, 9, 17};
    GenerationSession session(model, prompt, SamplingConfig{}, 1 << 30);
    for (auto _ : state) {
        if (session.status() != SessionStatus::running) {
            state.PauseTiming();
            session.~GenerationSession();
            new (&session) GenerationSession(model, prompt, SamplingConfig{}, 1 << 30);
            state.ResumeTiming();
        }
        benchmark::DoNotOptimize(session.step());
    }
}
BENCHMARK(BM_session_step);

static void BM_build_example(benchmark::State & state) {
    ModelConfig cfg = ModelConfig::toy();
    BuildInputs in;
    in.prompt_tokens = {cfg.text_bos_id, 9, 10, 11};
    for (int64_t i = 0; i < 12; ++i) in.response_tokens.push_back(12 + i);
    in.response_codes = CodeGrid(8, 12, 5);
    for (auto _ : state) {
        benchmark::DoNotOptimize(build_example(in, cfg));
    }
}
BENCHMARK(BM_build_example);

static void BM_oracle_transcribe(benchmark::State & state) {
    ModelConfig cfg = ModelConfig::toy();
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 5);
    std::vector<int64_t> tokens(64, 9);
    CodeGrid grid = oracle_codes_for(tokens, spec);
    for (auto _ : state) {
        benchmark::DoNotOptimize(oracle_transcribe(grid, spec));
    }
}
BENCHMARK(BM_oracle_transcribe);

static void BM_levenshtein(benchmark::State & state) {
    int64_t n = state.range(0);
    Rng rng(6);
    std::vector<int64_t> a, b;
    for (int64_t i = 0; i < n; ++i) {
        a.push_back(static_cast<int64_t>(rng.uniform_int(64)));
        b.push_back(static_cast<int64_t>(rng.uniform_int(64)));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(levenshtein(a, b));
    }
}
BENCHMARK(BM_levenshtein)->Arg(16)->Arg(128);

static void BM_decode_frame_stub(benchmark::State & state) {
    StreamFrame frame{0, {1, 2, 3, 4, 5, 6, 7, 8}, 8};
    for (auto _ : state) {
        benchmark::DoNotOptimize(decode_frame_stub(frame));
    }
}
BENCHMARK(BM_decode_frame_stub);

BENCHMARK_MAIN();
