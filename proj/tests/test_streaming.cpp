#include <doctest.h>

#include <cmath>
#include <thread>

#include "omni/data_io.hpp"
#include "omni/streaming.hpp"

using namespace omni;

static SessionPrompt plain_prompt(const ModelConfig & cfg) {
    SessionPrompt p;
    p.prompt_tokens = {cfg.text_bos_id, 9, 17, 30};
    return p;
}

// Random toy checkpoints sample eos at unpredictable steps; fish for a model
// whose greedy generation stays alive for at least `min_steps`.
static uint64_t seed_with_long_generation(const ModelConfig & cfg, int64_t min_steps) {
    for (uint64_t seed = 0; seed < 64; ++seed) {
        OmniModel model(cfg, Dtype::f32, seed);
        GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 200);
        int64_t steps = 0;
        while (s.status() == SessionStatus::running && steps < min_steps) {
            s.step();
            ++steps;
        }
        if (steps >= min_steps && s.status() == SessionStatus::running) return seed;
    }
    REQUIRE(false);
    return 0;
}

TEST_CASE("step 0 produces a text id and no audio") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 1);
    GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 50);
    GenerationSession::StepResult r = s.step();
    CHECK(r.step == 0);
    CHECK(r.text_id >= 0);
    CHECK(r.codes.empty());       // the first generated text step has no audio output
    CHECK(!r.frame.has_value());
}

TEST_CASE("the delay schedule: codebook q' has max(0, s - q') codes after step s") {
    ModelConfig cfg = ModelConfig::toy();
    uint64_t seed = seed_with_long_generation(cfg, 24);
    OmniModel model(cfg, Dtype::f32, seed);
    GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 200);
    for (int64_t step = 0; step < 24; ++step) {
        s.step();
        for (int64_t q = 0; q < 8; ++q) {
            int64_t want = std::max<int64_t>(0, (step + 1) - q - 1);
            CHECK(static_cast<int64_t>(s.generated_codes()[static_cast<size_t>(q)].size()) == want);
        }
        // total frames after S steps = max(0, S - 8)
        CHECK(s.frames_emitted() == std::max<int64_t>(0, (step + 1) - 8));
    }
}

TEST_CASE("the first complete frame appears at step 8 with frame_index 0") {
    ModelConfig cfg = ModelConfig::toy();
    uint64_t seed = seed_with_long_generation(cfg, 12);
    OmniModel model(cfg, Dtype::f32, seed);
    GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 200);
    for (int64_t step = 0; step < 8; ++step) {
        GenerationSession::StepResult r = s.step();
        CHECK(!r.frame.has_value());
    }
    GenerationSession::StepResult r = s.step();  // step index 8
    REQUIRE(r.frame.has_value());
    CHECK(r.frame->frame_index == 0);
    CHECK(r.frame->emitted_at_text_step == 8);
    CHECK(r.frame->codes.size() == 8);
}

TEST_CASE("frame indices arrive in order with no gaps or repeats") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 5);
    GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 40);
    int64_t expect = 0;
    while (s.status() == SessionStatus::running) {
        GenerationSession::StepResult r = s.step();
        if (r.frame.has_value()) {
            CHECK(r.frame->frame_index == expect);
            ++expect;
        }
    }
    CHECK(s.frames_emitted() == expect);
}

TEST_CASE("text eos triggers an audio-only flush so frames = text steps - 8") {
    ModelConfig cfg = ModelConfig::toy();
    // temperature sampling visits eos somewhere in (0, 30) for some seed
    SamplingConfig sc;
    sc.greedy = false;
    sc.temperature = 1.5;
    for (uint64_t seed = 0; seed < 64; ++seed) {
        OmniModel model(cfg, Dtype::f32, seed);
        sc.seed = seed;
        GenerationSession s(model, plain_prompt(cfg), sc, 32);
        while (s.status() == SessionStatus::running) s.step();
        bool natural_eos = !s.text_ids().empty() && s.text_ids().back() == cfg.text_eos_id;
        if (!natural_eos || s.text_ids().size() < 2) continue;
        int64_t eos_step = static_cast<int64_t>(s.text_ids().size()) - 1;
        CHECK(s.steps_taken() == eos_step + 8);
        CHECK(s.frames_emitted() == eos_step);
        CHECK(s.frames_emitted() == s.steps_taken() - 8);
        CHECK(s.status() == SessionStatus::finished);
        CHECK_THROWS_AS(s.step(), DataError);  // step after finish
        return;
    }
    FAIL("no seed produced a natural eos");
}

TEST_CASE("greedy decoding is deterministic for a fixed checkpoint and prompt") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 7);
    GenerationSession a(model, plain_prompt(cfg), SamplingConfig{}, 40);
    GenerationSession b(model, plain_prompt(cfg), SamplingConfig{}, 40);
    while (a.status() == SessionStatus::running) a.step();
    while (b.status() == SessionStatus::running) b.step();
    CHECK(a.text_ids() == b.text_ids());
    CHECK(a.generated_codes() == b.generated_codes());
}

TEST_CASE("cancel stops frame emission exactly where the schedule says") {
    ModelConfig cfg = ModelConfig::toy();
    uint64_t seed = seed_with_long_generation(cfg, 16);
    OmniModel model(cfg, Dtype::f32, seed);

    SUBCASE("cancel after 4 steps emits no frames (none complete before step 8)") {
        GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 200);
        for (int i = 0; i < 4; ++i) s.step();
        CHECK(s.cancel());
        CHECK(s.status() == SessionStatus::cancelled);
        CHECK(s.frames_emitted() == 0);
        CHECK_THROWS_AS(s.step(), DataError);
        CHECK_FALSE(s.cancel());  // double-cancel is a reported no-op
        CHECK(s.frames_emitted() == 0);
    }

    SUBCASE("cancel after step index 10 leaves exactly frames 0..2") {
        GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 200);
        for (int i = 0; i <= 10; ++i) s.step();
        CHECK(s.cancel());
        CHECK(s.frames_emitted() == 3);
        for (int64_t f = 0; f < 3; ++f) CHECK(s.frames()[static_cast<size_t>(f)].frame_index == f);
    }

    SUBCASE("cancel from another thread is safe between steps") {
        GenerationSession s(model, plain_prompt(cfg), SamplingConfig{}, 200);
        for (int i = 0; i < 3; ++i) s.step();
        std::thread t([&]() { s.cancel(); });
        t.join();
        CHECK(s.status() == SessionStatus::cancelled);
        CHECK_THROWS_AS(s.step(), DataError);
    }
}

TEST_CASE("a fresh session after a cancel is prefix-identical to an uncancelled run") {
    ModelConfig cfg = ModelConfig::toy();
    uint64_t seed = seed_with_long_generation(cfg, 16);
    OmniModel model(cfg, Dtype::f32, seed);

    GenerationSession full(model, plain_prompt(cfg), SamplingConfig{}, 200);
    for (int i = 0; i < 16; ++i) full.step();

    GenerationSession doomed(model, plain_prompt(cfg), SamplingConfig{}, 200);
    for (int i = 0; i < 5; ++i) doomed.step();
    doomed.cancel();

    GenerationSession retry(model, plain_prompt(cfg), SamplingConfig{}, 200);
    for (int i = 0; i < 16; ++i) retry.step();
    CHECK(retry.text_ids() == full.text_ids());
    CHECK(retry.generated_codes() == full.generated_codes());
}

TEST_CASE("waveform stub: 1920 deterministic samples, sensitive to any code") {
    StreamFrame f1{0, {1, 2, 3, 4, 5, 6, 7, 8}, 8};
    StubWaveform w1 = decode_frame_stub(f1);
    CHECK(w1.sample_rate == 24000);
    CHECK(static_cast<int64_t>(w1.samples.size()) == 1920);  // 24000 / 12.5
    StubWaveform w2 = decode_frame_stub(f1);
    CHECK(w1.samples == w2.samples);
    StreamFrame f2 = f1;
    f2.codes[3] += 1;
    StubWaveform w3 = decode_frame_stub(f2);
    CHECK(w1.samples != w3.samples);
    for (double v : w1.samples) CHECK(std::fabs(v) <= 0.25);
}

TEST_CASE("streaming and offline greedy decodes are bit-identical") {
    ModelConfig cfg = ModelConfig::toy();
    for (uint64_t seed = 0; seed < 6; ++seed) {
        OmniModel model(cfg, Dtype::f32, seed * 17 + 3);
        EquivalenceReport rep = offline_equivalence(model, plain_prompt(cfg), 24);
        INFO("seed " << seed << " divergences " << rep.divergences.size());
        CHECK(rep.identical);
        CHECK(rep.frames_streamed == rep.frames_offline);
    }
}

TEST_CASE("offline equivalence holds with reference and speaker conditioning") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 19);
    SessionPrompt p = plain_prompt(cfg);
    CodeGrid ref(8, 2);
    for (int64_t q = 0; q < 8; ++q) {
        for (int64_t f = 0; f < 2; ++f) ref.set(q, f, (q * 7 + f * 3) % cfg.codebook_size);
    }
    p.ref_codes = ref;
    p.speaker_vector = speaker_embedding("casey", cfg.speaker_dim);
    EquivalenceReport rep = offline_equivalence(model, p, 20);
    CHECK(rep.identical);
}

TEST_CASE("offline equivalence holds with modality spans in the prompt") {
    ModelConfig cfg = ModelConfig::toy();
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 71);
    GenOptions gopt;
    gopt.count = 4;
    gopt.audio_span_fraction = 1.0;
    gopt.vision_fraction = 1.0;
    std::vector<DatasetRecord> records = generate_oracle_dataset(spec, cfg, 72, gopt);
    OmniModel model(cfg, Dtype::f32, 73);
    SessionPrompt p = SessionPrompt::from_record(records[0], cfg, Dtype::f32);
    CHECK(!p.spans.empty());
    EquivalenceReport rep = offline_equivalence(model, p, 20);
    CHECK(rep.identical);
}

TEST_CASE("a corrupted cache is detected and localized") {
    ModelConfig cfg = ModelConfig::toy();
    uint64_t seed = seed_with_long_generation(cfg, 20);
    OmniModel model(cfg, Dtype::f32, seed);

    GenerationSession bad(model, plain_prompt(cfg), SamplingConfig{}, 20);
    for (int i = 0; i < 5; ++i) bad.step();
    // poke the thinker's key and value memory in every layer
    for (KvLayer & layer : bad.thinker_cache.layers) {
        for (double & v : layer.k.data()) v = -3.0 * v - 2.0;
        for (double & v : layer.v.data()) v = -2.0 * v + 1.5;
    }
    while (bad.status() == SessionStatus::running) bad.step();

    GenerationSession good(model, plain_prompt(cfg), SamplingConfig{}, 20);
    while (good.status() == SessionStatus::running) good.step();

    EquivalenceReport rep = compare_sessions(bad, good);
    CHECK_FALSE(rep.identical);
    REQUIRE(!rep.divergences.empty());
    // nothing fed before the corruption can diverge
    for (const DivergencePoint & d : rep.divergences) {
        if (d.stream == "text") CHECK(d.index >= 5);
    }
}

TEST_CASE("parallel sessions over one frozen checkpoint match the serial run") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 29);
    auto run_one = [&](int64_t salt) {
        SessionPrompt p;
        p.prompt_tokens = {cfg.text_bos_id, 10 + salt, 20 + salt};
        GenerationSession s(model, p, SamplingConfig{}, 16);
        while (s.status() == SessionStatus::running) s.step();
        return std::make_pair(s.text_ids(), s.generated_codes());
    };
    auto serial0 = run_one(0);
    auto serial1 = run_one(1);
    std::pair<std::vector<int64_t>, std::vector<std::vector<int64_t>>> par0, par1;
    std::thread t0([&]() { par0 = run_one(0); });
    std::thread t1([&]() { par1 = run_one(1); });
    t0.join();
    t1.join();
    CHECK(par0 == serial0);
    CHECK(par1 == serial1);
}

TEST_CASE("temperature sampling is seed-deterministic") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 23);
    SamplingConfig sc;
    sc.greedy = false;
    sc.temperature = 0.9;
    sc.seed = 42;
    GenerationSession a(model, plain_prompt(cfg), sc, 24);
    GenerationSession b(model, plain_prompt(cfg), sc, 24);
    while (a.status() == SessionStatus::running) a.step();
    while (b.status() == SessionStatus::running) b.step();
    CHECK(a.text_ids() == b.text_ids());
    CHECK(a.generated_codes() == b.generated_codes());
}
