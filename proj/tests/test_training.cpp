#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "omni/training.hpp"

using namespace omni;

static std::vector<DatasetRecord> toy_dataset(const ModelConfig & cfg, int64_t n, uint64_t seed,
                                              GenOptions opt = {}) {
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, seed);
    opt.count = n;
    return generate_oracle_dataset(spec, cfg, seed, opt);
}

static PaddedBatch one_example_batch(const ModelConfig & cfg, const DatasetRecord & rec,
                                     std::vector<AssembledExample> & keepalive) {
    keepalive.push_back(assemble_record(rec, cfg, Dtype::f64));
    return pad_batch({&keepalive.back()}, cfg);
}

TEST_CASE("uniform logits: joint loss equals ln(text_vocab) + lambda * Q * ln(audio_vocab)") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 1, 41);
    std::vector<AssembledExample> keep;
    PaddedBatch pb = one_example_batch(cfg, data[0], keep);

    Tensor text_logits = Tensor::zeros({pb.batch * pb.seq, cfg.text_vocab});
    std::vector<Tensor> talker_logits;
    for (int64_t q = 0; q < cfg.codebook_count; ++q) {
        talker_logits.push_back(Tensor::zeros({pb.batch * pb.seq, cfg.audio_vocab}));
    }
    JointLossResult jl = joint_loss(pb, text_logits, talker_logits, 1.0);
    double want = std::log(static_cast<double>(cfg.text_vocab)) +
                  8.0 * std::log(static_cast<double>(cfg.audio_vocab));
    CHECK(jl.breakdown.total == doctest::Approx(want).epsilon(1e-12));

    // lambda 0: total equals the text loss regardless of the audio logits
    for (Tensor & t : talker_logits) fill_normal(t, 2.0, 9);
    JointLossResult jl0 = joint_loss(pb, text_logits, talker_logits, 0.0);
    CHECK(jl0.breakdown.total == jl0.breakdown.text_loss);
}

TEST_CASE("joint loss is linear in lambda_audio on identical logits") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 1, 42);
    std::vector<AssembledExample> keep;
    PaddedBatch pb = one_example_batch(cfg, data[0], keep);
    OmniModel model(cfg, Dtype::f64, 3);
    ForwardOutput fwd = model_forward(model, pb);

    double t1 = joint_loss(pb, fwd.text_logits, fwd.talker_logits, 1.0).breakdown.total;
    double t2 = joint_loss(pb, fwd.text_logits, fwd.talker_logits, 2.0).breakdown.total;
    double text = joint_loss(pb, fwd.text_logits, fwd.talker_logits, 0.0).breakdown.text_loss;
    CHECK(t2 == doctest::Approx(text + 2.0 * (t1 - text)).epsilon(1e-12));
}

TEST_CASE("an example with no audio frames leaves only the text term, flagged degenerate") {
    ModelConfig cfg = ModelConfig::toy();
    DatasetRecord rec;
    rec.conversation.push_back({Role::user, {cfg.text_bos_id, 9, 10}});
    rec.conversation.push_back({Role::assistant, {11, 12}});
    rec.response_codes = CodeGrid(0, 0);
    std::vector<AssembledExample> keep;
    PaddedBatch pb = one_example_batch(cfg, rec, keep);
    OmniModel model(cfg, Dtype::f64, 4);
    ForwardOutput fwd = model_forward(model, pb);
    JointLossResult jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, 1.0);
    CHECK(jl.breakdown.total == jl.breakdown.text_loss);
    for (int64_t q = 0; q < 8; ++q) {
        CHECK(jl.breakdown.degenerate[static_cast<size_t>(q)] == 1);
        CHECK(jl.breakdown.audio_loss[static_cast<size_t>(q)] == 0.0);
    }
}

TEST_CASE("masked positions carry exactly zero logit gradient") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 2, 43, [] {
        GenOptions o;
        o.ref_fraction = 1.0;
        o.speaker_fraction = 1.0;
        return o;
    }());
    OmniModel model(cfg, Dtype::f64, 5);
    std::vector<AssembledExample> keep;
    keep.push_back(assemble_record(data[0], cfg, Dtype::f64));
    keep.push_back(assemble_record(data[1], cfg, Dtype::f64));
    PaddedBatch pb = pad_batch({&keep[0], &keep[1]}, cfg);

    Tape tape;
    ForwardOutput fwd = model_forward(model, pb);
    JointLossResult jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, 1.0);
    tape.backward(jl.total);

    auto shifted = [&](const std::vector<int64_t> & labels, int64_t row) {
        int64_t b = row / pb.seq, t = row % pb.seq;
        if (t + 1 >= pb.seq) return kIgnoreIndex;
        return labels[static_cast<size_t>(b * pb.seq + t + 1)];
    };
    // text side
    for (int64_t r = 0; r < pb.batch * pb.seq; ++r) {
        if (shifted(pb.text_labels, r) != kIgnoreIndex) continue;
        for (int64_t c = 0; c < cfg.text_vocab; ++c) {
            CHECK(fwd.text_logits.grad()[static_cast<size_t>(r * cfg.text_vocab + c)] == 0.0);
        }
    }
    // audio side: conditioning, reference and padded positions are all masked
    for (int64_t q = 0; q < 8; ++q) {
        for (int64_t r = 0; r < pb.batch * pb.seq; ++r) {
            if (shifted(pb.audio_labels[static_cast<size_t>(q)], r) != kIgnoreIndex) continue;
            for (int64_t c = 0; c < cfg.audio_vocab; ++c) {
                CHECK(fwd.talker_logits[static_cast<size_t>(q)]
                          .grad()[static_cast<size_t>(r * cfg.audio_vocab + c)] == 0.0);
            }
        }
    }
}

TEST_CASE("projector-only modes leave every other parameter byte-identical") {
    ModelConfig cfg = ModelConfig::toy();
    GenOptions opt;
    opt.audio_span_fraction = 1.0;
    opt.vision_fraction = 1.0;
    std::vector<DatasetRecord> data = toy_dataset(cfg, 8, 44, opt);

    TrainHyper hyper;
    hyper.lr = 1e-3;
    hyper.batch_size = 4;
    hyper.steps = 5;
    hyper.seed = 1;

    for (TrainMode mode : {TrainMode::audio_proj, TrainMode::vision_proj}) {
        OmniModel model(cfg, Dtype::f32, 6);
        uint64_t thinker_before = model.param_hash("thinker.");
        uint64_t talker_before = model.param_hash("talker.");
        uint64_t audio_before = model.param_hash("proj_audio.");
        uint64_t vision_before = model.param_hash("proj_vision.");
        train_run(model, data, mode, hyper);
        CHECK(model.param_hash("thinker.") == thinker_before);
        CHECK(model.param_hash("talker.") == talker_before);
        if (mode == TrainMode::audio_proj) {
            CHECK(model.param_hash("proj_audio.") != audio_before);
            CHECK(model.param_hash("proj_vision.") == vision_before);
        } else {
            CHECK(model.param_hash("proj_audio.") == audio_before);
            CHECK(model.param_hash("proj_vision.") != vision_before);
        }
    }
}

TEST_CASE("same seed gives a bit-identical loss trajectory at 64-bit precision") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 6, 45);
    TrainHyper hyper;
    hyper.batch_size = 3;
    hyper.steps = 6;
    hyper.seed = 77;

    OmniModel m1(cfg, Dtype::f64, 7);
    OmniModel m2(cfg, Dtype::f64, 7);
    TrainResult r1 = train_run(m1, data, TrainMode::all, hyper);
    TrainResult r2 = train_run(m2, data, TrainMode::all, hyper);
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].total == r2.log[i].total);  // to the last bit
        CHECK(r1.log[i].text_loss == r2.log[i].text_loss);
        CHECK(r1.log[i].audio_loss == r2.log[i].audio_loss);
    }
    CHECK(m1.param_hash() == m2.param_hash());
}

TEST_CASE("training on the oracle task reduces the joint loss") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 32, 46);
    OmniModel model(cfg, Dtype::f32, 8);
    TrainHyper hyper;
    hyper.lr = 2e-3;
    hyper.batch_size = 8;
    hyper.steps = 60;
    hyper.seed = 2;
    TrainResult res = train_run(model, data, TrainMode::all, hyper);
    double first = res.log.front().total;
    double last = res.log.back().total;
    CHECK(last < 0.7 * first);
}

TEST_CASE("a diverged run aborts with a numeric failure and a last-good checkpoint") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 4, 47);
    OmniModel model(cfg, Dtype::f64, 9);
    TrainHyper hyper;
    hyper.lr = 1e308;  // one update overflows the weights
    hyper.clip_norm = 0.0;
    hyper.batch_size = 2;
    hyper.steps = 10;
    const std::string ckpt = "/tmp/omni_abort_ckpt.bin";
    std::remove(ckpt.c_str());
    CHECK_THROWS_AS(train_run(model, data, TrainMode::all, hyper, nullptr, ckpt), NumericError);
    FILE * f = std::fopen(ckpt.c_str(), "rb");
    REQUIRE(f != nullptr);
    std::fclose(f);
}

TEST_CASE("train_run rejects an empty dataset") {
    ModelConfig cfg = ModelConfig::toy();
    OmniModel model(cfg, Dtype::f32, 10);
    TrainHyper hyper;
    CHECK_THROWS_AS(train_run(model, {}, TrainMode::all, hyper), DataError);
}

TEST_CASE("metric log lines carry step, mode, losses and accuracies") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 4, 48);
    OmniModel model(cfg, Dtype::f32, 11);
    TrainHyper hyper;
    hyper.batch_size = 2;
    hyper.steps = 2;
    std::vector<std::string> lines;
    train_run(model, data, TrainMode::all, hyper,
              [&](const LossBreakdown & b) { lines.push_back(b.to_json("all")); });
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].find("\"step\":0") != std::string::npos);
    CHECK(lines[0].find("\"mode\":\"all\"") != std::string::npos);
    CHECK(lines[0].find("codebook_accuracy") != std::string::npos);
    CHECK(lines[0].find("audio_loss") != std::string::npos);
}

TEST_CASE("rank 0 adapters collapse codebooks and lose to rank 8 on the oracle task") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> train = toy_dataset(cfg, 24, 49);
    HarnessOptions opt;
    opt.hyper.lr = 1e-3;
    opt.hyper.batch_size = 8;
    opt.hyper.steps = 300;
    opt.hyper.seed = 3;
    opt.model_seed = 12;
    std::vector<RankCell> cells = rank_ablation(cfg, train, {{0, 0}, {8, 8}}, opt);
    REQUIRE(cells.size() == 2);
    CHECK(cells[0].added_params == 0);
    CHECK(cells[1].added_params ==
          cfg.codebook_count * (8 * (cfg.audio_vocab + cfg.talker_hidden) +
                                8 * (cfg.talker_hidden + cfg.audio_vocab)));
    // the oracle task makes codebooks disagree by construction, so shared-only
    // heads cannot fit it
    CHECK(cells[1].final_audio_loss < cells[0].final_audio_loss);
}

TEST_CASE("rank ablation rejects ranks above the talker width") {
    ModelConfig cfg = ModelConfig::toy();
    std::vector<DatasetRecord> data = toy_dataset(cfg, 4, 51);
    HarnessOptions opt;
    opt.hyper.steps = 1;
    CHECK_THROWS_AS(rank_ablation(cfg, data, {{8, cfg.talker_hidden + 1}}, opt), DataError);
}
