// Acceptance suite: one pass/fail line per criterion, selectable by number.
// Every tolerance is pinned here, in code; the process exits nonzero if any
// selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "omni/gradcheck.hpp"
#include "omni/metrics.hpp"
#include "omni/model.hpp"
#include "omni/rng.hpp"
#include "omni/streaming.hpp"
#include "omni/training.hpp"

using namespace omni;

static int g_failures = 0;

static void report(int criterion, bool pass, const std::string & detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

static double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

static char g_buf[512];

// ---------------------------------------------------------------------------
// 1. Gradient suite over every parameterized module, < 1e-4 rel err, < 2 min.
// ---------------------------------------------------------------------------
static void criterion_1() {
    GradSuiteResult res = run_model_gradient_suite(/*seed=*/7, /*coords=*/8, /*eps=*/1e-4);
    bool pass = res.report.max_rel_err < 1e-4 && res.seconds < 120.0;
    std::snprintf(g_buf, sizeof(g_buf),
                  "gradient suite: %lld params, max rel err %.3e (worst %s), %.1fs (limit 120s)",
                  static_cast<long long>(res.params_checked), res.report.max_rel_err,
                  res.report.worst_param.c_str(), res.seconds);
    report(1, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 2. Parameter-count oracle at full-scale dims.
// ---------------------------------------------------------------------------
static void criterion_2() {
    ModelConfig full;
    ParamCounts pc = count_parameters(full);
    bool pass = pc.audio_projector == 985600 && pc.vision_projector == 1182720;
    pass = pass && pc.embed_adapter_per_codebook ==
                       full.adapter_rank_embed * (full.audio_vocab + full.talker_hidden);
    pass = pass && pc.head_adapter_per_codebook ==
                       full.adapter_rank_head * (full.talker_hidden + full.audio_vocab);
    // the structural formulas must agree with actually allocated tensors
    ModelConfig toy = ModelConfig::toy();
    OmniModel model(toy, Dtype::f32, 1);
    pass = pass && model.param_count() == count_parameters(toy).total;
    std::snprintf(g_buf, sizeof(g_buf),
                  "parameter counts: audio proj %lld (want 985600), vision proj %lld (want 1182720), "
                  "adapter formula r*(vocab+hidden) exact",
                  static_cast<long long>(pc.audio_projector),
                  static_cast<long long>(pc.vision_projector));
    report(2, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 3. Format invariants: 10,000 randomized build/validate round trips, exact
//    stagger inversion, exactly zero gradient at masked positions.
// ---------------------------------------------------------------------------
static void criterion_3() {
    ModelConfig cfg = ModelConfig::toy();
    int64_t violations = 0, trips = 0, inverse_errors = 0;
    for (uint64_t seed = 0; seed < 10000; ++seed) {
        Rng rng(mix_seed(seed, 0xACC3));
        BuildInputs in;
        in.prompt_tokens.push_back(cfg.text_bos_id);
        int64_t prompt = 1 + static_cast<int64_t>(rng.uniform_int(8));
        for (int64_t i = 1; i < prompt; ++i) {
            in.prompt_tokens.push_back(5 + static_cast<int64_t>(rng.uniform_int(59)));
        }
        int64_t resp = 1 + static_cast<int64_t>(rng.uniform_int(12));
        for (int64_t i = 0; i < resp; ++i) {
            in.response_tokens.push_back(5 + static_cast<int64_t>(rng.uniform_int(59)));
        }
        in.response_codes = CodeGrid(8, resp);
        for (int64_t q = 0; q < 8; ++q) {
            for (int64_t f = 0; f < resp; ++f) {
                in.response_codes.set(q, f, static_cast<int64_t>(rng.uniform_int(64)));
            }
        }
        if (rng.uniform() < 0.4) {
            int64_t ref_len = 1 + static_cast<int64_t>(rng.uniform_int(3));
            bool spk = rng.uniform() < 0.5;
            if (ref_len + (spk ? 1 : 0) <= prompt) {
                CodeGrid ref(8, ref_len);
                for (int64_t q = 0; q < 8; ++q) {
                    for (int64_t f = 0; f < ref_len; ++f) {
                        ref.set(q, f, static_cast<int64_t>(rng.uniform_int(64)));
                    }
                }
                in.ref_codes = ref;
                if (spk) in.speaker_vector.assign(192, 0.25);
            }
        }
        OmniExample ex = build_example(in, cfg);
        std::vector<std::string> v = validate_example(ex, cfg);
        violations += static_cast<int64_t>(v.size());
        OmniExample back = example_from_json(example_to_json(ex));
        if (!(back == ex)) ++violations;
        ++trips;
        for (int64_t q = 0; q < 8; ++q) {
            for (int64_t p = 0; p < ex.length(); ++p) {
                if (ex.audio_labels[static_cast<size_t>(q)][static_cast<size_t>(p)] == kIgnoreIndex) continue;
                auto f = frame_of_position(p, q, ex.assistant_start);
                if (!f.has_value() || *f != p - ex.assistant_start - q - 1 ||
                    in.response_codes.at(q, *f) !=
                        ex.audio_labels[static_cast<size_t>(q)][static_cast<size_t>(p)]) {
                    ++inverse_errors;
                }
            }
        }
    }

    // exactly zero gradient at masked logit rows (conditioning, reference,
    // padding); analytic check on a batch with every conditioning feature
    int64_t nonzero_masked = 0;
    {
        OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 11);
        GenOptions opt;
        opt.count = 4;
        opt.ref_fraction = 1.0;
        opt.speaker_fraction = 1.0;
        std::vector<DatasetRecord> data = generate_oracle_dataset(spec, cfg, 12, opt);
        OmniModel model(cfg, Dtype::f64, 13);
        std::vector<AssembledExample> keep;
        std::vector<const AssembledExample *> ptrs;
        for (const DatasetRecord & rec : data) keep.push_back(assemble_record(rec, cfg, Dtype::f64));
        for (const AssembledExample & ae : keep) ptrs.push_back(&ae);
        PaddedBatch pb = pad_batch(ptrs, cfg);
        Tape tape;
        ForwardOutput fwd = model_forward(model, pb);
        JointLossResult jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, cfg.lambda_audio);
        tape.backward(jl.total);
        auto shifted = [&](const std::vector<int64_t> & labels, int64_t row) {
            int64_t b = row / pb.seq, t = row % pb.seq;
            return t + 1 >= pb.seq ? kIgnoreIndex : labels[static_cast<size_t>(b * pb.seq + t + 1)];
        };
        for (int64_t r = 0; r < pb.batch * pb.seq; ++r) {
            if (shifted(pb.text_labels, r) == kIgnoreIndex) {
                for (int64_t c = 0; c < cfg.text_vocab; ++c) {
                    if (fwd.text_logits.grad()[static_cast<size_t>(r * cfg.text_vocab + c)] != 0.0) {
                        ++nonzero_masked;
                    }
                }
            }
            for (int64_t q = 0; q < 8; ++q) {
                if (shifted(pb.audio_labels[static_cast<size_t>(q)], r) != kIgnoreIndex) continue;
                for (int64_t c = 0; c < cfg.audio_vocab; ++c) {
                    if (fwd.talker_logits[static_cast<size_t>(q)]
                            .grad()[static_cast<size_t>(r * cfg.audio_vocab + c)] != 0.0) {
                        ++nonzero_masked;
                    }
                }
            }
        }
    }
    bool pass = violations == 0 && inverse_errors == 0 && nonzero_masked == 0;
    std::snprintf(g_buf, sizeof(g_buf),
                  "format invariants: %lld round trips, %lld violations, %lld stagger-inverse errors, "
                  "%lld nonzero masked gradients",
                  static_cast<long long>(trips), static_cast<long long>(violations),
                  static_cast<long long>(inverse_errors), static_cast<long long>(nonzero_masked));
    report(3, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 4. Streaming/offline bit-equivalence for 100 random checkpoints, frame
//    arithmetic, and the cancel bound.
// ---------------------------------------------------------------------------
static void criterion_4() {
    ModelConfig cfg = ModelConfig::toy();
    int64_t divergent = 0, frame_count_errors = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        OmniModel model(cfg, Dtype::f32, mix_seed(seed, 0x5EED));
        SessionPrompt prompt;
        prompt.prompt_tokens = {cfg.text_bos_id,
                                5 + static_cast<int64_t>(seed % 59),
                                5 + static_cast<int64_t>((seed * 7) % 59)};
        EquivalenceReport rep = offline_equivalence(model, prompt, 64);
        if (!rep.identical) ++divergent;
        if (rep.frames_streamed != std::max<int64_t>(0, rep.steps_streamed - 8)) ++frame_count_errors;
        if (rep.frames_offline != rep.frames_streamed) ++frame_count_errors;
    }

    // cancel after s steps emits exactly max(0, s - 8) frames
    int64_t cancel_errors = 0;
    {
        uint64_t chosen = 0;
        bool found = false;
        for (uint64_t seed = 0; seed < 200 && !found; ++seed) {
            OmniModel model(cfg, Dtype::f32, mix_seed(seed, 0xCA11));
            SessionPrompt prompt;
            prompt.prompt_tokens = {cfg.text_bos_id, 9, 21};
            GenerationSession s(model, prompt, SamplingConfig{}, 200);
            int64_t steps = 0;
            while (s.status() == SessionStatus::running && steps < 28) {
                s.step();
                ++steps;
            }
            if (steps >= 28 && s.status() == SessionStatus::running) {
                chosen = seed;
                found = true;
            }
        }
        if (!found) {
            ++cancel_errors;
        } else {
            OmniModel model(cfg, Dtype::f32, mix_seed(chosen, 0xCA11));
            SessionPrompt prompt;
            prompt.prompt_tokens = {cfg.text_bos_id, 9, 21};
            for (int64_t s = 0; s <= 24; ++s) {
                GenerationSession session(model, prompt, SamplingConfig{}, 200);
                for (int64_t i = 0; i < s; ++i) session.step();
                session.cancel();
                if (session.frames_emitted() != std::max<int64_t>(0, s - 8)) ++cancel_errors;
            }
        }
    }
    bool pass = divergent == 0 && frame_count_errors == 0 && cancel_errors == 0;
    std::snprintf(g_buf, sizeof(g_buf),
                  "streaming equivalence: 100 checkpoints, %lld divergent, %lld frame-count errors, "
                  "%lld cancel-bound errors",
                  static_cast<long long>(divergent), static_cast<long long>(frame_count_errors),
                  static_cast<long long>(cancel_errors));
    report(4, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 5. End-to-end oracle convergence: toy config, 5000 steps, batch 16;
//    final mean codebook accuracy >= 0.95 and consistency CER <= 0.05 in
//    <= 15 minutes.
// ---------------------------------------------------------------------------
static void criterion_5() {
    double t0 = now_seconds();
    ModelConfig cfg = ModelConfig::toy();  // thinker 4x64, talker 2x64, vocab 64, 8x64 codes, rank 8
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 2026);
    GenOptions opt;
    opt.count = 512;
    opt.response_len_min = 4;
    opt.response_len_max = 12;
    std::vector<DatasetRecord> train = generate_oracle_dataset(spec, cfg, 101, opt);
    opt.count = 64;
    std::vector<DatasetRecord> eval = generate_oracle_dataset(spec, cfg, 202, opt);

    OmniModel model(cfg, Dtype::f32, 7);
    TrainHyper hyper;
    hyper.lr = 2e-3;
    hyper.batch_size = 16;
    hyper.steps = 5000;
    hyper.clip_norm = 1.0;
    hyper.seed = 3;
    train_run(model, train, TrainMode::all, hyper);

    LossBreakdown ev = eval_pass(model, eval, 16, 4, cfg.lambda_audio);
    double accuracy = ev.mean_codebook_accuracy();

    ConsistencyOptions copt;
    copt.max_steps = 48;
    copt.max_examples = 32;
    ConsistencyReport rep = consistency_eval(model, eval, spec, copt);
    double seconds = now_seconds() - t0;

    bool pass = accuracy >= 0.95 && rep.overall_cer <= 0.05 && seconds <= 900.0;
    std::snprintf(g_buf, sizeof(g_buf),
                  "oracle convergence: mean codebook accuracy %.4f (need >= 0.95), consistency CER %.4f "
                  "(need <= 0.05), %.0fs (limit 900s)",
                  accuracy, rep.overall_cer, seconds);
    report(5, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 6. Rank-ablation direction on the oracle task with a frozen thinker.
// ---------------------------------------------------------------------------
static void criterion_6() {
    ModelConfig cfg = ModelConfig::toy();
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 33);
    GenOptions opt;
    opt.count = 96;
    std::vector<DatasetRecord> train = generate_oracle_dataset(spec, cfg, 44, opt);

    // short full-model pretraining gives the frozen thinker a meaningful bridge
    OmniModel base(cfg, Dtype::f32, 5);
    TrainHyper pre;
    pre.lr = 2e-3;
    pre.batch_size = 16;
    pre.steps = 800;
    pre.seed = 9;
    train_run(base, train, TrainMode::all, pre);
    const std::string base_ckpt = "/tmp/deskomni_acceptance_base.bin";
    save_checkpoint(base_ckpt, base);

    HarnessOptions hopt;
    hopt.hyper.lr = 1e-3;
    hopt.hyper.batch_size = 16;
    hopt.hyper.steps = 800;
    hopt.hyper.seed = 21;
    hopt.dtype = Dtype::f32;
    hopt.init_checkpoint = base_ckpt;
    hopt.eval_batches = 4;

    // (a) unified sweep {2, 8, 32}: non-increasing within 2% of the range
    std::vector<RankCell> unified = rank_ablation(cfg, train, {{2, 2}, {8, 8}, {32, 32}}, hopt);
    double lo = unified[0].final_audio_loss, hi = unified[0].final_audio_loss;
    for (const RankCell & c : unified) {
        lo = std::min(lo, c.final_audio_loss);
        hi = std::max(hi, c.final_audio_loss);
    }
    double slack = 0.02 * (hi - lo);
    bool monotone = unified[1].final_audio_loss <= unified[0].final_audio_loss + slack &&
                    unified[2].final_audio_loss <= unified[1].final_audio_loss + slack;

    // (b) head-heavy vs embedding-heavy at matched added parameters; the
    // directional claim gets three seeds before it counts as a failure
    bool head_wins = false;
    std::string b_detail;
    for (uint64_t attempt = 0; attempt < 3 && !head_wins; ++attempt) {
        HarnessOptions hb = hopt;
        hb.hyper.seed = 21 + attempt;
        hb.model_seed = attempt;
        std::vector<RankCell> pair = rank_ablation(cfg, train, {{2, 32}, {32, 2}}, hb);
        head_wins = pair[0].final_audio_loss <= pair[1].final_audio_loss;
        char tmp[160];
        std::snprintf(tmp, sizeof(tmp), " [seed %llu: head-heavy %.4f vs embed-heavy %.4f]",
                      static_cast<unsigned long long>(attempt), pair[0].final_audio_loss,
                      pair[1].final_audio_loss);
        b_detail += tmp;
        if (pair[0].added_params != pair[1].added_params) {
            b_detail += " (ADDED PARAMS MISMATCH)";
            head_wins = false;
            break;
        }
    }

    bool pass = monotone && head_wins;
    std::snprintf(g_buf, sizeof(g_buf),
                  "rank ablation: unified losses %.4f / %.4f / %.4f (slack %.4f, monotone %s); "
                  "head-heavy direction %s%s",
                  unified[0].final_audio_loss, unified[1].final_audio_loss, unified[2].final_audio_loss,
                  slack, monotone ? "yes" : "NO", head_wins ? "holds" : "FAILED over 3 seeds",
                  b_detail.c_str());
    report(6, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 7. Mode freezing: non-selected parameter bytes unchanged after 100 steps.
// ---------------------------------------------------------------------------
static void criterion_7() {
    ModelConfig cfg = ModelConfig::toy();
    OracleTaskSpec spec = OracleTaskSpec::derive(cfg, 55);
    GenOptions opt;
    opt.count = 32;
    opt.audio_span_fraction = 1.0;
    opt.vision_fraction = 1.0;
    std::vector<DatasetRecord> data = generate_oracle_dataset(spec, cfg, 66, opt);

    bool pass = true;
    std::string detail;
    for (TrainMode mode : {TrainMode::audio_proj, TrainMode::vision_proj}) {
        OmniModel model(cfg, Dtype::f32, 8);
        uint64_t thinker = model.param_hash("thinker.");
        uint64_t talker = model.param_hash("talker.");
        uint64_t audio = model.param_hash("proj_audio.");
        uint64_t vision = model.param_hash("proj_vision.");
        TrainHyper hyper;
        hyper.lr = 1e-3;
        hyper.batch_size = 8;
        hyper.steps = 100;
        hyper.seed = 4;
        train_run(model, data, mode, hyper);
        bool frozen_ok = model.param_hash("thinker.") == thinker && model.param_hash("talker.") == talker;
        bool selected_moved;
        if (mode == TrainMode::audio_proj) {
            frozen_ok = frozen_ok && model.param_hash("proj_vision.") == vision;
            selected_moved = model.param_hash("proj_audio.") != audio;
        } else {
            frozen_ok = frozen_ok && model.param_hash("proj_audio.") == audio;
            selected_moved = model.param_hash("proj_vision.") != vision;
        }
        pass = pass && frozen_ok && selected_moved;
        detail += std::string(train_mode_name(mode)) + (frozen_ok && selected_moved ? " ok; " : " BROKEN; ");
    }
    report(7, pass, "mode freezing after 100 steps: " + detail);
}

// ---------------------------------------------------------------------------
// 8. Degenerate-logit identity at full-scale dims, within 1e-9.
// ---------------------------------------------------------------------------
static void criterion_8() {
    ModelConfig full;  // text vocab 6400, audio vocab 2112
    int64_t T = 16;
    int64_t a_s = 4;
    PaddedBatch pb;
    pb.batch = 1;
    pb.seq = T;
    pb.text_ids.assign(static_cast<size_t>(T), full.text_pad_id);
    pb.text_labels.assign(static_cast<size_t>(T), kIgnoreIndex);
    for (int64_t p = a_s; p < a_s + 3; ++p) pb.text_labels[static_cast<size_t>(p)] = 17;
    pb.audio_ids.assign(8, std::vector<int64_t>(static_cast<size_t>(T), full.audio_pad_id()));
    pb.audio_labels.assign(8, std::vector<int64_t>(static_cast<size_t>(T), kIgnoreIndex));
    for (int64_t q = 0; q < 8; ++q) {
        for (int64_t f = 0; f < 2; ++f) {
            pb.audio_labels[static_cast<size_t>(q)][static_cast<size_t>(a_s + q + 1 + f)] = 100 + q;
        }
    }
    Tensor text_logits = Tensor::zeros({T, full.text_vocab});
    std::vector<Tensor> talker_logits;
    for (int64_t q = 0; q < 8; ++q) talker_logits.push_back(Tensor::zeros({T, full.audio_vocab}));
    JointLossResult jl = joint_loss(pb, text_logits, talker_logits, full.lambda_audio);
    double want = std::log(6400.0) + full.lambda_audio * 8.0 * std::log(2112.0);
    double err = std::fabs(jl.breakdown.total - want);
    bool pass = err < 1e-9;
    std::snprintf(g_buf, sizeof(g_buf),
                  "uniform-logit identity: total %.12f vs ln(6400) + 8 ln(2112) = %.12f (|err| %.2e)",
                  jl.breakdown.total, want, err);
    report(8, pass, g_buf);
}

// ---------------------------------------------------------------------------
// 9. Metric oracles: brute-force edit distance and exact cosine identities.
// ---------------------------------------------------------------------------
static int64_t brute_distance(const std::vector<int64_t> & a, size_t i,
                              const std::vector<int64_t> & b, size_t j) {
    if (i == a.size()) return static_cast<int64_t>(b.size() - j);
    if (j == b.size()) return static_cast<int64_t>(a.size() - i);
    int64_t best = brute_distance(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, brute_distance(a, i + 1, b, j) + 1);
    best = std::min(best, brute_distance(a, i, b, j + 1) + 1);
    return best;
}

static void criterion_9() {
    std::vector<std::vector<int64_t>> seqs = {{}};
    {
        std::vector<std::vector<int64_t>> frontier = {{}};
        for (int len = 0; len < 4; ++len) {
            std::vector<std::vector<int64_t>> next;
            for (const auto & s : frontier) {
                for (int64_t c = 0; c < 3; ++c) {
                    std::vector<int64_t> t = s;
                    t.push_back(c);
                    next.push_back(t);
                    seqs.push_back(t);
                }
            }
            frontier = std::move(next);
        }
    }
    int64_t pairs = 0, mismatches = 0;
    for (const auto & a : seqs) {
        for (const auto & b : seqs) {
            ++pairs;
            if (levenshtein(a, b) != brute_distance(a, 0, b, 0)) ++mismatches;
            if (!b.empty()) {
                double rate = edit_distance_rate(a, b);
                double want = static_cast<double>(brute_distance(a, 0, b, 0)) /
                              static_cast<double>(b.size());
                if (rate != want) ++mismatches;
            }
        }
    }
    std::vector<double> v = {0.3, -1.2, 0.7, 2.5};
    std::vector<double> nv = {-0.3, 1.2, -0.7, -2.5};
    bool cosine_ok = cosine_similarity(v, v) == 1.0 &&
                     cosine_similarity({1.0, 0.0}, {0.0, 1.0}) == 0.0 &&
                     cosine_similarity(v, nv) == -1.0;
    bool pass = mismatches == 0 && cosine_ok;
    std::snprintf(g_buf, sizeof(g_buf),
                  "metric oracles: %lld string pairs, %lld mismatches vs brute force; cosine identities %s",
                  static_cast<long long>(pairs), static_cast<long long>(mismatches),
                  cosine_ok ? "exact" : "NOT exact");
    report(9, pass, g_buf);
}

int main(int argc, char ** argv) {
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        int n = std::atoi(argv[i]);
        if (n < 1 || n > 9) {
            std::fprintf(stderr, "usage: %s [criterion numbers 1..9; default all]\n", argv[0]);
            return 1;
        }
        selected.push_back(n);
    }
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

    for (int n : selected) {
        switch (n) {
            case 1: criterion_1(); break;
            case 2: criterion_2(); break;
            case 3: criterion_3(); break;
            case 4: criterion_4(); break;
            case 5: criterion_5(); break;
            case 6: criterion_6(); break;
            case 7: criterion_7(); break;
            case 8: criterion_8(); break;
            case 9: criterion_9(); break;
        }
    }
    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    return 0;
}
