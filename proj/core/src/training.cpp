#include "omni/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "omni/metrics.hpp"
#include "omni/optim.hpp"
#include "omni/rng.hpp"

namespace omni {

const char * train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::all: return "all";
        case TrainMode::audio_proj: return "audio_proj";
        case TrainMode::vision_proj: return "vision_proj";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string & s) {
    if (s == "all") return TrainMode::all;
    if (s == "audio_proj") return TrainMode::audio_proj;
    if (s == "vision_proj") return TrainMode::vision_proj;
    throw UsageError("unknown train mode '" + s + "' (expected all|audio_proj|vision_proj)");
}

std::vector<std::string> trainable_prefixes(TrainMode m) {
    switch (m) {
        case TrainMode::all: return {"thinker.", "talker.", "proj_audio.", "proj_vision."};
        case TrainMode::audio_proj: return {"proj_audio."};
        case TrainMode::vision_proj: return {"proj_vision."};
    }
    return {};
}

double LossBreakdown::mean_codebook_accuracy() const {
    if (codebook_accuracy.empty()) return 0.0;
    double s = 0.0;
    for (double a : codebook_accuracy) s += a;
    return s / static_cast<double>(codebook_accuracy.size());
}

double LossBreakdown::mean_audio_loss() const {
    if (audio_loss.empty()) return 0.0;
    double s = 0.0;
    for (double a : audio_loss) s += a;
    return s / static_cast<double>(audio_loss.size());
}

std::string LossBreakdown::to_json(const std::string & mode) const {
    nlohmann::json j;
    j["step"] = step;
    j["mode"] = mode;
    j["text_loss"] = text_loss;
    j["audio_loss"] = audio_loss;
    j["total"] = total;
    j["codebook_accuracy"] = codebook_accuracy;
    j["degenerate"] = degenerate;
    j["grad_norm"] = grad_norm;
    return j.dump();
}

PaddedBatch pad_batch(const std::vector<const AssembledExample *> & batch, const ModelConfig & cfg) {
    if (batch.empty()) throw DataError("pad_batch: empty batch");
    PaddedBatch pb;
    pb.batch = static_cast<int64_t>(batch.size());
    for (const AssembledExample * ae : batch) pb.seq = std::max(pb.seq, ae->ex.length());
    int64_t B = pb.batch, T = pb.seq, Q = cfg.codebook_count;
    pb.text_ids.assign(static_cast<size_t>(B * T), cfg.text_pad_id);
    pb.text_labels.assign(static_cast<size_t>(B * T), kIgnoreIndex);
    pb.audio_ids.assign(static_cast<size_t>(Q),
                        std::vector<int64_t>(static_cast<size_t>(B * T), cfg.audio_pad_id()));
    pb.audio_labels.assign(static_cast<size_t>(Q),
                           std::vector<int64_t>(static_cast<size_t>(B * T), kIgnoreIndex));
    for (int64_t b = 0; b < B; ++b) {
        const OmniExample & ex = batch[static_cast<size_t>(b)]->ex;
        int64_t L = ex.length();
        for (int64_t p = 0; p < L; ++p) {
            pb.text_ids[static_cast<size_t>(b * T + p)] = ex.text_tokens[static_cast<size_t>(p)];
            pb.text_labels[static_cast<size_t>(b * T + p)] = ex.text_labels[static_cast<size_t>(p)];
            for (int64_t q = 0; q < Q; ++q) {
                pb.audio_ids[static_cast<size_t>(q)][static_cast<size_t>(b * T + p)] =
                    ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(p)];
                pb.audio_labels[static_cast<size_t>(q)][static_cast<size_t>(b * T + p)] =
                    ex.audio_labels[static_cast<size_t>(q)][static_cast<size_t>(p)];
            }
        }
        if (ex.spk_position >= 0) {
            pb.spk_rows.emplace_back(b * T + ex.spk_position, ex.speaker_vector);
        }
        for (size_t s = 0; s < ex.spans.size(); ++s) {
            PlaceholderSpan span = ex.spans[s];
            span.start += b * T;
            pb.spans.push_back(span);
            pb.span_features.push_back(batch[static_cast<size_t>(b)]->span_features[s]);
        }
    }
    return pb;
}

ForwardOutput model_forward(const OmniModel & model, const PaddedBatch & pb) {
    Tensor emb = model.thinker.embed_tokens(pb.text_ids);
    for (size_t s = 0; s < pb.spans.size(); ++s) {
        const Projector & proj =
            pb.spans[s].modality == Modality::audio ? model.proj_audio : model.proj_vision;
        Tensor projected = proj.forward(pb.span_features[s]);
        emb = inject_rows(emb, pb.spans[s].start, projected);
    }
    ThinkerOutput tout = model.thinker.forward(emb, pb.batch, pb.seq);

    Tensor codec_emb = model.talker.embed_grid(pb.audio_ids, pb.spk_rows);
    Tensor fused = model.talker.fuse_inputs(tout.bridge.states, codec_emb);
    ForwardOutput out;
    out.text_logits = tout.logits;
    out.talker_logits = model.talker.forward(fused, pb.batch, pb.seq);
    out.bridge = tout.bridge;
    return out;
}

// Moves position-aligned labels one step left so logits at position p are
// scored against the label at p + 1.
static std::vector<int64_t> shift_labels(const std::vector<int64_t> & labels, int64_t batch, int64_t seq) {
    std::vector<int64_t> out(labels.size(), kIgnoreIndex);
    for (int64_t b = 0; b < batch; ++b) {
        for (int64_t t = 0; t + 1 < seq; ++t) {
            out[static_cast<size_t>(b * seq + t)] = labels[static_cast<size_t>(b * seq + t + 1)];
        }
    }
    return out;
}

static double labeled_accuracy(const Tensor & logits, const std::vector<int64_t> & labels) {
    int64_t hit = 0, n = 0;
    for (int64_t r = 0; r < logits.rows(); ++r) {
        int64_t l = labels[static_cast<size_t>(r)];
        if (l == kIgnoreIndex) continue;
        ++n;
        hit += argmax_row(logits, r) == l ? 1 : 0;
    }
    return n > 0 ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

JointLossResult joint_loss(const PaddedBatch & pb, const Tensor & text_logits,
                           const std::vector<Tensor> & talker_logits, double lambda_audio) {
    if (text_logits.rows() != pb.batch * pb.seq) {
        throw ShapeError("joint_loss: text logits " + text_logits.shape_str() +
                         " do not cover the example length");
    }
    if (talker_logits.size() != pb.audio_labels.size()) {
        throw ShapeError("joint_loss: talker logit streams do not match the codebook count");
    }
    JointLossResult out;
    std::vector<int64_t> text_shifted = shift_labels(pb.text_labels, pb.batch, pb.seq);
    CrossEntropyResult text = cross_entropy(text_logits, text_shifted);
    out.breakdown.text_loss = text.loss.item();

    Tensor audio_sum;
    for (size_t q = 0; q < talker_logits.size(); ++q) {
        std::vector<int64_t> shifted = shift_labels(pb.audio_labels[q], pb.batch, pb.seq);
        CrossEntropyResult ce = cross_entropy(talker_logits[q], shifted);
        out.breakdown.audio_loss.push_back(ce.loss.item());
        out.breakdown.degenerate.push_back(ce.labeled == 0 ? 1 : 0);
        {
            NoGradGuard ng;
            out.breakdown.codebook_accuracy.push_back(labeled_accuracy(talker_logits[q], shifted));
        }
        audio_sum = q == 0 ? ce.loss : add(audio_sum, ce.loss);
    }
    out.total = add(text.loss, scale(audio_sum, lambda_audio));
    out.breakdown.total = out.total.item();
    return out;
}

TrainResult train_run(OmniModel & model, const std::vector<DatasetRecord> & data, TrainMode mode,
                      const TrainHyper & hyper, const MetricSink & sink,
                      const std::string & abort_checkpoint_path) {
    if (data.empty()) throw DataError("train: dataset is empty");
    if (hyper.batch_size < 1 || hyper.steps < 1) throw UsageError("train: batch size and steps must be >= 1");

    std::vector<AssembledExample> assembled;
    assembled.reserve(data.size());
    for (const DatasetRecord & rec : data) {
        assembled.push_back(assemble_record(rec, model.cfg, model.dtype));
    }

    const std::vector<std::string> prefixes =
        hyper.trainable_override.empty() ? trainable_prefixes(mode) : hyper.trainable_override;
    auto named = model.named_params();
    std::vector<Tensor> trainable;
    for (auto & [name, t] : named) {
        bool selected = false;
        for (const std::string & p : prefixes) selected = selected || name.rfind(p, 0) == 0;
        t.set_requires_grad(selected);
        if (selected) trainable.push_back(t);
    }
    if (trainable.empty()) throw UsageError("train: mode selects no trainable parameters");

    AdamWConfig ocfg;
    ocfg.lr = hyper.lr;
    ocfg.weight_decay = hyper.weight_decay;
    ocfg.clip_norm = hyper.clip_norm;
    AdamWState ostate;

    TrainResult result;
    const size_t n = data.size();
    uint64_t epoch = ~0ULL;
    std::vector<size_t> perm;

    auto abort_with = [&](const std::string & why, int64_t step) {
        for (auto & [name, t] : named) t.set_requires_grad(true);
        std::string note;
        if (!abort_checkpoint_path.empty()) {
            save_checkpoint(abort_checkpoint_path, model);
            note = "; last-good checkpoint written to " + abort_checkpoint_path;
        }
        throw NumericError("train: " + why + " at step " + std::to_string(step) + note);
    };

    for (int64_t step = 0; step < hyper.steps; ++step) {
        std::vector<const AssembledExample *> batch;
        for (int64_t j = 0; j < hyper.batch_size; ++j) {
            uint64_t pos = static_cast<uint64_t>(step) * static_cast<uint64_t>(hyper.batch_size) +
                           static_cast<uint64_t>(j);
            uint64_t e = pos / n;
            if (e != epoch) {
                epoch = e;
                perm = shuffled_indices(n, hyper.seed, epoch);
            }
            batch.push_back(&assembled[perm[pos % n]]);
        }
        PaddedBatch pb = pad_batch(batch, model.cfg);

        for (Tensor & t : trainable) t.zero_grad();
        double gnorm = 0.0;
        JointLossResult jl;
        try {
            Tape tape;
            ForwardOutput fwd = model_forward(model, pb);
            jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, model.cfg.lambda_audio);
            if (!std::isfinite(jl.breakdown.total)) throw NumericError("non-finite loss");
            tape.backward(jl.total);
            gnorm = adamw_step(trainable, ostate, ocfg);
        } catch (const NumericError & e) {
            abort_with(e.what(), step);
        }

        jl.breakdown.step = step;
        jl.breakdown.grad_norm = gnorm;
        if (sink && (step % hyper.log_every == 0 || step + 1 == hyper.steps)) sink(jl.breakdown);
        result.log.push_back(jl.breakdown);
        result.steps_run = step + 1;
    }
    for (auto & [name, t] : named) t.set_requires_grad(true);
    return result;
}

LossBreakdown eval_pass(const OmniModel & model, const std::vector<DatasetRecord> & data,
                        int64_t batch_size, int64_t max_batches, double lambda_audio) {
    if (data.empty()) throw DataError("eval: dataset is empty");
    NoGradGuard ng;
    std::vector<AssembledExample> assembled;
    for (const DatasetRecord & rec : data) assembled.push_back(assemble_record(rec, model.cfg, model.dtype));

    LossBreakdown acc;
    int64_t batches = 0;
    for (size_t at = 0; at < assembled.size() && batches < max_batches; at += static_cast<size_t>(batch_size)) {
        std::vector<const AssembledExample *> batch;
        for (size_t j = at; j < std::min(assembled.size(), at + static_cast<size_t>(batch_size)); ++j) {
            batch.push_back(&assembled[j]);
        }
        PaddedBatch pb = pad_batch(batch, model.cfg);
        ForwardOutput fwd = model_forward(model, pb);
        JointLossResult jl = joint_loss(pb, fwd.text_logits, fwd.talker_logits, lambda_audio);
        if (acc.audio_loss.empty()) {
            acc.audio_loss.assign(jl.breakdown.audio_loss.size(), 0.0);
            acc.codebook_accuracy.assign(jl.breakdown.codebook_accuracy.size(), 0.0);
            acc.degenerate.assign(jl.breakdown.degenerate.size(), 0);
        }
        acc.text_loss += jl.breakdown.text_loss;
        acc.total += jl.breakdown.total;
        for (size_t q = 0; q < acc.audio_loss.size(); ++q) {
            acc.audio_loss[q] += jl.breakdown.audio_loss[q];
            acc.codebook_accuracy[q] += jl.breakdown.codebook_accuracy[q];
        }
        ++batches;
    }
    if (batches == 0) throw DataError("eval: no batches formed");
    acc.text_loss /= static_cast<double>(batches);
    acc.total /= static_cast<double>(batches);
    for (size_t q = 0; q < acc.audio_loss.size(); ++q) {
        acc.audio_loss[q] /= static_cast<double>(batches);
        acc.codebook_accuracy[q] /= static_cast<double>(batches);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Harnesses
// ---------------------------------------------------------------------------

template <typename Cell, typename RunFn>
static void run_cells(std::vector<Cell> & cells, int jobs, RunFn run) {
    if (jobs <= 1) {
        for (size_t i = 0; i < cells.size(); ++i) run(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int t = 0; t < jobs; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= cells.size()) return;
                try {
                    run(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto & th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<RankCell> rank_ablation(const ModelConfig & base,
                                    const std::vector<DatasetRecord> & train_data,
                                    const std::vector<std::pair<int64_t, int64_t>> & rank_settings,
                                    const HarnessOptions & opt) {
    std::vector<RankCell> cells(rank_settings.size());
    run_cells(cells, opt.jobs, [&](size_t i) {
        ModelConfig cfg = base;
        cfg.adapter_rank_embed = rank_settings[i].first;
        cfg.adapter_rank_head = rank_settings[i].second;
        cfg.validate();  // rejects rank > talker_hidden
        OmniModel model(cfg, opt.dtype, opt.model_seed);
        if (!opt.init_checkpoint.empty()) load_matching_params(model, opt.init_checkpoint);
        TrainHyper hyper = opt.hyper;
        hyper.trainable_override = {"talker."};  // thinker frozen for every run
        train_run(model, train_data, TrainMode::all, hyper);
        LossBreakdown ev = eval_pass(model, train_data, opt.hyper.batch_size, opt.eval_batches,
                                     cfg.lambda_audio);
        ParamCounts pc = count_parameters(cfg);
        RankCell & cell = cells[i];
        cell.rank_embed = cfg.adapter_rank_embed;
        cell.rank_head = cfg.adapter_rank_head;
        cell.added_params = cfg.codebook_count * (pc.embed_adapter_per_codebook + pc.head_adapter_per_codebook);
        cell.final_audio_loss = ev.mean_audio_loss();
        cell.final_codebook_accuracy = ev.mean_codebook_accuracy();
    });
    return cells;
}

std::vector<BridgeCell> bridge_sweep(const ModelConfig & base,
                                     const std::vector<DatasetRecord> & train_data,
                                     const std::vector<DatasetRecord> & eval_data,
                                     const OracleTaskSpec & spec,
                                     const std::vector<int64_t> & layer_indices,
                                     const HarnessOptions & opt) {
    std::vector<BridgeCell> cells(layer_indices.size());
    run_cells(cells, opt.jobs, [&](size_t i) {
        ModelConfig cfg = base;
        cfg.bridge_layer_index = layer_indices[i];
        cfg.resolved_bridge_index();  // validates the index
        OmniModel model(cfg, opt.dtype, opt.model_seed);
        if (!opt.init_checkpoint.empty()) load_matching_params(model, opt.init_checkpoint);
        train_run(model, train_data, TrainMode::all, opt.hyper);
        LossBreakdown ev = eval_pass(model, eval_data, opt.hyper.batch_size, opt.eval_batches,
                                     cfg.lambda_audio);
        ConsistencyReport report = consistency_eval(model, eval_data, spec,
                                                    ConsistencyOptions{opt.max_decode_steps, opt.eval_prompts});
        cells[i].layer_index = layer_indices[i];
        cells[i].final_total_loss = ev.total;
        cells[i].oracle_cer = report.overall_cer;
    });
    return cells;
}

std::vector<HiddenCell> hidden_sweep(const ModelConfig & base,
                                     const std::vector<DatasetRecord> & train_data,
                                     const std::vector<DatasetRecord> & eval_data,
                                     const OracleTaskSpec & spec,
                                     const std::vector<int64_t> & hidden_sizes,
                                     const HarnessOptions & opt) {
    std::vector<HiddenCell> cells(hidden_sizes.size());
    run_cells(cells, opt.jobs, [&](size_t i) {
        ModelConfig cfg = base;
        cfg.talker_hidden = hidden_sizes[i];
        cfg.adapter_rank_embed = std::min(cfg.adapter_rank_embed, cfg.talker_hidden);
        cfg.adapter_rank_head = std::min(cfg.adapter_rank_head, cfg.talker_hidden);
        cfg.validate();
        OmniModel model(cfg, opt.dtype, opt.model_seed);
        if (!opt.init_checkpoint.empty()) load_matching_params(model, opt.init_checkpoint);
        train_run(model, train_data, TrainMode::all, opt.hyper);
        LossBreakdown ev = eval_pass(model, eval_data, opt.hyper.batch_size, opt.eval_batches,
                                     cfg.lambda_audio);
        ConsistencyReport report = consistency_eval(model, eval_data, spec,
                                                    ConsistencyOptions{opt.max_decode_steps, opt.eval_prompts});
        cells[i].talker_hidden = hidden_sizes[i];
        cells[i].talker_params = count_parameters(cfg).talker;
        cells[i].final_total_loss = ev.total;
        cells[i].oracle_cer = report.overall_cer;
    });
    return cells;
}

} // namespace omni
