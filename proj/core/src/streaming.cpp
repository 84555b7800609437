#include "omni/streaming.hpp"

#include <algorithm>
#include <cmath>

#include "omni/rng.hpp"

namespace omni {

StubWaveform decode_frame_stub(const StreamFrame & frame) {
    StubWaveform w;
    w.samples.resize(static_cast<size_t>(kSamplesPerFrame));
    uint64_t key = 0x9AFE11DULL;
    for (int64_t c : frame.codes) {
        key = splitmix64(key ^ static_cast<uint64_t>(c + 1));
    }
    for (int64_t i = 0; i < kSamplesPerFrame; ++i) {
        uint64_t h = splitmix64(key + static_cast<uint64_t>(i) + 1);
        w.samples[static_cast<size_t>(i)] =
            (static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0) * 0.25;
    }
    return w;
}

SessionPrompt SessionPrompt::from_record(const DatasetRecord & rec, const ModelConfig & cfg, Dtype dt,
                                         const StubConfig & stub) {
    SessionPrompt p;
    size_t span_idx = 0;
    for (const Turn & t : rec.conversation) {
        if (t.role != Role::user) continue;
        p.prompt_tokens.insert(p.prompt_tokens.end(), t.tokens.begin(), t.tokens.end());
    }
    if (p.prompt_tokens.empty()) throw DataError("session: record has no user prompt");
    for (int64_t at = 0; at < static_cast<int64_t>(p.prompt_tokens.size());) {
        int64_t id = p.prompt_tokens[static_cast<size_t>(at)];
        if (id == cfg.audio_placeholder_id || id == cfg.image_placeholder_id) {
            int64_t end = at;
            while (end < static_cast<int64_t>(p.prompt_tokens.size()) &&
                   p.prompt_tokens[static_cast<size_t>(end)] == id) {
                ++end;
            }
            if (span_idx >= rec.span_contents.size()) {
                throw DataError("session: prompt has more placeholder spans than content blocks");
            }
            PlaceholderSpan s;
            s.modality = id == cfg.audio_placeholder_id ? Modality::audio : Modality::vision;
            s.start = at;
            s.length = end - at;
            p.spans.push_back(s);
            p.span_features.push_back(encode_stub(s.modality, rec.span_contents[span_idx].bytes, cfg, dt, stub));
            ++span_idx;
            at = end;
        } else {
            ++at;
        }
    }
    if (span_idx != rec.span_contents.size()) {
        throw DataError("session: record carries unused span content blocks");
    }
    p.ref_codes = rec.ref_codes;
    p.speaker_vector = rec.speaker_vector;
    return p;
}

GenerationSession::GenerationSession(const OmniModel & model, SessionPrompt prompt,
                                     const SamplingConfig & sampling, int64_t max_text_steps,
                                     bool use_cache)
    : model_(model),
      prompt_(std::move(prompt)),
      sampling_(sampling),
      max_text_steps_(max_text_steps),
      use_cache_(use_cache) {
    if (max_text_steps_ < 1) throw UsageError("session: max_text_steps must be >= 1");
    const ModelConfig & cfg = model_.cfg;
    assistant_start_ = static_cast<int64_t>(prompt_.prompt_tokens.size());
    if (assistant_start_ < 1) throw DataError("session: empty prompt");
    gen_codes_.assign(static_cast<size_t>(cfg.codebook_count), {});
    rng_state_ = mix_seed(sampling_.seed, 0x5A3D1E);

    // conditioning audio columns mirror the training layout
    int64_t ref_len = prompt_.ref_codes.has_value() ? prompt_.ref_codes->frames : 0;
    bool with_spk = !prompt_.speaker_vector.empty();
    if (with_spk && static_cast<int64_t>(prompt_.speaker_vector.size()) != cfg.speaker_dim) {
        throw DataError("session: speaker vector length mismatch");
    }
    if (ref_len + (with_spk ? 1 : 0) > assistant_start_) {
        throw DataError("session: reference codes plus speaker slot exceed the prompt buffer");
    }
    full_text_ = prompt_.prompt_tokens;
    full_audio_.assign(static_cast<size_t>(cfg.codebook_count),
                       std::vector<int64_t>(static_cast<size_t>(assistant_start_), cfg.audio_pad_id()));
    int64_t ref_start = assistant_start_ - ref_len;
    for (int64_t q = 0; q < cfg.codebook_count; ++q) {
        for (int64_t f = 0; f < ref_len; ++f) {
            full_audio_[static_cast<size_t>(q)][static_cast<size_t>(ref_start + f)] =
                prompt_.ref_codes->at(q, f);
        }
        if (with_spk) {
            full_audio_[static_cast<size_t>(q)][static_cast<size_t>(ref_start - 1)] = cfg.audio_spk_id();
        }
    }
    prefill();
}

// Full forward over positions [0, len) collecting the last logit rows.
void GenerationSession::full_recompute() {
    NoGradGuard ng;
    const ModelConfig & cfg = model_.cfg;
    int64_t T = static_cast<int64_t>(full_text_.size());
    Tensor emb = model_.thinker.embed_tokens(full_text_);
    for (size_t s = 0; s < prompt_.spans.size(); ++s) {
        const Projector & proj =
            prompt_.spans[s].modality == Modality::audio ? model_.proj_audio : model_.proj_vision;
        emb = inject_rows(emb, prompt_.spans[s].start, proj.forward(prompt_.span_features[s]));
    }
    ThinkerOutput tout = model_.thinker.forward(emb, 1, T);

    std::vector<std::pair<int64_t, std::vector<double>>> spk_rows;
    if (!prompt_.speaker_vector.empty()) {
        int64_t ref_len = prompt_.ref_codes.has_value() ? prompt_.ref_codes->frames : 0;
        spk_rows.emplace_back(assistant_start_ - ref_len - 1, prompt_.speaker_vector);
    }
    Tensor codec = model_.talker.embed_grid(full_audio_, spk_rows);
    Tensor fused = model_.talker.fuse_inputs(tout.bridge.states, codec);
    std::vector<Tensor> tl = model_.talker.forward(fused, 1, T);

    int64_t last = T - 1;
    last_text_logits_.assign(tout.logits.data().begin() + last * cfg.text_vocab,
                             tout.logits.data().begin() + (last + 1) * cfg.text_vocab);
    last_talker_logits_.clear();
    for (const Tensor & l : tl) {
        last_talker_logits_.emplace_back(l.data().begin() + last * cfg.audio_vocab,
                                         l.data().begin() + (last + 1) * cfg.audio_vocab);
    }
}

void GenerationSession::prefill() {
    if (!use_cache_) {
        full_recompute();
        return;
    }
    NoGradGuard ng;
    const ModelConfig & cfg = model_.cfg;
    int64_t T = assistant_start_;
    Tensor emb = model_.thinker.embed_tokens(prompt_.prompt_tokens);
    for (size_t s = 0; s < prompt_.spans.size(); ++s) {
        const Projector & proj =
            prompt_.spans[s].modality == Modality::audio ? model_.proj_audio : model_.proj_vision;
        emb = inject_rows(emb, prompt_.spans[s].start, proj.forward(prompt_.span_features[s]));
    }
    ThinkerOutput tout = model_.thinker.forward(emb, 1, T, &thinker_cache, 0);

    std::vector<std::pair<int64_t, std::vector<double>>> spk_rows;
    if (!prompt_.speaker_vector.empty()) {
        int64_t ref_len = prompt_.ref_codes.has_value() ? prompt_.ref_codes->frames : 0;
        spk_rows.emplace_back(assistant_start_ - ref_len - 1, prompt_.speaker_vector);
    }
    Tensor codec = model_.talker.embed_grid(full_audio_, spk_rows);
    Tensor fused = model_.talker.fuse_inputs(tout.bridge.states, codec);
    std::vector<Tensor> tl = model_.talker.forward(fused, 1, T, &talker_cache, 0);

    int64_t last = T - 1;
    last_text_logits_.assign(tout.logits.data().begin() + last * cfg.text_vocab,
                             tout.logits.data().begin() + (last + 1) * cfg.text_vocab);
    last_talker_logits_.clear();
    for (const Tensor & l : tl) {
        last_talker_logits_.emplace_back(l.data().begin() + last * cfg.audio_vocab,
                                         l.data().begin() + (last + 1) * cfg.audio_vocab);
    }
}

void GenerationSession::feed_position(int64_t text_id, const std::vector<int64_t> & audio_column) {
    full_text_.push_back(text_id);
    for (size_t q = 0; q < full_audio_.size(); ++q) full_audio_[q].push_back(audio_column[q]);
    if (!use_cache_) {
        full_recompute();
        return;
    }
    NoGradGuard ng;
    const ModelConfig & cfg = model_.cfg;
    int64_t pos = static_cast<int64_t>(full_text_.size()) - 1;
    Tensor emb = model_.thinker.embed_tokens({text_id});
    ThinkerOutput tout = model_.thinker.forward(emb, 1, 1, &thinker_cache, pos);

    std::vector<std::vector<int64_t>> col(full_audio_.size());
    for (size_t q = 0; q < col.size(); ++q) col[q] = {audio_column[q]};
    Tensor codec = model_.talker.embed_grid(col, {});
    Tensor fused = model_.talker.fuse_inputs(tout.bridge.states, codec);
    std::vector<Tensor> tl = model_.talker.forward(fused, 1, 1, &talker_cache, pos);

    last_text_logits_.assign(tout.logits.data().begin(), tout.logits.data().end());
    last_talker_logits_.clear();
    for (const Tensor & l : tl) {
        last_talker_logits_.emplace_back(l.data().begin(), l.data().begin() + cfg.audio_vocab);
    }
}

// Samples an id from the first `limit` logits. Code slots pass
// limit = codebook_size: the reserved layout ids (pad/bos/eos/spk) belong to
// the schedule, never to the sampler.
int64_t GenerationSession::sample_from(const std::vector<double> & logits, int64_t limit) {
    size_t n = std::min(logits.size(), static_cast<size_t>(limit));
    if (sampling_.greedy) {
        int64_t best = 0;
        for (size_t j = 1; j < n; ++j) {
            if (logits[j] > logits[static_cast<size_t>(best)]) best = static_cast<int64_t>(j);
        }
        return best;
    }
    double tau = sampling_.temperature > 0 ? sampling_.temperature : 1.0;
    double mx = logits[0];
    for (size_t j = 0; j < n; ++j) mx = std::max(mx, logits[j]);
    std::vector<double> p(n);
    double sum = 0.0;
    for (size_t j = 0; j < n; ++j) {
        p[j] = std::exp((logits[j] - mx) / tau);
        sum += p[j];
    }
    rng_state_ = splitmix64(rng_state_);
    double u = static_cast<double>(rng_state_ >> 11) * 0x1.0p-53 * sum;
    double acc = 0.0;
    for (size_t j = 0; j < n; ++j) {
        acc += p[j];
        if (u < acc) return static_cast<int64_t>(j);
    }
    return static_cast<int64_t>(n) - 1;
}

GenerationSession::StepResult GenerationSession::step() {
    SessionStatus st = status_.load();
    if (st != SessionStatus::running) {
        throw DataError(std::string("session: step() after ") +
                        (st == SessionStatus::finished ? "finish" : "cancel"));
    }
    const ModelConfig & cfg = model_.cfg;
    const int64_t b = cfg.stagger_offset_base;
    const int64_t Q = cfg.codebook_count;
    const int64_t s = steps_;

    StepResult res;
    res.step = s;

    int64_t text_id;
    if (!text_done_) {
        text_id = sample_from(last_text_logits_, model_.cfg.text_vocab);
        text_ids_.push_back(text_id);
        res.text_id = text_id;
        if (text_id == cfg.text_eos_id || static_cast<int64_t>(text_ids_.size()) >= max_text_steps_) {
            text_done_ = true;
            eos_step_ = s;
        }
    } else {
        text_id = cfg.text_pad_id;  // audio-only flush step
    }

    // final frame index once text has terminated: eos_step - b
    int64_t final_frame = text_done_ ? eos_step_ - b : -2;
    std::vector<int64_t> column(static_cast<size_t>(Q), cfg.audio_pad_id());
    for (int64_t q = 0; q < Q; ++q) {
        int64_t f = s - q - b;
        if (f < 0) continue;
        if (text_done_ && f > final_frame) continue;
        int64_t code = sample_from(last_talker_logits_[static_cast<size_t>(q)], cfg.codebook_size);
        gen_codes_[static_cast<size_t>(q)].push_back(code);
        column[static_cast<size_t>(q)] = code;
        res.codes.emplace_back(q, code);
        if (q == Q - 1) {
            // eighth layer closed the frame
            if (status_.load() == SessionStatus::cancelled) break;
            StreamFrame frame;
            frame.frame_index = f;
            frame.emitted_at_text_step = s;
            for (int64_t qq = 0; qq < Q; ++qq) {
                frame.codes.push_back(gen_codes_[static_cast<size_t>(qq)][static_cast<size_t>(f)]);
            }
            frames_.push_back(frame);
            res.frame = frame;
        }
    }
    ++steps_;

    if (status_.load() == SessionStatus::cancelled) return res;  // cancelled mid-step
    bool finished = text_done_ && static_cast<int64_t>(frames_.size()) >= std::max<int64_t>(0, final_frame + 1);
    if (finished) {
        // CAS so a racing cancel is never overwritten
        SessionStatus expected = SessionStatus::running;
        if (status_.compare_exchange_strong(expected, SessionStatus::finished)) {
            res.finished = true;
        }
        return res;
    }
    feed_position(text_id, column);
    return res;
}

bool GenerationSession::cancel() {
    SessionStatus expected = SessionStatus::running;
    return status_.compare_exchange_strong(expected, SessionStatus::cancelled);
}

CodeGrid GenerationSession::completed_grid() const {
    const int64_t Q = model_.cfg.codebook_count;
    CodeGrid g(Q, frames_emitted());
    for (int64_t f = 0; f < g.frames; ++f) {
        for (int64_t q = 0; q < Q; ++q) g.set(q, f, frames_[static_cast<size_t>(f)].codes[static_cast<size_t>(q)]);
    }
    return g;
}

EquivalenceReport compare_sessions(const GenerationSession & streamed, const GenerationSession & offline) {
    EquivalenceReport rep;
    rep.steps_streamed = streamed.steps_taken();
    rep.steps_offline = offline.steps_taken();
    rep.frames_streamed = streamed.frames_emitted();
    rep.frames_offline = offline.frames_emitted();
    auto diff = [&](const std::string & name, const std::vector<int64_t> & a, const std::vector<int64_t> & b) {
        size_t n = std::max(a.size(), b.size());
        for (size_t i = 0; i < n; ++i) {
            int64_t av = i < a.size() ? a[i] : -1;
            int64_t bv = i < b.size() ? b[i] : -1;
            if (av != bv) rep.divergences.push_back({name, static_cast<int64_t>(i), av, bv});
        }
    };
    diff("text", streamed.text_ids(), offline.text_ids());
    for (size_t q = 0; q < streamed.generated_codes().size(); ++q) {
        diff("codebook" + std::to_string(q), streamed.generated_codes()[q], offline.generated_codes()[q]);
    }
    rep.identical = rep.divergences.empty();
    return rep;
}

EquivalenceReport offline_equivalence(const OmniModel & model, const SessionPrompt & prompt,
                                      int64_t max_steps) {
    SamplingConfig greedy;
    GenerationSession streamed(model, prompt, greedy, max_steps, /*use_cache=*/true);
    while (streamed.status() == SessionStatus::running) streamed.step();
    GenerationSession offline(model, prompt, greedy, max_steps, /*use_cache=*/false);
    while (offline.status() == SessionStatus::running) offline.step();
    return compare_sessions(streamed, offline);
}

} // namespace omni
