#pragma once

#include <atomic>
#include <optional>

#include "omni/data_io.hpp"
#include "omni/model.hpp"

namespace omni {

struct SamplingConfig {
    bool     greedy      = true;
    double   temperature = 1.0;
    uint64_t seed        = 0;
};

// One complete eight-layer codec frame. Under the default stagger it is
// emitted at text step frame_index + codebook_count.
struct StreamFrame {
    int64_t frame_index = 0;
    std::vector<int64_t> codes;
    int64_t emitted_at_text_step = 0;
};

// 24 kHz / 12.5 Hz frame geometry: 1920 samples per frame, a deterministic
// injective function of the frame's codes (stands in for the codec decoder).
struct StubWaveform {
    int sample_rate = 24000;
    std::vector<double> samples;
};
StubWaveform decode_frame_stub(const StreamFrame & frame);
inline constexpr int64_t kSamplesPerFrame = 1920;  // 24000 / 12.5

// Prefill contents: prompt text (with placeholder spans + encoded features)
// and the audio-buffer conditioning (right-aligned reference codes, speaker).
struct SessionPrompt {
    std::vector<int64_t> prompt_tokens;
    std::vector<PlaceholderSpan> spans;
    std::vector<Tensor> span_features;
    std::optional<CodeGrid> ref_codes;
    std::vector<double> speaker_vector;

    static SessionPrompt from_record(const DatasetRecord & rec, const ModelConfig & cfg, Dtype dt,
                                     const StubConfig & stub = {});
};

enum class SessionStatus { running, finished, cancelled };

// Incremental joint decoding. Step s (0-based) samples the text token for
// position assistant_start + s and the due codes under the delay schedule:
// codebook q' produces frame s - q' - 1. After the text eos the session
// keeps stepping audio-only until every started frame is complete, so the
// emitted frame count is exactly text-steps - codebook_count.
class GenerationSession {
  public:
    GenerationSession(const OmniModel & model, SessionPrompt prompt,
                      const SamplingConfig & sampling, int64_t max_text_steps,
                      bool use_cache = true);

    struct StepResult {
        int64_t step = 0;
        int64_t text_id = -1;  // -1 on audio-only flush steps
        std::vector<std::pair<int64_t, int64_t>> codes;  // (codebook, code)
        std::optional<StreamFrame> frame;
        bool finished = false;
    };

    // Advances one step; throws DataError after finish/cancel.
    StepResult step();

    // Requests cancellation; takes effect at the next step boundary (steps
    // are never interrupted mid-flight). Returns false (no-op) when the
    // session is already cancelled or finished.
    bool cancel();

    SessionStatus status() const { return status_.load(); }
    int64_t steps_taken() const { return steps_; }
    int64_t frames_emitted() const { return static_cast<int64_t>(frames_.size()); }
    const std::vector<StreamFrame> & frames() const { return frames_; }
    const std::vector<int64_t> & text_ids() const { return text_ids_; }
    const std::vector<std::vector<int64_t>> & generated_codes() const { return gen_codes_; }
    CodeGrid completed_grid() const;
    int64_t assistant_start() const { return assistant_start_; }

    // caches are exposed so validation harnesses can corrupt them on purpose
    KvCache thinker_cache;
    KvCache talker_cache;

  private:
    void prefill();
    void feed_position(int64_t text_id, const std::vector<int64_t> & audio_column);
    void full_recompute();
    int64_t sample_from(const std::vector<double> & logits, int64_t limit);

    const OmniModel & model_;
    SessionPrompt prompt_;
    SamplingConfig sampling_;
    int64_t max_text_steps_;
    bool use_cache_;

    std::atomic<SessionStatus> status_{SessionStatus::running};
    int64_t assistant_start_ = 0;
    int64_t steps_ = 0;
    bool text_done_ = false;
    int64_t eos_step_ = -1;
    std::vector<int64_t> text_ids_;                    // sampled response ids (incl. eos)
    std::vector<std::vector<int64_t>> gen_codes_;      // per codebook, ragged
    std::vector<StreamFrame> frames_;

    std::vector<int64_t> full_text_;                   // prompt + fed response/pad ids
    std::vector<std::vector<int64_t>> full_audio_;     // per codebook, fed columns
    std::vector<double> last_text_logits_;
    std::vector<std::vector<double>> last_talker_logits_;
    uint64_t rng_state_ = 0;
};

struct DivergencePoint {
    std::string stream;   // "text" or "codebook<q>"
    int64_t index = 0;
    int64_t streamed = -1;
    int64_t offline = -1;
};

struct EquivalenceReport {
    bool identical = true;
    std::vector<DivergencePoint> divergences;
    int64_t steps_streamed = 0;
    int64_t steps_offline = 0;
    int64_t frames_streamed = 0;
    int64_t frames_offline = 0;
};

// Greedy streaming decode vs a full-sequence re-decode without caches.
EquivalenceReport offline_equivalence(const OmniModel & model, const SessionPrompt & prompt,
                                      int64_t max_steps);
// Compares two finished/cancelled sessions position by position.
EquivalenceReport compare_sessions(const GenerationSession & streamed, const GenerationSession & offline);

} // namespace omni
