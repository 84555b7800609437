#include "omni/sequence.hpp"

#include <algorithm>

#include <json.hpp>

#include "omni/tensor.hpp"

namespace omni {

std::vector<int64_t> CodeGrid::column(int64_t f) const {
    std::vector<int64_t> col(static_cast<size_t>(codebooks));
    for (int64_t q = 0; q < codebooks; ++q) col[static_cast<size_t>(q)] = at(q, f);
    return col;
}

StaggerSchedule stagger_schedule(int64_t assistant_start, int64_t codebooks, int64_t offset_base) {
    StaggerSchedule s;
    s.assistant_start = assistant_start;
    for (int64_t q = 0; q < codebooks; ++q) {
        s.first_label_position.push_back(assistant_start + q + offset_base);
    }
    return s;
}

std::optional<int64_t> frame_of_position(int64_t position, int64_t codebook,
                                         int64_t assistant_start, int64_t offset_base) {
    int64_t rel = position - assistant_start - codebook - offset_base;
    if (rel < 0) return std::nullopt;
    return rel;
}

OmniExample build_example(const BuildInputs & in, const ModelConfig & cfg) {
    const int64_t Q = cfg.codebook_count;
    const int64_t b = cfg.stagger_offset_base;
    const int64_t a_s = static_cast<int64_t>(in.prompt_tokens.size());
    const int64_t R = static_cast<int64_t>(in.response_tokens.size());
    const int64_t F = in.response_codes.frames;

    if (a_s < 1) throw DataError("build_example: prompt must be non-empty");
    if (F > 0 && in.response_codes.codebooks != Q) {
        throw DataError("build_example: response code grid has " +
                        std::to_string(in.response_codes.codebooks) + " codebooks, expected " +
                        std::to_string(Q));
    }
    for (int64_t id : in.prompt_tokens) {
        if (id < 0 || id >= cfg.text_vocab) throw DataError("build_example: prompt token out of range");
    }
    for (int64_t id : in.response_tokens) {
        if (id < 0 || id >= cfg.text_vocab) throw DataError("build_example: response token out of range");
    }
    for (int64_t c : in.response_codes.codes) {
        if (c < 0 || c >= cfg.codebook_size) {
            throw DataError("build_example: response code " + std::to_string(c) +
                            " outside [0," + std::to_string(cfg.codebook_size) + ")");
        }
    }

    const bool with_spk = !in.speaker_vector.empty();
    if (with_spk && static_cast<int64_t>(in.speaker_vector.size()) != cfg.speaker_dim) {
        throw DataError("build_example: speaker vector length " + std::to_string(in.speaker_vector.size()) +
                        " != " + std::to_string(cfg.speaker_dim));
    }
    int64_t ref_len = 0;
    if (in.ref_codes.has_value() && in.ref_codes->frames > 0) {
        if (in.ref_codes->codebooks != Q) {
            throw DataError("build_example: ref code grid has wrong codebook count");
        }
        for (int64_t c : in.ref_codes->codes) {
            if (c < 0 || c >= cfg.codebook_size) {
                throw DataError("build_example: ref code " + std::to_string(c) + " outside codebook range");
            }
        }
        ref_len = in.ref_codes->frames;
    }
    // Reference codes are right-aligned against the response; the speaker
    // slot, when used, immediately precedes them.
    int64_t conditioning = ref_len + (with_spk ? 1 : 0);
    if (conditioning > a_s) {
        throw DataError("build_example: ref codes (" + std::to_string(ref_len) + ") plus speaker slot " +
                        "exceed the pre-response audio buffer of " + std::to_string(a_s));
    }

    // Audio tail: codebook q carries frames at a_s + q + b + f, plus one
    // trailing eos marker in the stream (never labeled).
    int64_t audio_end = F > 0 ? a_s + (Q - 1) + b + F + 1 : a_s;
    int64_t T = std::max(a_s + R + 1, audio_end);
    if (T > cfg.max_sequence_length) {
        throw DataError("build_example: example needs " + std::to_string(T) +
                        " positions but max_sequence_length is " +
                        std::to_string(cfg.max_sequence_length) + "; rejected, never truncated");
    }

    OmniExample ex;
    ex.assistant_start = a_s;
    ex.spans = in.spans;
    ex.speaker_vector = in.speaker_vector;
    ex.text_tokens.assign(static_cast<size_t>(T), cfg.text_pad_id);
    ex.text_labels.assign(static_cast<size_t>(T), kIgnoreIndex);
    ex.audio_streams.assign(static_cast<size_t>(Q), std::vector<int64_t>(static_cast<size_t>(T), cfg.audio_pad_id()));
    ex.audio_labels.assign(static_cast<size_t>(Q), std::vector<int64_t>(static_cast<size_t>(T), kIgnoreIndex));

    for (int64_t p = 0; p < a_s; ++p) ex.text_tokens[static_cast<size_t>(p)] = in.prompt_tokens[static_cast<size_t>(p)];
    for (int64_t i = 0; i < R; ++i) {
        ex.text_tokens[static_cast<size_t>(a_s + i)] = in.response_tokens[static_cast<size_t>(i)];
        ex.text_labels[static_cast<size_t>(a_s + i)] = in.response_tokens[static_cast<size_t>(i)];
    }
    ex.text_tokens[static_cast<size_t>(a_s + R)] = cfg.text_eos_id;
    ex.text_labels[static_cast<size_t>(a_s + R)] = cfg.text_eos_id;

    // placeholder spans live in the prompt and must hold the matching pad id
    for (const PlaceholderSpan & s : in.spans) {
        if (s.start < 0 || s.length <= 0 || s.start + s.length > a_s) {
            throw DataError("build_example: span at " + std::to_string(s.start) +
                            " does not fit inside the prompt");
        }
        int64_t want = s.modality == Modality::audio ? cfg.audio_placeholder_id : cfg.image_placeholder_id;
        for (int64_t p = s.start; p < s.start + s.length; ++p) {
            if (ex.text_tokens[static_cast<size_t>(p)] != want) {
                throw DataError("build_example: span position " + std::to_string(p) +
                                " does not hold the " + modality_name(s.modality) + " placeholder id");
            }
        }
    }

    if (ref_len > 0) {
        ex.ref_start = a_s - ref_len;
        ex.ref_length = ref_len;
        for (int64_t q = 0; q < Q; ++q) {
            for (int64_t f = 0; f < ref_len; ++f) {
                ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(ex.ref_start + f)] =
                    in.ref_codes->at(q, f);
            }
        }
    }
    if (with_spk) {
        ex.spk_position = a_s - ref_len - 1;
        for (int64_t q = 0; q < Q; ++q) {
            ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(ex.spk_position)] = cfg.audio_spk_id();
        }
    }

    for (int64_t q = 0; q < Q; ++q) {
        for (int64_t f = 0; f < F; ++f) {
            int64_t p = a_s + q + b + f;
            int64_t code = in.response_codes.at(q, f);
            ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(p)] = code;
            ex.audio_labels[static_cast<size_t>(q)][static_cast<size_t>(p)] = code;
        }
        if (F > 0) {
            // stream-side end marker one past the last frame; stays unlabeled
            ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(a_s + q + b + F)] = cfg.audio_eos_id();
        }
    }
    return ex;
}

std::vector<std::string> validate_example(const OmniExample & ex, const ModelConfig & cfg) {
    std::vector<std::string> v;
    auto fail = [&](const std::string & msg) { v.push_back(msg); };
    const int64_t Q = cfg.codebook_count;
    const int64_t b = cfg.stagger_offset_base;
    const int64_t T = ex.length();
    const int64_t a_s = ex.assistant_start;

    if (static_cast<int64_t>(ex.audio_streams.size()) != Q ||
        static_cast<int64_t>(ex.audio_labels.size()) != Q) {
        fail("stream-count: expected exactly " + std::to_string(Q) + " audio streams aligned to the text stream");
        return v;  // later checks assume the grid shape
    }
    bool aligned = static_cast<int64_t>(ex.text_labels.size()) == T;
    for (int64_t q = 0; q < Q; ++q) {
        aligned = aligned &&
                  static_cast<int64_t>(ex.audio_streams[static_cast<size_t>(q)].size()) == T &&
                  static_cast<int64_t>(ex.audio_labels[static_cast<size_t>(q)].size()) == T;
    }
    if (!aligned) {
        fail("length-alignment: all nine streams and their labels must share the text length");
        return v;
    }
    if (a_s < 1 || a_s > T) fail("assistant-start: index " + std::to_string(a_s) + " out of range");

    // text side
    for (int64_t p = 0; p < T; ++p) {
        int64_t l = ex.text_labels[static_cast<size_t>(p)];
        if (l == kIgnoreIndex) continue;
        if (p < a_s) fail("text-label[" + std::to_string(p) + "]: label before the assistant response");
        if (l != ex.text_tokens[static_cast<size_t>(p)]) {
            fail("text-label[" + std::to_string(p) + "]: label does not match the stream token");
        }
    }

    // audio streams
    int64_t spk = cfg.audio_spk_id();
    std::vector<int64_t> label_counts(static_cast<size_t>(Q), 0);
    for (int64_t q = 0; q < Q; ++q) {
        const auto & stream = ex.audio_streams[static_cast<size_t>(q)];
        const auto & labels = ex.audio_labels[static_cast<size_t>(q)];
        int64_t first = a_s + q + b;
        int64_t run_end = first;  // one past the contiguous labeled run
        bool in_run = true;
        for (int64_t p = 0; p < T; ++p) {
            int64_t id = stream[static_cast<size_t>(p)];
            int64_t l = labels[static_cast<size_t>(p)];
            if (id < 0 || id >= cfg.audio_vocab) {
                fail("audio-stream[" + std::to_string(q) + "][" + std::to_string(p) + "]: id out of range");
            }
            if (id == spk && p != ex.spk_position) {
                fail("audio-stream[" + std::to_string(q) + "][" + std::to_string(p) +
                     "]: speaker token outside the speaker position");
            }
            if (l == kIgnoreIndex) {
                if (p >= first && p == run_end) in_run = false;
                continue;
            }
            if (p < first) {
                if (ex.ref_start >= 0 && p >= ex.ref_start && p < ex.ref_start + ex.ref_length) {
                    fail("audio-label[" + std::to_string(q) + "][" + std::to_string(p) +
                         "]: reference region must be masked from the audio loss");
                } else {
                    fail("audio-label[" + std::to_string(q) + "][" + std::to_string(p) +
                         "]: label before the codebook's stagger offset");
                }
                continue;
            }
            if (!in_run || p != run_end) {
                fail("audio-label[" + std::to_string(q) + "][" + std::to_string(p) +
                     "]: labels must form one contiguous run from the stagger offset");
            }
            run_end = p + 1;
            ++label_counts[static_cast<size_t>(q)];
            if (l != id) {
                fail("audio-label[" + std::to_string(q) + "][" + std::to_string(p) +
                     "]: label does not match the stream code");
            }
            if (l < 0 || l >= cfg.codebook_size) {
                fail("audio-label[" + std::to_string(q) + "][" + std::to_string(p) +
                     "]: label is not a real codec code");
            }
        }
    }
    for (int64_t q = 1; q < Q; ++q) {
        if (label_counts[static_cast<size_t>(q)] != label_counts[0]) {
            fail("label-count: codebook " + std::to_string(q) + " has " +
                 std::to_string(label_counts[static_cast<size_t>(q)]) + " labels but codebook 0 has " +
                 std::to_string(label_counts[0]));
        }
    }

    // reference region
    if (ex.ref_length > 0) {
        if (ex.ref_start < 0 || ex.ref_start + ex.ref_length != a_s) {
            fail("ref-region: must be right-aligned against the response start");
        } else {
            for (int64_t q = 0; q < Q; ++q) {
                for (int64_t p = ex.ref_start; p < ex.ref_start + ex.ref_length; ++p) {
                    int64_t id = ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(p)];
                    if (id < 0 || id >= cfg.codebook_size) {
                        fail("ref-region[" + std::to_string(q) + "][" + std::to_string(p) +
                             "]: reference positions must carry real codec codes");
                    }
                }
            }
        }
    }

    // speaker slot
    if (ex.spk_position >= 0) {
        if (ex.speaker_vector.empty()) {
            fail("speaker: spk position present without a speaker vector");
        } else if (static_cast<int64_t>(ex.speaker_vector.size()) != cfg.speaker_dim) {
            fail("speaker: vector length " + std::to_string(ex.speaker_vector.size()) +
                 " != " + std::to_string(cfg.speaker_dim));
        }
        int64_t expected = ex.ref_length > 0 ? ex.ref_start - 1 : a_s - 1;
        if (ex.spk_position != expected) {
            fail("speaker: spk position must immediately precede the reference region");
        }
        for (int64_t q = 0; q < Q; ++q) {
            if (ex.spk_position >= T ||
                ex.audio_streams[static_cast<size_t>(q)][static_cast<size_t>(ex.spk_position)] != spk) {
                fail("speaker: position " + std::to_string(ex.spk_position) +
                     " must fill all eight audio layers with the spk token (codebook " +
                     std::to_string(q) + " differs)");
            }
        }
    } else if (!ex.speaker_vector.empty()) {
        fail("speaker: speaker vector present without a spk position");
    }

    // placeholder spans
    std::vector<size_t> order(ex.spans.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return ex.spans[x].start < ex.spans[y].start; });
    for (size_t i = 0; i < order.size(); ++i) {
        const PlaceholderSpan & s = ex.spans[order[i]];
        if (s.start < 0 || s.length <= 0 || s.start + s.length > a_s) {
            fail("span[" + std::to_string(order[i]) + "]: does not fit inside the prompt");
            continue;
        }
        if (i > 0) {
            const PlaceholderSpan & prev = ex.spans[order[i - 1]];
            if (prev.start + prev.length > s.start) {
                fail("span[" + std::to_string(order[i]) + "]: overlaps the previous span");
            }
        }
        int64_t want = s.modality == Modality::audio ? cfg.audio_placeholder_id : cfg.image_placeholder_id;
        for (int64_t p = s.start; p < s.start + s.length; ++p) {
            if (ex.text_tokens[static_cast<size_t>(p)] != want) {
                fail("span[" + std::to_string(order[i]) + "]: position " + std::to_string(p) +
                     " does not hold the " + modality_name(s.modality) + " placeholder id");
            }
        }
    }
    return v;
}

// --------------------------------------------------------------------------
// JSON round trip
// --------------------------------------------------------------------------

std::string example_to_json(const OmniExample & ex) {
    nlohmann::json j;
    j["text_tokens"] = ex.text_tokens;
    j["text_labels"] = ex.text_labels;
    j["audio_streams"] = ex.audio_streams;
    j["audio_labels"] = ex.audio_labels;
    j["assistant_start"] = ex.assistant_start;
    j["spk_position"] = ex.spk_position;
    j["ref_start"] = ex.ref_start;
    j["ref_length"] = ex.ref_length;
    j["speaker_vector"] = ex.speaker_vector;
    nlohmann::json spans = nlohmann::json::array();
    for (const PlaceholderSpan & s : ex.spans) {
        spans.push_back({{"modality", s.modality == Modality::audio ? "audio" : "vision"},
                         {"start", s.start},
                         {"length", s.length}});
    }
    j["spans"] = spans;
    return j.dump();
}

OmniExample example_from_json(const std::string & text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception & e) {
        throw DataError(std::string("example: bad json: ") + e.what());
    }
    OmniExample ex;
    try {
        ex.text_tokens = j.at("text_tokens").get<std::vector<int64_t>>();
        ex.text_labels = j.at("text_labels").get<std::vector<int64_t>>();
        ex.audio_streams = j.at("audio_streams").get<std::vector<std::vector<int64_t>>>();
        ex.audio_labels = j.at("audio_labels").get<std::vector<std::vector<int64_t>>>();
        ex.assistant_start = j.at("assistant_start").get<int64_t>();
        ex.spk_position = j.at("spk_position").get<int64_t>();
        ex.ref_start = j.at("ref_start").get<int64_t>();
        ex.ref_length = j.at("ref_length").get<int64_t>();
        ex.speaker_vector = j.at("speaker_vector").get<std::vector<double>>();
        for (const auto & s : j.at("spans")) {
            PlaceholderSpan span;
            span.modality = s.at("modality").get<std::string>() == "audio" ? Modality::audio : Modality::vision;
            span.start = s.at("start").get<int64_t>();
            span.length = s.at("length").get<int64_t>();
            ex.spans.push_back(span);
        }
    } catch (const nlohmann::json::exception & e) {
        throw DataError(std::string("example: missing or mistyped field: ") + e.what());
    }
    return ex;
}

} // namespace omni
