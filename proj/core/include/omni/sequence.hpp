#pragma once

#include <optional>
#include <string>
#include <vector>

#include "omni/config.hpp"
#include "omni/modality.hpp"

namespace omni {

// Codebook-major matrix of codec codes: codebooks x frames.
struct CodeGrid {
    int64_t codebooks = 0;
    int64_t frames    = 0;
    std::vector<int64_t> codes;  // row-major, codes[q * frames + f]

    CodeGrid() = default;
    CodeGrid(int64_t q, int64_t f, int64_t fill = 0)
        : codebooks(q), frames(f), codes(static_cast<size_t>(q * f), fill) {}

    int64_t at(int64_t q, int64_t f) const { return codes[static_cast<size_t>(q * frames + f)]; }
    void set(int64_t q, int64_t f, int64_t v) { codes[static_cast<size_t>(q * frames + f)] = v; }
    std::vector<int64_t> column(int64_t f) const;
    bool operator==(const CodeGrid &) const = default;
};

// One nine-stream training record: a text stream plus eight aligned audio
// streams, with loss masks, conditioning layout and the stagger applied.
struct OmniExample {
    std::vector<int64_t> text_tokens;
    std::vector<int64_t> text_labels;                 // kIgnoreIndex outside the response
    std::vector<std::vector<int64_t>> audio_streams;  // codebook_count x T
    std::vector<std::vector<int64_t>> audio_labels;   // kIgnoreIndex outside staggered targets
    int64_t assistant_start = 0;
    std::vector<PlaceholderSpan> spans;
    int64_t spk_position = -1;                        // -1 = absent
    int64_t ref_start = -1;
    int64_t ref_length = 0;
    std::vector<double> speaker_vector;               // empty or speaker_dim

    int64_t length() const { return static_cast<int64_t>(text_tokens.size()); }
    bool operator==(const OmniExample &) const = default;
};

// Per-codebook first-label offsets: assistant_start + q' + offset_base.
struct StaggerSchedule {
    int64_t assistant_start = 0;
    std::vector<int64_t> first_label_position;  // strictly increasing by 1
};
StaggerSchedule stagger_schedule(int64_t assistant_start, int64_t codebooks, int64_t offset_base);

struct BuildInputs {
    std::vector<int64_t> prompt_tokens;            // placeholder ids included
    std::vector<int64_t> response_tokens;
    CodeGrid response_codes;
    std::optional<CodeGrid> ref_codes;
    std::vector<double> speaker_vector;            // empty = no speaker conditioning
    std::vector<PlaceholderSpan> spans;            // positions inside the prompt
};

// Assembles a full example: response text labels (tokens + eos), staggered
// audio targets, right-aligned reference codes masked from the loss, the
// speaker-token column, and padding. Throws DataError on layout violations.
OmniExample build_example(const BuildInputs & in, const ModelConfig & cfg);

// Format linter: returns every violated invariant (empty = ok).
std::vector<std::string> validate_example(const OmniExample & ex, const ModelConfig & cfg);

// Inverse of the stagger placement: frame index of a position for one
// codebook, or nullopt when the position precedes that codebook's stream.
std::optional<int64_t> frame_of_position(int64_t position, int64_t codebook,
                                         int64_t assistant_start, int64_t offset_base = 1);

// Canonical serialized form (JSON, bit-exact round trip).
std::string example_to_json(const OmniExample & ex);
OmniExample example_from_json(const std::string & text);

} // namespace omni
