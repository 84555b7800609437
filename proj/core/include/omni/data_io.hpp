#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "omni/sequence.hpp"

namespace omni {

enum class Role { user, assistant };

struct Turn {
    Role role;
    std::vector<int64_t> tokens;
    bool operator==(const Turn &) const = default;
};

// Raw bytes behind one modality placeholder span, in prompt order.
struct SpanContent {
    Modality modality;
    std::vector<uint8_t> bytes;
    bool operator==(const SpanContent &) const = default;
};

// One on-disk training record: conversation, modality inputs, codec targets,
// optional reference-code prompt and speaker conditioning.
struct DatasetRecord {
    std::vector<Turn> conversation;
    std::vector<SpanContent> span_contents;
    CodeGrid response_codes;
    std::optional<CodeGrid> ref_codes;
    std::vector<double> speaker_vector;  // empty or exactly 192
    std::string speaker_name;
    bool operator==(const DatasetRecord &) const = default;
};

// Synthetic, exactly invertible text->code mapping: the code of codebook q
// at frame f is (mult[q] * token[f] + offs[q]) mod codebook_size. Every
// mult[q] must be coprime with codebook_size so the mapping inverts.
struct OracleTaskSpec {
    std::vector<int64_t> mult;
    std::vector<int64_t> offs;
    int64_t text_vocab    = 64;
    int64_t codebook_size = 64;

    void validate() const;
    static OracleTaskSpec derive(const ModelConfig & cfg, uint64_t seed);
    bool operator==(const OracleTaskSpec &) const = default;
};

struct DatasetHeader {
    uint32_t version = 1;
    int64_t  text_vocab = 0;
    int64_t  codebook_size = 0;
    int64_t  codebook_count = 0;
    std::optional<OracleTaskSpec> oracle;
};

void write_records(const std::string & path, const DatasetHeader & header,
                   const std::vector<DatasetRecord> & records);

struct Dataset {
    DatasetHeader header;
    std::vector<DatasetRecord> records;
};
Dataset read_records(const std::string & path);

// Deterministic record order for a given epoch (reader-side shuffle).
std::vector<size_t> shuffled_indices(size_t n, uint64_t seed, uint64_t epoch);

struct GenOptions {
    int64_t count            = 256;
    int64_t prompt_len_min   = 2;   // regular tokens after bos
    int64_t prompt_len_max   = 5;
    int64_t response_len_min = 4;
    int64_t response_len_max = 12;
    double  ref_fraction     = 0.0;   // fraction of records carrying reference codes
    double  speaker_fraction = 0.0;   // fraction carrying spk conditioning (implies ref handling)
    double  vision_fraction  = 0.0;   // fraction carrying one image span in the prompt
    double  audio_span_fraction = 0.0; // fraction carrying one input-speech span
    double  speaker_jitter   = 0.3;   // per-record deviation from the canonical speaker vector
    std::vector<std::string> speaker_names = {"ada", "brook", "casey", "dune", "ember"};
};

std::vector<DatasetRecord> generate_oracle_dataset(const OracleTaskSpec & spec, const ModelConfig & cfg,
                                                   uint64_t seed, const GenOptions & opt);

// Forward mapping: response tokens -> code grid.
CodeGrid oracle_codes_for(const std::vector<int64_t> & tokens, const OracleTaskSpec & spec);

// Inverse mapping with a per-frame majority vote across codebooks.
// confidence is the mean fraction of codebooks agreeing with the winner.
struct TranscribeResult {
    std::vector<int64_t> tokens;
    double confidence = 0.0;
};
TranscribeResult oracle_transcribe(const CodeGrid & grid, const OracleTaskSpec & spec);

// Canonical unit-norm speaker embedding for a name (f32-rounded components
// so records round-trip bit-exactly).
std::vector<double> speaker_embedding(const std::string & name, int64_t dim);

// Assembly: record -> nine-stream example plus encoded span features.
struct AssembledExample {
    OmniExample ex;
    std::vector<Tensor> span_features;  // one per placeholder span, encoder output
};
AssembledExample assemble_record(const DatasetRecord & rec, const ModelConfig & cfg, Dtype dt,
                                 const StubConfig & stub = {});

std::string record_to_json(const DatasetRecord & rec);

} // namespace omni
