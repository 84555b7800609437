#pragma once

#include <string>
#include <vector>

#include "omni/data_io.hpp"
#include "omni/model.hpp"

namespace omni {

enum class EditUnit { character, word };

// Unit-cost Levenshtein distance (substitution / insertion / deletion).
int64_t levenshtein(const std::vector<int64_t> & a, const std::vector<int64_t> & b);
int64_t levenshtein(const std::vector<std::string> & a, const std::vector<std::string> & b);

// distance / reference length; may exceed 1. Empty reference -> DataError.
double edit_distance_rate(const std::vector<int64_t> & hypothesis, const std::vector<int64_t> & reference);
double edit_distance_rate(const std::string & hypothesis, const std::string & reference, EditUnit unit);

// u.v / (|u||v|); zero vectors -> DataError.
double cosine_similarity(const std::vector<double> & u, const std::vector<double> & v);

struct ConsistencyOptions {
    int64_t max_steps = 48;
    int64_t max_examples = -1;  // -1 = every record
    // length buckets, by reference token count
    int64_t bucket_short = 15;
    int64_t bucket_mid = 30;
    int64_t bucket_long = 60;
};

struct ConsistencyExampleResult {
    double cer = 0.0;
    std::vector<int64_t> transcript;
    std::vector<int64_t> reference;  // the model's own text stream
    bool empty_generation = false;
    int bucket = 0;  // 0 short, 1 mid, 2 long
};

struct ConsistencyReport {
    std::vector<ConsistencyExampleResult> examples;
    double overall_cer = 0.0;            // per-example mean
    double bucket_cer[3] = {0, 0, 0};
    int64_t bucket_count[3] = {0, 0, 0};

    std::string to_json() const;
    std::string render_table() const;
};

// Streams each prompt greedily, inverts the completed frames through the
// oracle codec, and scores the transcript against the model's own generated
// text (not the dataset's reference response).
ConsistencyReport consistency_eval(const OmniModel & model, const std::vector<DatasetRecord> & records,
                                   const OracleTaskSpec & spec, const ConsistencyOptions & opt = {});

// Harness self-test: the identity transcription path (reference fed straight
// through as the transcript) must always score CER 0.
double consistency_identity_self_test(const std::vector<std::vector<int64_t>> & references);

struct SpeakerRow {
    std::string name;
    double mean_cos = 0.0;
    int64_t count = 0;
    bool seen = false;
};

struct SimilarityReport {
    std::vector<SpeakerRow> rows;
    double seen_mean = 0.0;
    double unseen_mean = 0.0;
    double overall_mean = 0.0;

    std::string to_json() const;
    std::string render_table() const;
};

// Cosine similarity of each record's conditioning vector against its
// speaker's canonical embedding, split by a seen-name list.
SimilarityReport speaker_similarity_eval(const std::vector<DatasetRecord> & records,
                                         const std::vector<std::string> & seen_names);

} // namespace omni
