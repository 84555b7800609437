#include "omni/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "omni/streaming.hpp"

namespace omni {

template <typename T>
static int64_t lev_impl(const std::vector<T> & a, const std::vector<T> & b) {
    size_t n = a.size(), m = b.size();
    std::vector<int64_t> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int64_t>(i);
        for (size_t j = 1; j <= m; ++j) {
            int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

int64_t levenshtein(const std::vector<int64_t> & a, const std::vector<int64_t> & b) { return lev_impl(a, b); }
int64_t levenshtein(const std::vector<std::string> & a, const std::vector<std::string> & b) { return lev_impl(a, b); }

double edit_distance_rate(const std::vector<int64_t> & hypothesis, const std::vector<int64_t> & reference) {
    if (reference.empty()) throw DataError("edit_distance_rate: empty reference (rate undefined)");
    return static_cast<double>(levenshtein(hypothesis, reference)) / static_cast<double>(reference.size());
}

static std::vector<std::string> split_words(const std::string & s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

double edit_distance_rate(const std::string & hypothesis, const std::string & reference, EditUnit unit) {
    if (unit == EditUnit::character) {
        if (reference.empty()) throw DataError("edit_distance_rate: empty reference (rate undefined)");
        std::vector<int64_t> h(hypothesis.begin(), hypothesis.end());
        std::vector<int64_t> r(reference.begin(), reference.end());
        return static_cast<double>(levenshtein(h, r)) / static_cast<double>(r.size());
    }
    std::vector<std::string> h = split_words(hypothesis);
    std::vector<std::string> r = split_words(reference);
    if (r.empty()) throw DataError("edit_distance_rate: empty reference (rate undefined)");
    return static_cast<double>(levenshtein(h, r)) / static_cast<double>(r.size());
}

double cosine_similarity(const std::vector<double> & u, const std::vector<double> & v) {
    if (u.size() != v.size()) {
        throw ShapeError("cosine_similarity: length mismatch " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
    }
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        uu += u[i] * u[i];
        vv += v[i] * v[i];
        uv += u[i] * v[i];
    }
    if (uu == 0.0 || vv == 0.0) throw DataError("cosine_similarity: zero vector");
    // sqrt(uu*vv) keeps the u==v and u==-v identities exact in binary64
    return uv / std::sqrt(uu * vv);
}

ConsistencyReport consistency_eval(const OmniModel & model, const std::vector<DatasetRecord> & records,
                                   const OracleTaskSpec & spec, const ConsistencyOptions & opt) {
    ConsistencyReport report;
    int64_t n = opt.max_examples < 0 ? static_cast<int64_t>(records.size())
                                     : std::min<int64_t>(opt.max_examples, static_cast<int64_t>(records.size()));
    for (int64_t i = 0; i < n; ++i) {
        SessionPrompt prompt = SessionPrompt::from_record(records[static_cast<size_t>(i)], model.cfg, model.dtype);
        SamplingConfig greedy;
        GenerationSession session(model, prompt, greedy, opt.max_steps);
        while (session.status() == SessionStatus::running) session.step();

        ConsistencyExampleResult ex;
        // the model's own text, minus the terminating eos
        for (int64_t id : session.text_ids()) {
            if (id == model.cfg.text_eos_id) break;
            ex.reference.push_back(id);
        }
        ex.transcript = oracle_transcribe(session.completed_grid(), spec).tokens;
        if (ex.reference.empty()) {
            ex.empty_generation = true;
            ex.cer = 1.0;
        } else {
            ex.cer = edit_distance_rate(ex.transcript, ex.reference);
        }
        int64_t len = static_cast<int64_t>(ex.reference.size());
        ex.bucket = len <= opt.bucket_short ? 0 : (len <= opt.bucket_mid ? 1 : 2);
        report.examples.push_back(std::move(ex));
    }
    double sum = 0.0;
    double bucket_sum[3] = {0, 0, 0};
    for (const auto & ex : report.examples) {
        sum += ex.cer;
        bucket_sum[ex.bucket] += ex.cer;
        report.bucket_count[ex.bucket] += 1;
    }
    report.overall_cer = report.examples.empty() ? 0.0 : sum / static_cast<double>(report.examples.size());
    for (int bkt = 0; bkt < 3; ++bkt) {
        report.bucket_cer[bkt] = report.bucket_count[bkt] > 0
                                     ? bucket_sum[bkt] / static_cast<double>(report.bucket_count[bkt])
                                     : 0.0;
    }
    return report;
}

double consistency_identity_self_test(const std::vector<std::vector<int64_t>> & references) {
    double sum = 0.0;
    int64_t n = 0;
    for (const auto & ref : references) {
        if (ref.empty()) continue;
        sum += edit_distance_rate(ref, ref);
        ++n;
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

std::string ConsistencyReport::to_json() const {
    nlohmann::json j;
    j["overall_cer"] = overall_cer;
    j["buckets"] = {{"short", {{"cer", bucket_cer[0]}, {"count", bucket_count[0]}}},
                    {"mid", {{"cer", bucket_cer[1]}, {"count", bucket_count[1]}}},
                    {"long", {{"cer", bucket_cer[2]}, {"count", bucket_count[2]}}}};
    nlohmann::json exs = nlohmann::json::array();
    for (const auto & ex : examples) {
        exs.push_back({{"cer", ex.cer},
                       {"transcript", ex.transcript},
                       {"reference", ex.reference},
                       {"empty_generation", ex.empty_generation},
                       {"bucket", ex.bucket}});
    }
    j["examples"] = exs;
    return j.dump(2);
}

std::string ConsistencyReport::render_table() const {
    char buf[160];
    std::string out;
    out += "bucket            n     avg CER\n";
    const char * names[3] = {"short (<=15)", "mid (16-30)", "long (31-60)"};
    for (int bkt = 0; bkt < 3; ++bkt) {
        std::snprintf(buf, sizeof(buf), "%-14s %5lld    %8.4f\n", names[bkt],
                      static_cast<long long>(bucket_count[bkt]), bucket_cer[bkt]);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-14s %5zu    %8.4f\n", "overall", examples.size(), overall_cer);
    out += buf;
    return out;
}

SimilarityReport speaker_similarity_eval(const std::vector<DatasetRecord> & records,
                                         const std::vector<std::string> & seen_names) {
    std::map<std::string, std::pair<double, int64_t>> by_name;
    for (const DatasetRecord & rec : records) {
        if (rec.speaker_vector.empty() || rec.speaker_name.empty()) continue;
        std::vector<double> canonical = speaker_embedding(rec.speaker_name,
                                                          static_cast<int64_t>(rec.speaker_vector.size()));
        double cs = cosine_similarity(rec.speaker_vector, canonical);
        auto & [sum, cnt] = by_name[rec.speaker_name];
        sum += cs;
        cnt += 1;
    }
    SimilarityReport rep;
    double seen_sum = 0.0, unseen_sum = 0.0, all_sum = 0.0;
    int64_t seen_n = 0, unseen_n = 0, all_n = 0;
    for (auto & [name, sc] : by_name) {
        SpeakerRow row;
        row.name = name;
        row.count = sc.second;
        row.mean_cos = sc.first / static_cast<double>(sc.second);
        row.seen = std::find(seen_names.begin(), seen_names.end(), name) != seen_names.end();
        (row.seen ? seen_sum : unseen_sum) += sc.first;
        (row.seen ? seen_n : unseen_n) += sc.second;
        all_sum += sc.first;
        all_n += sc.second;
        rep.rows.push_back(std::move(row));
    }
    rep.seen_mean = seen_n > 0 ? seen_sum / static_cast<double>(seen_n) : 0.0;
    rep.unseen_mean = unseen_n > 0 ? unseen_sum / static_cast<double>(unseen_n) : 0.0;
    rep.overall_mean = all_n > 0 ? all_sum / static_cast<double>(all_n) : 0.0;
    return rep;
}

std::string SimilarityReport::to_json() const {
    nlohmann::json j;
    j["seen_mean"] = seen_mean;
    j["unseen_mean"] = unseen_mean;
    j["overall_mean"] = overall_mean;
    nlohmann::json rows_json = nlohmann::json::array();
    for (const SpeakerRow & r : rows) {
        rows_json.push_back({{"speaker", r.name}, {"mean_cos", r.mean_cos}, {"count", r.count}, {"seen", r.seen}});
    }
    j["per_speaker"] = rows_json;
    return j.dump(2);
}

std::string SimilarityReport::render_table() const {
    char buf[160];
    std::string out = "split    speaker          n    mean cos\n";
    for (const SpeakerRow & r : rows) {
        std::snprintf(buf, sizeof(buf), "%-8s %-12s %5lld    %8.4f\n", r.seen ? "seen" : "unseen",
                      r.name.c_str(), static_cast<long long>(r.count), r.mean_cos);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "seen mean %.4f | unseen mean %.4f | overall %.4f\n",
                  seen_mean, unseen_mean, overall_mean);
    out += buf;
    return out;
}

} // namespace omni
