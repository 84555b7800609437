#include "omni/data_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numeric>

#include <json.hpp>

#include "omni/rng.hpp"

namespace omni {

static constexpr char    kMagic[4]   = {'O', 'M', 'D', 'R'};
static constexpr int64_t kSpeakerDim = 192;

// --------------------------------------------------------------------------
// Oracle task
// --------------------------------------------------------------------------

static int64_t gcd64(int64_t a, int64_t b) { return b == 0 ? a : gcd64(b, a % b); }

// Modular inverse by extended Euclid; requires gcd(a, m) == 1.
static int64_t mod_inverse(int64_t a, int64_t m) {
    int64_t t = 0, newt = 1, r = m, newr = a % m;
    while (newr != 0) {
        int64_t qout = r / newr;
        int64_t tmp = t - qout * newt;
        t = newt; newt = tmp;
        tmp = r - qout * newr;
        r = newr; newr = tmp;
    }
    if (t < 0) t += m;
    return t;
}

void OracleTaskSpec::validate() const {
    if (mult.empty() || mult.size() != offs.size()) {
        throw DataError("oracle spec: mult/offs must be non-empty and the same length");
    }
    if (codebook_size < 2) throw DataError("oracle spec: codebook_size must be >= 2");
    if (text_vocab < 2 || text_vocab > codebook_size) {
        throw DataError("oracle spec: text_vocab must be in [2, codebook_size] so the mapping inverts");
    }
    for (size_t q = 0; q < mult.size(); ++q) {
        int64_t a = mult[q];
        if (a <= 0 || a >= codebook_size) {
            throw DataError("oracle spec: mult[" + std::to_string(q) + "] out of range");
        }
        if (gcd64(a, codebook_size) != 1) {
            throw DataError("oracle spec: mult[" + std::to_string(q) + "]=" + std::to_string(a) +
                            " is not coprime with codebook size " + std::to_string(codebook_size));
        }
        if (offs[q] < 0 || offs[q] >= codebook_size) {
            throw DataError("oracle spec: offs[" + std::to_string(q) + "] out of range");
        }
    }
}

OracleTaskSpec OracleTaskSpec::derive(const ModelConfig & cfg, uint64_t seed) {
    OracleTaskSpec s;
    s.text_vocab = cfg.text_vocab;
    s.codebook_size = cfg.codebook_size;
    Rng rng(mix_seed(seed, 0x0C0DE));
    for (int64_t q = 0; q < cfg.codebook_count; ++q) {
        int64_t a = 0;
        do {
            a = 1 + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(cfg.codebook_size - 1)));
        } while (gcd64(a, cfg.codebook_size) != 1);
        s.mult.push_back(a);
        s.offs.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(cfg.codebook_size))));
    }
    s.validate();
    return s;
}

CodeGrid oracle_codes_for(const std::vector<int64_t> & tokens, const OracleTaskSpec & spec) {
    spec.validate();
    int64_t Q = static_cast<int64_t>(spec.mult.size());
    CodeGrid grid(Q, static_cast<int64_t>(tokens.size()));
    for (int64_t f = 0; f < grid.frames; ++f) {
        int64_t t = tokens[static_cast<size_t>(f)];
        if (t < 0 || t >= spec.text_vocab) {
            throw DataError("oracle: token " + std::to_string(t) + " outside the oracle vocab");
        }
        for (int64_t q = 0; q < Q; ++q) {
            grid.set(q, f, (spec.mult[static_cast<size_t>(q)] * t + spec.offs[static_cast<size_t>(q)]) %
                               spec.codebook_size);
        }
    }
    return grid;
}

TranscribeResult oracle_transcribe(const CodeGrid & grid, const OracleTaskSpec & spec) {
    spec.validate();
    int64_t Q = std::min<int64_t>(grid.codebooks, static_cast<int64_t>(spec.mult.size()));
    std::vector<int64_t> inv(static_cast<size_t>(Q));
    for (int64_t q = 0; q < Q; ++q) {
        inv[static_cast<size_t>(q)] = mod_inverse(spec.mult[static_cast<size_t>(q)], spec.codebook_size);
    }
    TranscribeResult res;
    if (grid.frames == 0 || Q == 0) return res;
    for (int64_t f = 0; f < grid.frames; ++f) {
        // one token vote per codebook; out-of-range codes vote "invalid"
        std::vector<std::pair<int64_t, int>> votes;
        for (int64_t q = 0; q < Q; ++q) {
            int64_t c = grid.at(q, f);
            int64_t t = -1;
            if (c >= 0 && c < spec.codebook_size) {
                int64_t d = (c - spec.offs[static_cast<size_t>(q)]) % spec.codebook_size;
                if (d < 0) d += spec.codebook_size;
                t = (inv[static_cast<size_t>(q)] * d) % spec.codebook_size;
            }
            bool found = false;
            for (auto & [tok, n] : votes) {
                if (tok == t) { ++n; found = true; break; }
            }
            if (!found) votes.emplace_back(t, 1);
        }
        int64_t winner = -1;
        int best = 0;
        for (auto & [tok, n] : votes) {
            if (n > best || (n == best && tok < winner)) {
                winner = tok;
                best = n;
            }
        }
        res.tokens.push_back(winner);
        res.confidence += static_cast<double>(best) / static_cast<double>(Q);
    }
    res.confidence /= static_cast<double>(grid.frames);
    return res;
}

std::vector<double> speaker_embedding(const std::string & name, int64_t dim) {
    Rng rng(mix_seed(fnv1a64(name.data(), name.size()), 0x59EAC3ULL));
    std::vector<double> v(static_cast<size_t>(dim));
    double norm = 0.0;
    for (double & x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double & x : v) x = static_cast<double>(static_cast<float>(x / norm));
    return v;
}

// --------------------------------------------------------------------------
// Binary record file
// --------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(FILE * f) const { if (f) std::fclose(f); }
};
using File = std::unique_ptr<FILE, FileCloser>;

struct Writer {
    FILE * f;
    void u8(uint8_t v) { std::fwrite(&v, 1, 1, f); }
    void u32(uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        std::fwrite(b, 1, 4, f);
    }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const void * p, size_t n) { std::fwrite(p, 1, n, f); }
};

struct Reader {
    const std::vector<uint8_t> & buf;
    size_t pos = 0;
    size_t record_idx = 0;

    [[noreturn]] void fail(const std::string & what) {
        throw DataError("dataset: truncated or malformed record " + std::to_string(record_idx) +
                        " (" + what + ")");
    }
    uint8_t u8() {
        if (pos + 1 > buf.size()) fail("u8");
        return buf[pos++];
    }
    uint32_t u32() {
        if (pos + 4 > buf.size()) fail("u32");
        uint32_t v = static_cast<uint32_t>(buf[pos]) | static_cast<uint32_t>(buf[pos + 1]) << 8 |
                     static_cast<uint32_t>(buf[pos + 2]) << 16 | static_cast<uint32_t>(buf[pos + 3]) << 24;
        pos += 4;
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::vector<uint8_t> bytes(size_t n) {
        if (pos + n > buf.size()) fail("bytes");
        std::vector<uint8_t> out(buf.begin() + static_cast<long>(pos), buf.begin() + static_cast<long>(pos + n));
        pos += n;
        return out;
    }
};

void write_grid(Writer & w, const CodeGrid & g) {
    w.u32(static_cast<uint32_t>(g.codebooks));
    w.u32(static_cast<uint32_t>(g.frames));
    for (int64_t c : g.codes) w.u32(static_cast<uint32_t>(c));
}

CodeGrid read_grid(Reader & r, int64_t codebook_size, const char * what) {
    CodeGrid g;
    g.codebooks = r.u32();
    g.frames = r.u32();
    if (g.codebooks < 0 || g.frames < 0 || g.codebooks > 1024 || g.frames > (1 << 24)) r.fail(what);
    g.codes.resize(static_cast<size_t>(g.codebooks * g.frames));
    for (int64_t & c : g.codes) {
        c = static_cast<int64_t>(r.u32());
        if (c < 0 || c >= codebook_size) {
            throw DataError("dataset: record " + std::to_string(r.record_idx) + " has out-of-range " +
                            what + " code " + std::to_string(c));
        }
    }
    return g;
}

nlohmann::json header_to_json(const DatasetHeader & h) {
    nlohmann::json j;
    j["version"] = h.version;
    j["text_vocab"] = h.text_vocab;
    j["codebook_size"] = h.codebook_size;
    j["codebook_count"] = h.codebook_count;
    if (h.oracle.has_value()) {
        j["oracle"] = {{"mult", h.oracle->mult},
                       {"offs", h.oracle->offs},
                       {"text_vocab", h.oracle->text_vocab},
                       {"codebook_size", h.oracle->codebook_size}};
    } else {
        j["oracle"] = nullptr;
    }
    return j;
}

DatasetHeader header_from_json(const nlohmann::json & j) {
    DatasetHeader h;
    h.version = j.at("version").get<uint32_t>();
    h.text_vocab = j.at("text_vocab").get<int64_t>();
    h.codebook_size = j.at("codebook_size").get<int64_t>();
    h.codebook_count = j.at("codebook_count").get<int64_t>();
    if (!j.at("oracle").is_null()) {
        OracleTaskSpec s;
        s.mult = j.at("oracle").at("mult").get<std::vector<int64_t>>();
        s.offs = j.at("oracle").at("offs").get<std::vector<int64_t>>();
        s.text_vocab = j.at("oracle").at("text_vocab").get<int64_t>();
        s.codebook_size = j.at("oracle").at("codebook_size").get<int64_t>();
        h.oracle = s;
    }
    return h;
}

} // namespace

void write_records(const std::string & path, const DatasetHeader & header,
                   const std::vector<DatasetRecord> & records) {
    for (size_t i = 0; i < records.size(); ++i) {
        const DatasetRecord & rec = records[i];
        if (!rec.speaker_vector.empty() && static_cast<int64_t>(rec.speaker_vector.size()) != kSpeakerDim) {
            throw DataError("dataset: record " + std::to_string(i) + " speaker vector has length " +
                            std::to_string(rec.speaker_vector.size()) + ", format requires exactly " +
                            std::to_string(kSpeakerDim));
        }
    }
    File f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("dataset: cannot open '" + path + "' for writing");
    Writer w{f.get()};
    w.bytes(kMagic, 4);
    std::string hj = header_to_json(header).dump();
    w.u32(static_cast<uint32_t>(hj.size()));
    w.bytes(hj.data(), hj.size());
    w.u32(static_cast<uint32_t>(records.size()));
    for (const DatasetRecord & rec : records) {
        w.u32(static_cast<uint32_t>(rec.conversation.size()));
        for (const Turn & t : rec.conversation) {
            w.u8(t.role == Role::user ? 0 : 1);
            w.u32(static_cast<uint32_t>(t.tokens.size()));
            for (int64_t id : t.tokens) w.u32(static_cast<uint32_t>(id));
        }
        w.u32(static_cast<uint32_t>(rec.span_contents.size()));
        for (const SpanContent & s : rec.span_contents) {
            w.u8(s.modality == Modality::audio ? 0 : 1);
            w.u32(static_cast<uint32_t>(s.bytes.size()));
            w.bytes(s.bytes.data(), s.bytes.size());
        }
        write_grid(w, rec.response_codes);
        w.u8(rec.ref_codes.has_value() ? 1 : 0);
        if (rec.ref_codes.has_value()) write_grid(w, *rec.ref_codes);
        w.u32(static_cast<uint32_t>(rec.speaker_vector.size()));
        for (double v : rec.speaker_vector) w.f32(static_cast<float>(v));
        w.u32(static_cast<uint32_t>(rec.speaker_name.size()));
        w.bytes(rec.speaker_name.data(), rec.speaker_name.size());
    }
    if (std::ferror(f.get())) throw DataError("dataset: write error on '" + path + "'");
}

Dataset read_records(const std::string & path) {
    File f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("dataset: cannot open '" + path + "'");
    std::fseek(f.get(), 0, SEEK_END);
    long size = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(size));
    if (size > 0 && std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size()) {
        throw DataError("dataset: read error on '" + path + "'");
    }
    if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw DataError("dataset: '" + path + "' is not a record file (bad magic)");
    }
    Reader r{buf, 4, 0};
    uint32_t hlen = r.u32();
    std::vector<uint8_t> hbytes = r.bytes(hlen);
    Dataset ds;
    try {
        ds.header = header_from_json(nlohmann::json::parse(hbytes.begin(), hbytes.end()));
    } catch (const nlohmann::json::exception & e) {
        throw DataError(std::string("dataset: bad header json: ") + e.what());
    }
    if (ds.header.version != 1) {
        throw DataError("dataset: version " + std::to_string(ds.header.version) +
                        " unsupported (expected 1)");
    }
    uint32_t count = r.u32();
    ds.records.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        r.record_idx = i;
        DatasetRecord rec;
        uint32_t n_turns = r.u32();
        for (uint32_t t = 0; t < n_turns; ++t) {
            Turn turn;
            turn.role = r.u8() == 0 ? Role::user : Role::assistant;
            uint32_t n_tok = r.u32();
            for (uint32_t k = 0; k < n_tok; ++k) {
                int64_t id = static_cast<int64_t>(r.u32());
                if (id < 0 || id >= ds.header.text_vocab) {
                    throw DataError("dataset: record " + std::to_string(i) + " token " +
                                    std::to_string(id) + " out of range");
                }
                turn.tokens.push_back(id);
            }
            rec.conversation.push_back(std::move(turn));
        }
        uint32_t n_spans = r.u32();
        for (uint32_t s = 0; s < n_spans; ++s) {
            SpanContent sc;
            sc.modality = r.u8() == 0 ? Modality::audio : Modality::vision;
            uint32_t nb = r.u32();
            sc.bytes = r.bytes(nb);
            rec.span_contents.push_back(std::move(sc));
        }
        rec.response_codes = read_grid(r, ds.header.codebook_size, "response");
        if (r.u8() != 0) rec.ref_codes = read_grid(r, ds.header.codebook_size, "reference");
        uint32_t spk_len = r.u32();
        if (spk_len != 0 && spk_len != kSpeakerDim) {
            throw DataError("dataset: record " + std::to_string(i) + " speaker vector has length " +
                            std::to_string(spk_len) + ", format requires exactly " +
                            std::to_string(kSpeakerDim));
        }
        for (uint32_t k = 0; k < spk_len; ++k) rec.speaker_vector.push_back(r.f32());
        uint32_t name_len = r.u32();
        std::vector<uint8_t> nb = r.bytes(name_len);
        rec.speaker_name.assign(nb.begin(), nb.end());
        ds.records.push_back(std::move(rec));
    }
    if (r.pos != buf.size()) {
        throw DataError("dataset: trailing bytes after record " + std::to_string(count - 1));
    }
    return ds;
}

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed, uint64_t epoch) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x50FF1EULL + epoch));
    for (size_t i = n; i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

// --------------------------------------------------------------------------
// Synthetic dataset generator
// --------------------------------------------------------------------------

std::vector<DatasetRecord> generate_oracle_dataset(const OracleTaskSpec & spec, const ModelConfig & cfg,
                                                   uint64_t seed, const GenOptions & opt) {
    spec.validate();
    if (static_cast<int64_t>(spec.mult.size()) != cfg.codebook_count) {
        throw DataError("oracle: spec covers " + std::to_string(spec.mult.size()) +
                        " codebooks but config has " + std::to_string(cfg.codebook_count));
    }
    const int64_t first_regular = cfg.image_placeholder_id + 1;
    if (cfg.text_vocab <= first_regular + 1) {
        throw DataError("oracle: text vocab leaves no regular token range");
    }
    if (opt.prompt_len_min < 1 || opt.prompt_len_max < opt.prompt_len_min ||
        opt.response_len_min < 1 || opt.response_len_max < opt.response_len_min) {
        throw UsageError("oracle: prompt/response length ranges must be non-empty and >= 1");
    }
    if (opt.speaker_fraction > 0.0 && opt.speaker_names.empty()) {
        throw UsageError("oracle: speaker_fraction > 0 requires speaker names");
    }
    StubConfig stub;
    std::vector<DatasetRecord> records;
    records.reserve(static_cast<size_t>(opt.count));
    for (int64_t i = 0; i < opt.count; ++i) {
        Rng rng(mix_seed(seed, 0xDA7A + static_cast<uint64_t>(i)));
        DatasetRecord rec;

        auto rand_token = [&]() {
            return first_regular +
                   static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(cfg.text_vocab - first_regular)));
        };
        auto rand_len = [&](int64_t lo, int64_t hi) {
            return lo + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(hi - lo + 1)));
        };

        std::vector<int64_t> prompt = {cfg.text_bos_id};
        if (rng.uniform() < opt.vision_fraction) {
            for (int64_t k = 0; k < cfg.image_token_count; ++k) prompt.push_back(cfg.image_placeholder_id);
            SpanContent sc;
            sc.modality = Modality::vision;
            size_t nbytes = 64 + rng.uniform_int(192);
            for (size_t k = 0; k < nbytes; ++k) sc.bytes.push_back(static_cast<uint8_t>(rng.uniform_int(256)));
            rec.span_contents.push_back(std::move(sc));
        }
        if (rng.uniform() < opt.audio_span_fraction) {
            int64_t feats = 1 + static_cast<int64_t>(rng.uniform_int(3));
            for (int64_t k = 0; k < feats; ++k) prompt.push_back(cfg.audio_placeholder_id);
            SpanContent sc;
            sc.modality = Modality::audio;
            size_t nbytes = static_cast<size_t>(feats) * static_cast<size_t>(stub.audio_bytes_per_feature);
            for (size_t k = 0; k < nbytes; ++k) sc.bytes.push_back(static_cast<uint8_t>(rng.uniform_int(256)));
            rec.span_contents.push_back(std::move(sc));
        }
        int64_t n_prompt = rand_len(opt.prompt_len_min, opt.prompt_len_max);
        for (int64_t k = 0; k < n_prompt; ++k) prompt.push_back(rand_token());

        int64_t n_resp = rand_len(opt.response_len_min, opt.response_len_max);
        std::vector<int64_t> response;
        for (int64_t k = 0; k < n_resp; ++k) response.push_back(rand_token());

        rec.conversation.push_back({Role::user, prompt});
        rec.conversation.push_back({Role::assistant, response});
        rec.response_codes = oracle_codes_for(response, spec);

        int64_t a_s = static_cast<int64_t>(prompt.size());
        bool want_spk = rng.uniform() < opt.speaker_fraction;
        bool want_ref = want_spk || rng.uniform() < opt.ref_fraction;
        if (want_ref) {
            int64_t budget = a_s - (want_spk ? 1 : 0);
            int64_t ref_len = std::min<int64_t>(budget, 1 + static_cast<int64_t>(rng.uniform_int(4)));
            if (ref_len > 0) {
                std::vector<int64_t> ref_tokens;
                for (int64_t k = 0; k < ref_len; ++k) ref_tokens.push_back(rand_token());
                rec.ref_codes = oracle_codes_for(ref_tokens, spec);
            }
        }
        if (want_spk && a_s >= 1 + (rec.ref_codes ? rec.ref_codes->frames : 0)) {
            rec.speaker_name = opt.speaker_names[rng.uniform_int(opt.speaker_names.size())];
            std::vector<double> v = speaker_embedding(rec.speaker_name, kSpeakerDim);
            if (opt.speaker_jitter > 0.0) {
                // jitter is the noise-to-signal norm ratio, so the expected
                // cosine to the canonical vector is ~ 1/sqrt(1 + jitter^2)
                double per_dim = opt.speaker_jitter / std::sqrt(static_cast<double>(kSpeakerDim));
                double norm = 0.0;
                for (double & x : v) {
                    x += per_dim * rng.normal();
                    norm += x * x;
                }
                norm = std::sqrt(norm);
                for (double & x : v) x = static_cast<double>(static_cast<float>(x / norm));
            }
            rec.speaker_vector = std::move(v);
        }
        records.push_back(std::move(rec));
    }
    return records;
}

// --------------------------------------------------------------------------
// Record -> example assembly
// --------------------------------------------------------------------------

AssembledExample assemble_record(const DatasetRecord & rec, const ModelConfig & cfg, Dtype dt,
                                 const StubConfig & stub) {
    if (rec.conversation.empty()) throw DataError("assemble: record has no conversation turns");
    BuildInputs in;
    size_t assistant_turns = 0;
    for (const Turn & t : rec.conversation) {
        if (t.role == Role::assistant) {
            ++assistant_turns;
            in.response_tokens = t.tokens;
        } else {
            if (assistant_turns > 0) {
                throw DataError("assemble: user turn after the assistant response is unsupported");
            }
            in.prompt_tokens.insert(in.prompt_tokens.end(), t.tokens.begin(), t.tokens.end());
        }
    }
    if (assistant_turns != 1) {
        throw DataError("assemble: exactly one assistant turn per record is supported, got " +
                        std::to_string(assistant_turns));
    }
    if (in.prompt_tokens.empty()) throw DataError("assemble: record has an empty prompt");

    // Recover placeholder spans from the prompt token runs.
    for (int64_t p = 0; p < static_cast<int64_t>(in.prompt_tokens.size());) {
        int64_t id = in.prompt_tokens[static_cast<size_t>(p)];
        if (id == cfg.audio_placeholder_id || id == cfg.image_placeholder_id) {
            int64_t end = p;
            while (end < static_cast<int64_t>(in.prompt_tokens.size()) &&
                   in.prompt_tokens[static_cast<size_t>(end)] == id) {
                ++end;
            }
            PlaceholderSpan s;
            s.modality = id == cfg.audio_placeholder_id ? Modality::audio : Modality::vision;
            s.start = p;
            s.length = end - p;
            in.spans.push_back(s);
            p = end;
        } else {
            ++p;
        }
    }
    if (in.spans.size() != rec.span_contents.size()) {
        throw DataError("assemble: prompt has " + std::to_string(in.spans.size()) +
                        " placeholder spans but the record carries " +
                        std::to_string(rec.span_contents.size()) + " content blocks");
    }

    in.response_codes = rec.response_codes;
    in.ref_codes = rec.ref_codes;
    in.speaker_vector = rec.speaker_vector;

    AssembledExample out;
    out.ex = build_example(in, cfg);
    for (size_t s = 0; s < in.spans.size(); ++s) {
        if (in.spans[s].modality != rec.span_contents[s].modality) {
            throw DataError("assemble: span " + std::to_string(s) + " modality mismatch");
        }
        Tensor feats = encode_stub(in.spans[s].modality, rec.span_contents[s].bytes, cfg, dt, stub);
        if (feats.rows() != in.spans[s].length) {
            throw DataError("assemble: span " + std::to_string(s) + " expects " +
                            std::to_string(in.spans[s].length) + " features but the encoder produced " +
                            std::to_string(feats.rows()));
        }
        out.span_features.push_back(feats);
    }
    return out;
}

std::string record_to_json(const DatasetRecord & rec) {
    nlohmann::json j;
    nlohmann::json turns = nlohmann::json::array();
    for (const Turn & t : rec.conversation) {
        turns.push_back({{"role", t.role == Role::user ? "user" : "assistant"}, {"tokens", t.tokens}});
    }
    j["conversation"] = turns;
    nlohmann::json spans = nlohmann::json::array();
    for (const SpanContent & s : rec.span_contents) {
        spans.push_back({{"modality", s.modality == Modality::audio ? "audio" : "vision"},
                         {"bytes", s.bytes.size()}});
    }
    j["span_contents"] = spans;
    j["response_codes"] = {{"codebooks", rec.response_codes.codebooks},
                           {"frames", rec.response_codes.frames},
                           {"codes", rec.response_codes.codes}};
    if (rec.ref_codes.has_value()) {
        j["ref_codes"] = {{"codebooks", rec.ref_codes->codebooks},
                          {"frames", rec.ref_codes->frames},
                          {"codes", rec.ref_codes->codes}};
    } else {
        j["ref_codes"] = nullptr;
    }
    j["speaker_name"] = rec.speaker_name;
    j["speaker_vector_len"] = rec.speaker_vector.size();
    return j.dump();
}

} // namespace omni
