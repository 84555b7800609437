// deskomni: command-line front end for the desk-scale thinker/talker stack.
// Subcommands cover data generation, sequence assembly, training, the
// ablation/sweep harnesses, streaming decode and the evaluation reports.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "omni/gradcheck.hpp"
#include "omni/metrics.hpp"
#include "omni/model.hpp"
#include "omni/rng.hpp"
#include "omni/streaming.hpp"
#include "omni/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

static std::string iso_now() {
    std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

static std::string file_hash_hex(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "missing";
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = omni::fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

struct Manifest {
    std::string command;
    json config = json::object();
    uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string started = iso_now();
};

static void write_manifest(const std::string & dir, Manifest & m) {
    json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["seed"] = m.seed;
    j["inputs"] = m.inputs;
    json outs = json::array();
    for (const std::string & p : m.outputs) {
        outs.push_back({{"path", p}, {"fnv1a64", file_hash_hex(p)}});
    }
    j["outputs"] = outs;
    j["started_at"] = m.started;
    j["finished_at"] = iso_now();
    std::ofstream out(dir + "/manifest.json");
    out << j.dump(2) << "\n";
}

static void ensure_outdir(const std::string & dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw omni::DataError("cannot create output directory '" + dir + "': " + ec.message());
}

static std::vector<int64_t> parse_int_list(const std::string & csv, const char * what) {
    std::vector<int64_t> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) {
                try {
                    out.push_back(std::stoll(cur));
                } catch (...) {
                    throw omni::UsageError(std::string(what) + ": '" + cur + "' is not an integer");
                }
                cur.clear();
            }
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (out.empty()) throw omni::UsageError(std::string(what) + ": empty list");
    return out;
}

static std::vector<std::string> parse_name_list(const std::string & csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    return out;
}

static void write_wav(const std::string & path, const std::vector<double> & samples, int sample_rate) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw omni::DataError("cannot open wav file '" + path + "'");
    auto u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char *>(&v), 4); };
    auto u16 = [&](uint16_t v) { f.write(reinterpret_cast<const char *>(&v), 2); };
    uint32_t data_size = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    u32(36 + data_size);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    u32(16);
    u16(1);  // PCM
    u16(1);  // mono
    u32(static_cast<uint32_t>(sample_rate));
    u32(static_cast<uint32_t>(sample_rate * 2));
    u16(2);
    u16(16);
    f.write("data", 4);
    u32(data_size);
    for (double s : samples) {
        double c = std::max(-1.0, std::min(1.0, s));
        int16_t pcm = static_cast<int16_t>(c * 32767.0);
        f.write(reinterpret_cast<const char *>(&pcm), 2);
    }
}

// ---------------------------------------------------------------------------
// Model flags: built-in full-scale defaults < --toy preset < config file < flags
// ---------------------------------------------------------------------------

struct ModelFlags {
    omni::ModelConfig parsed;  // parse target; merged per-flag in resolve()
    bool toy = false;
    CLI::App * sub = nullptr;
    std::vector<std::pair<std::string, std::function<void(omni::ModelConfig &, const omni::ModelConfig &)>>>
        merges;

    template <typename T>
    void opt(const std::string & name, T omni::ModelConfig::* member, const char * desc) {
        sub->add_option(name, parsed.*member, desc);
        merges.emplace_back(name, [member](omni::ModelConfig & dst, const omni::ModelConfig & src) {
            dst.*member = src.*member;
        });
    }

    void attach(CLI::App * s) {
        sub = s;
        sub->add_flag("--toy", toy, "use the desk-scale toy preset as the base config");
        opt("--layers", &omni::ModelConfig::num_hidden_layers, "thinker block count");
        opt("--hidden", &omni::ModelConfig::hidden_size, "thinker hidden size");
        opt("--q-heads", &omni::ModelConfig::num_query_heads, "query heads");
        opt("--kv-heads", &omni::ModelConfig::num_kv_heads, "key/value heads");
        opt("--text-vocab", &omni::ModelConfig::text_vocab, "text vocabulary size");
        opt("--mlp-intermediate", &omni::ModelConfig::mlp_intermediate, "block MLP width");
        opt("--talker-layers", &omni::ModelConfig::num_talker_hidden_layers, "talker block count");
        opt("--talker-hidden", &omni::ModelConfig::talker_hidden, "talker hidden size");
        opt("--audio-vocab", &omni::ModelConfig::audio_vocab, "audio vocabulary (codes + reserved ids)");
        opt("--codebooks", &omni::ModelConfig::codebook_count, "codec codebook count");
        opt("--codebook-size", &omni::ModelConfig::codebook_size, "codes per codebook");
        opt("--rank-embed", &omni::ModelConfig::adapter_rank_embed, "embedding adapter rank");
        opt("--rank-head", &omni::ModelConfig::adapter_rank_head, "head adapter rank");
        opt("--bridge-index", &omni::ModelConfig::bridge_layer_index,
            "bridge tap block index (-1 = layers/2 - 1)");
        opt("--audio-feature-dim", &omni::ModelConfig::audio_feature_dim, "audio encoder output dim");
        opt("--vision-feature-dim", &omni::ModelConfig::vision_feature_dim, "vision encoder output dim");
        opt("--image-tokens", &omni::ModelConfig::image_token_count, "image placeholder count");
        opt("--speaker-dim", &omni::ModelConfig::speaker_dim, "speaker vector dimension");
        opt("--lambda-audio", &omni::ModelConfig::lambda_audio, "audio loss weight");
        opt("--rope-theta", &omni::ModelConfig::rope_theta, "rotary base");
        opt("--norm-eps", &omni::ModelConfig::norm_eps, "normalization epsilon");
        opt("--init-std", &omni::ModelConfig::init_std, "weight init stddev");
        opt("--stagger-base", &omni::ModelConfig::stagger_offset_base,
            "codebook stagger offset base (1 = zero-based reading)");
        opt("--max-seq-len", &omni::ModelConfig::max_sequence_length,
            "examples longer than this are rejected");
    }

    omni::ModelConfig resolve() const {
        omni::ModelConfig base = toy ? omni::ModelConfig::toy() : omni::ModelConfig{};
        for (const auto & [name, merge] : merges) {
            if (sub->count(name) > 0) merge(base, parsed);
        }
        base.validate();
        return base;
    }
};

static json config_json(const omni::ModelConfig & cfg) { return json::parse(omni::config_to_json(cfg)); }

static omni::Dtype dtype_from(const std::string & s) {
    if (s == "f32") return omni::Dtype::f32;
    if (s == "f64") return omni::Dtype::f64;
    throw omni::UsageError("unknown dtype '" + s + "' (expected f32|f64)");
}

static omni::Dataset load_dataset(const std::string & path) { return omni::read_records(path); }

static omni::OracleTaskSpec oracle_from(const omni::Dataset & ds) {
    if (!ds.header.oracle.has_value()) {
        throw omni::DataError("dataset carries no oracle task spec (needed for consistency evaluation)");
    }
    return *ds.header.oracle;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct GenDataArgs {
    ModelFlags model;
    std::string out;
    int64_t n = 256;
    uint64_t seed = 0;
    uint64_t oracle_seed = 0;
    omni::GenOptions gen;
    std::string speakers;
};

static int run_gen_data(GenDataArgs & a) {
    omni::ModelConfig cfg = a.model.resolve();
    omni::OracleTaskSpec spec = omni::OracleTaskSpec::derive(cfg, a.oracle_seed);
    a.gen.count = a.n;
    if (!a.speakers.empty()) a.gen.speaker_names = parse_name_list(a.speakers);
    std::vector<omni::DatasetRecord> records = omni::generate_oracle_dataset(spec, cfg, a.seed, a.gen);

    ensure_outdir(a.out);
    omni::DatasetHeader header;
    header.text_vocab = cfg.text_vocab;
    header.codebook_size = cfg.codebook_size;
    header.codebook_count = cfg.codebook_count;
    header.oracle = spec;
    std::string data_path = a.out + "/data.bin";
    omni::write_records(data_path, header, records);

    Manifest m;
    m.command = "gen-data";
    m.config = config_json(cfg);
    m.config["args"] = {{"n", a.n},
                        {"oracle_seed", a.oracle_seed},
                        {"ref_fraction", a.gen.ref_fraction},
                        {"speaker_fraction", a.gen.speaker_fraction},
                        {"vision_fraction", a.gen.vision_fraction},
                        {"audio_span_fraction", a.gen.audio_span_fraction},
                        {"speaker_jitter", a.gen.speaker_jitter},
                        {"speakers", a.gen.speaker_names}};
    m.seed = a.seed;
    m.outputs = {data_path};
    write_manifest(a.out, m);
    std::printf("wrote %zu records to %s\n", records.size(), data_path.c_str());
    return 0;
}

struct DumpArgs {
    std::string data;
    int64_t limit = -1;
};

static int run_dump(DumpArgs & a) {
    omni::Dataset ds = load_dataset(a.data);
    json header;
    header["records"] = ds.records.size();
    header["text_vocab"] = ds.header.text_vocab;
    header["codebook_size"] = ds.header.codebook_size;
    header["codebook_count"] = ds.header.codebook_count;
    header["has_oracle"] = ds.header.oracle.has_value();
    std::cout << header.dump() << "\n";
    int64_t n = a.limit < 0 ? static_cast<int64_t>(ds.records.size())
                            : std::min<int64_t>(a.limit, static_cast<int64_t>(ds.records.size()));
    for (int64_t i = 0; i < n; ++i) {
        std::cout << omni::record_to_json(ds.records[static_cast<size_t>(i)]) << "\n";
    }
    return 0;
}

struct BuildSeqArgs {
    ModelFlags model;
    std::string data;
    int64_t index = 0;
    std::string out;
};

static int run_build_seq(BuildSeqArgs & a) {
    omni::ModelConfig cfg = a.model.resolve();
    omni::Dataset ds = load_dataset(a.data);
    if (a.index < 0 || a.index >= static_cast<int64_t>(ds.records.size())) {
        throw omni::DataError("record index " + std::to_string(a.index) + " out of range (dataset has " +
                              std::to_string(ds.records.size()) + " records)");
    }
    omni::AssembledExample ae =
        omni::assemble_record(ds.records[static_cast<size_t>(a.index)], cfg, omni::Dtype::f64);
    std::vector<std::string> violations = omni::validate_example(ae.ex, cfg);
    std::string ex_json = omni::example_to_json(ae.ex);
    std::cout << ex_json << "\n";
    if (violations.empty()) {
        std::fprintf(stderr, "validate: ok (length %lld, assistant_start %lld)\n",
                     static_cast<long long>(ae.ex.length()), static_cast<long long>(ae.ex.assistant_start));
    } else {
        for (const std::string & v : violations) std::fprintf(stderr, "violation: %s\n", v.c_str());
        throw omni::DataError("example failed validation with " + std::to_string(violations.size()) +
                              " violations");
    }
    if (!a.out.empty()) {
        ensure_outdir(a.out);
        std::string path = a.out + "/example.json";
        std::ofstream f(path);
        f << ex_json << "\n";
        f.close();
        Manifest m;
        m.command = "build-seq";
        m.config = config_json(cfg);
        m.config["args"] = {{"data", a.data}, {"index", a.index}};
        m.inputs = {a.data};
        m.outputs = {path};
        write_manifest(a.out, m);
    }
    return 0;
}

struct TrainArgs {
    ModelFlags model;
    std::string data;
    std::string out;
    std::string mode = "all";
    std::string dtype = "f32";
    std::string init_from;
    omni::TrainHyper hyper;
    int64_t epochs = 0;
};

static int run_train(TrainArgs & a) {
    omni::ModelConfig cfg = a.model.resolve();
    omni::Dataset ds = load_dataset(a.data);
    if (ds.records.empty()) throw omni::DataError("dataset '" + a.data + "' is empty");
    ensure_outdir(a.out);

    omni::Dtype dt = dtype_from(a.dtype);
    omni::OmniModel model(cfg, dt, a.hyper.seed);
    if (!a.init_from.empty()) {
        int64_t copied = omni::load_matching_params(model, a.init_from);
        std::fprintf(stderr, "warm start: %lld parameters copied from %s\n",
                     static_cast<long long>(copied), a.init_from.c_str());
    }
    if (a.epochs > 0) {
        int64_t per_epoch = (static_cast<int64_t>(ds.records.size()) + a.hyper.batch_size - 1) /
                            a.hyper.batch_size;
        a.hyper.steps = per_epoch * a.epochs;
    }

    std::string metrics_path = a.out + "/metrics.jsonl";
    std::ofstream metrics(metrics_path);
    omni::TrainMode mode = omni::train_mode_from_string(a.mode);
    std::string ckpt_path = a.out + "/checkpoint.bin";

    omni::TrainResult result = omni::train_run(
        model, ds.records, mode, a.hyper,
        [&](const omni::LossBreakdown & b) {
            metrics << b.to_json(a.mode) << "\n";
            if (b.step % std::max<int64_t>(1, a.hyper.steps / 20) == 0 || b.step + 1 == a.hyper.steps) {
                std::fprintf(stderr, "step %5lld  total %.4f  text %.4f  audio %.4f  acc %.3f\n",
                             static_cast<long long>(b.step), b.total, b.text_loss, b.mean_audio_loss(),
                             b.mean_codebook_accuracy());
            }
        },
        a.out + "/checkpoint.aborted.bin");
    metrics.close();
    omni::save_checkpoint(ckpt_path, model);

    Manifest m;
    m.command = "train";
    m.config = config_json(cfg);
    m.config["args"] = {{"mode", a.mode},         {"lr", a.hyper.lr},
                        {"batch", a.hyper.batch_size}, {"steps", a.hyper.steps},
                        {"clip", a.hyper.clip_norm},   {"weight_decay", a.hyper.weight_decay},
                        {"dtype", a.dtype},            {"init_from", a.init_from},
                        {"trainable", omni::trainable_prefixes(mode)}};
    m.seed = a.hyper.seed;
    m.inputs = {a.data};
    m.outputs = {ckpt_path, metrics_path};
    write_manifest(a.out, m);

    const omni::LossBreakdown & last = result.log.back();
    std::printf("final step %lld: total %.4f, mean codebook accuracy %.4f\n",
                static_cast<long long>(last.step), last.total, last.mean_codebook_accuracy());
    return 0;
}

struct AblateRankArgs {
    ModelFlags model;
    std::string data;
    std::string out;
    std::string unified_ranks;
    std::string embed_ranks;
    std::string head_ranks;
    std::string init_from;
    std::string dtype = "f32";
    omni::TrainHyper hyper;
    uint64_t model_seed = 0;
    int jobs = 1;
};

static int run_ablate_rank(AblateRankArgs & a) {
    omni::ModelConfig cfg = a.model.resolve();
    omni::Dataset ds = load_dataset(a.data);
    ensure_outdir(a.out);

    std::vector<std::pair<int64_t, int64_t>> settings;
    if (!a.unified_ranks.empty()) {
        for (int64_t r : parse_int_list(a.unified_ranks, "--unified-ranks")) settings.emplace_back(r, r);
    } else {
        if (a.embed_ranks.empty() || a.head_ranks.empty()) {
            throw omni::UsageError("either --unified-ranks or both --embed-ranks and --head-ranks are required");
        }
        std::vector<int64_t> re = parse_int_list(a.embed_ranks, "--embed-ranks");
        std::vector<int64_t> rh = parse_int_list(a.head_ranks, "--head-ranks");
        if (re.size() != rh.size()) {
            throw omni::UsageError("--embed-ranks and --head-ranks must pair up one to one");
        }
        for (size_t i = 0; i < re.size(); ++i) settings.emplace_back(re[i], rh[i]);
    }

    omni::HarnessOptions opt;
    opt.hyper = a.hyper;
    opt.dtype = dtype_from(a.dtype);
    opt.model_seed = a.model_seed;
    opt.init_checkpoint = a.init_from;
    opt.jobs = a.jobs;
    std::vector<omni::RankCell> cells = omni::rank_ablation(cfg, ds.records, settings, opt);

    std::printf("%8s %8s %14s %12s %10s\n", "r_embed", "r_head", "added_params", "audio_loss", "cb_acc");
    json rows = json::array();
    for (const omni::RankCell & c : cells) {
        std::printf("%8lld %8lld %14lld %12.4f %10.4f\n", static_cast<long long>(c.rank_embed),
                    static_cast<long long>(c.rank_head), static_cast<long long>(c.added_params),
                    c.final_audio_loss, c.final_codebook_accuracy);
        rows.push_back({{"rank_embed", c.rank_embed},
                        {"rank_head", c.rank_head},
                        {"added_params", c.added_params},
                        {"final_audio_loss", c.final_audio_loss},
                        {"final_codebook_accuracy", c.final_codebook_accuracy}});
    }
    std::string table_path = a.out + "/rank_ablation.json";
    std::ofstream(table_path) << rows.dump(2) << "\n";

    Manifest m;
    m.command = "ablate-rank";
    m.config = config_json(cfg);
    m.config["args"] = {{"settings", a.unified_ranks.empty() ? a.embed_ranks + "|" + a.head_ranks
                                                             : a.unified_ranks},
                        {"steps", a.hyper.steps},
                        {"lr", a.hyper.lr},
                        {"batch", a.hyper.batch_size},
                        {"init_from", a.init_from},
                        {"jobs", a.jobs}};
    m.seed = a.hyper.seed;
    m.inputs = {a.data};
    m.outputs = {table_path};
    write_manifest(a.out, m);
    return 0;
}

struct SweepArgs {
    ModelFlags model;
    std::string data;
    std::string eval_data;
    std::string out;
    std::string values;  // indices or hidden sizes
    std::string init_from;
    std::string dtype = "f32";
    omni::TrainHyper hyper;
    uint64_t model_seed = 0;
    int jobs = 1;
    int64_t eval_prompts = 16;
    int64_t max_steps = 48;
};

static omni::HarnessOptions sweep_options(const SweepArgs & a) {
    omni::HarnessOptions opt;
    opt.hyper = a.hyper;
    opt.dtype = dtype_from(a.dtype);
    opt.model_seed = a.model_seed;
    opt.init_checkpoint = a.init_from;
    opt.jobs = a.jobs;
    opt.eval_prompts = a.eval_prompts;
    opt.max_decode_steps = a.max_steps;
    return opt;
}

static int run_sweep_bridge(SweepArgs & a) {
    omni::ModelConfig cfg = a.model.resolve();
    omni::Dataset train = load_dataset(a.data);
    omni::Dataset eval = load_dataset(a.eval_data.empty() ? a.data : a.eval_data);
    ensure_outdir(a.out);
    std::vector<int64_t> indices = parse_int_list(a.values, "--indices");
    std::vector<omni::BridgeCell> cells = omni::bridge_sweep(cfg, train.records, eval.records,
                                                             oracle_from(eval), indices, sweep_options(a));
    std::printf("%12s %12s %10s\n", "bridge_index", "final_loss", "oracle_cer");
    json rows = json::array();
    for (const omni::BridgeCell & c : cells) {
        std::printf("%12lld %12.4f %10.4f\n", static_cast<long long>(c.layer_index), c.final_total_loss,
                    c.oracle_cer);
        rows.push_back({{"bridge_index", c.layer_index},
                        {"final_loss", c.final_total_loss},
                        {"oracle_cer", c.oracle_cer}});
    }
    std::string table_path = a.out + "/bridge_sweep.json";
    std::ofstream(table_path) << rows.dump(2) << "\n";
    Manifest m;
    m.command = "sweep-bridge";
    m.config = config_json(cfg);
    m.config["args"] = {{"indices", a.values}, {"steps", a.hyper.steps}, {"lr", a.hyper.lr}};
    m.seed = a.hyper.seed;
    m.inputs = {a.data};
    m.outputs = {table_path};
    write_manifest(a.out, m);
    return 0;
}

static int run_sweep_hidden(SweepArgs & a) {
    omni::ModelConfig cfg = a.model.resolve();
    omni::Dataset train = load_dataset(a.data);
    omni::Dataset eval = load_dataset(a.eval_data.empty() ? a.data : a.eval_data);
    ensure_outdir(a.out);
    std::vector<int64_t> sizes = parse_int_list(a.values, "--hidden-sizes");
    std::vector<omni::HiddenCell> cells = omni::hidden_sweep(cfg, train.records, eval.records,
                                                             oracle_from(eval), sizes, sweep_options(a));
    std::printf("%13s %14s %12s %10s\n", "talker_hidden", "talker_params", "final_loss", "oracle_cer");
    json rows = json::array();
    for (const omni::HiddenCell & c : cells) {
        std::printf("%13lld %14lld %12.4f %10.4f\n", static_cast<long long>(c.talker_hidden),
                    static_cast<long long>(c.talker_params), c.final_total_loss, c.oracle_cer);
        rows.push_back({{"talker_hidden", c.talker_hidden},
                        {"talker_params", c.talker_params},
                        {"final_loss", c.final_total_loss},
                        {"oracle_cer", c.oracle_cer}});
    }
    std::string table_path = a.out + "/hidden_sweep.json";
    std::ofstream(table_path) << rows.dump(2) << "\n";
    Manifest m;
    m.command = "sweep-hidden";
    m.config = config_json(cfg);
    m.config["args"] = {{"hidden", a.values}, {"steps", a.hyper.steps}, {"lr", a.hyper.lr}};
    m.seed = a.hyper.seed;
    m.inputs = {a.data};
    m.outputs = {table_path};
    write_manifest(a.out, m);
    return 0;
}

struct DecodeArgs {
    std::string checkpoint;
    std::string data;
    int64_t index = 0;
    std::string prompt_ids;
    std::string out;
    std::string dtype = "f32";
    std::string sampling = "greedy";
    double temperature = 1.0;
    uint64_t seed = 0;
    int64_t max_steps = 64;
    int64_t cancel_after = -1;
    bool wav = false;
};

static int run_decode_stream(DecodeArgs & a) {
    omni::OmniModel model = omni::load_checkpoint(a.checkpoint, dtype_from(a.dtype));
    omni::SessionPrompt prompt;
    if (!a.prompt_ids.empty()) {
        prompt.prompt_tokens = parse_int_list(a.prompt_ids, "--prompt");
    } else {
        if (a.data.empty()) throw omni::UsageError("decode-stream needs --data or --prompt");
        omni::Dataset ds = load_dataset(a.data);
        if (a.index < 0 || a.index >= static_cast<int64_t>(ds.records.size())) {
            throw omni::DataError("record index " + std::to_string(a.index) + " out of range");
        }
        prompt = omni::SessionPrompt::from_record(ds.records[static_cast<size_t>(a.index)], model.cfg,
                                                  model.dtype);
    }
    omni::SamplingConfig sampling;
    if (a.sampling == "greedy") {
        sampling.greedy = true;
    } else if (a.sampling == "temperature") {
        sampling.greedy = false;
        sampling.temperature = a.temperature;
        sampling.seed = a.seed;
    } else {
        throw omni::UsageError("unknown sampling '" + a.sampling + "' (expected greedy|temperature)");
    }

    ensure_outdir(a.out);
    std::string events_path = a.out + "/events.ndjson";
    std::ofstream events(events_path);
    std::vector<double> waveform;

    omni::GenerationSession session(model, prompt, sampling, a.max_steps);
    while (session.status() == omni::SessionStatus::running) {
        if (a.cancel_after >= 0 && session.steps_taken() >= a.cancel_after) {
            session.cancel();
            events << json{{"event", "cancel"}, {"step", session.steps_taken()}}.dump() << "\n";
            break;
        }
        omni::GenerationSession::StepResult r = session.step();
        if (r.text_id >= 0) {
            events << json{{"event", "text"}, {"step", r.step}, {"id", r.text_id}}.dump() << "\n";
        }
        if (r.frame.has_value()) {
            events << json{{"event", "frame"},
                           {"step", r.step},
                           {"frame_index", r.frame->frame_index},
                           {"codes", r.frame->codes}}
                          .dump()
                   << "\n";
            if (a.wav) {
                omni::StubWaveform w = omni::decode_frame_stub(*r.frame);
                waveform.insert(waveform.end(), w.samples.begin(), w.samples.end());
            }
        }
        if (r.finished) {
            events << json{{"event", "finish"},
                           {"step", r.step},
                           {"frames", session.frames_emitted()},
                           {"text_steps", session.text_ids().size()}}
                          .dump()
                   << "\n";
        }
    }
    events.close();

    Manifest m;
    m.command = "decode-stream";
    m.config = config_json(model.cfg);
    m.config["args"] = {{"checkpoint", a.checkpoint}, {"sampling", a.sampling},
                        {"max_steps", a.max_steps},   {"cancel_after", a.cancel_after},
                        {"index", a.index}};
    m.seed = a.seed;
    m.inputs = {a.checkpoint};
    m.outputs = {events_path};
    if (a.wav) {
        std::string wav_path = a.out + "/stream.wav";
        write_wav(wav_path, waveform, 24000);
        m.outputs.push_back(wav_path);
    }
    write_manifest(a.out, m);
    std::printf("decoded %lld text steps, %lld frames (%s)\n",
                static_cast<long long>(session.text_ids().size()),
                static_cast<long long>(session.frames_emitted()),
                session.status() == omni::SessionStatus::cancelled ? "cancelled" : "finished");
    return 0;
}

struct EvalConsistencyArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string dtype = "f32";
    omni::ConsistencyOptions opt;
};

static int run_eval_consistency(EvalConsistencyArgs & a) {
    omni::OmniModel model = omni::load_checkpoint(a.checkpoint, dtype_from(a.dtype));
    omni::Dataset ds = load_dataset(a.data);
    omni::ConsistencyReport report = omni::consistency_eval(model, ds.records, oracle_from(ds), a.opt);
    std::printf("%s", report.render_table().c_str());
    ensure_outdir(a.out);
    std::string report_path = a.out + "/consistency.json";
    std::ofstream(report_path) << report.to_json() << "\n";
    Manifest m;
    m.command = "eval-consistency";
    m.config = config_json(model.cfg);
    m.config["args"] = {{"checkpoint", a.checkpoint},
                        {"max_steps", a.opt.max_steps},
                        {"max_examples", a.opt.max_examples}};
    m.inputs = {a.checkpoint, a.data};
    m.outputs = {report_path};
    write_manifest(a.out, m);
    return 0;
}

struct EvalSpeakerArgs {
    std::string data;
    std::string out;
    std::string seen;
};

static int run_eval_speaker(EvalSpeakerArgs & a) {
    omni::Dataset ds = load_dataset(a.data);
    omni::SimilarityReport report = omni::speaker_similarity_eval(ds.records, parse_name_list(a.seen));
    std::printf("%s", report.render_table().c_str());
    ensure_outdir(a.out);
    std::string report_path = a.out + "/speaker_similarity.json";
    std::ofstream(report_path) << report.to_json() << "\n";
    Manifest m;
    m.command = "eval-speaker";
    m.config["args"] = {{"seen", a.seen}};
    m.inputs = {a.data};
    m.outputs = {report_path};
    write_manifest(a.out, m);
    return 0;
}

static int run_count_params(ModelFlags & model, const std::string & out) {
    omni::ModelConfig cfg = model.resolve();
    omni::ParamCounts pc = omni::count_parameters(cfg);
    std::printf("%-24s %14s\n", "module", "parameters");
    std::printf("%-24s %14lld\n", "thinker", static_cast<long long>(pc.thinker));
    std::printf("%-24s %14lld\n", "talker", static_cast<long long>(pc.talker));
    std::printf("%-24s %14lld\n", "audio projector", static_cast<long long>(pc.audio_projector));
    std::printf("%-24s %14lld\n", "vision projector", static_cast<long long>(pc.vision_projector));
    std::printf("%-24s %14lld\n", "embed adapter (per cb)",
                static_cast<long long>(pc.embed_adapter_per_codebook));
    std::printf("%-24s %14lld\n", "head adapter (per cb)",
                static_cast<long long>(pc.head_adapter_per_codebook));
    std::printf("%-24s %14lld\n", "total trainable", static_cast<long long>(pc.total));
    if (!out.empty()) {
        ensure_outdir(out);
        json j = {{"thinker", pc.thinker},
                  {"talker", pc.talker},
                  {"audio_projector", pc.audio_projector},
                  {"vision_projector", pc.vision_projector},
                  {"embed_adapter_per_codebook", pc.embed_adapter_per_codebook},
                  {"head_adapter_per_codebook", pc.head_adapter_per_codebook},
                  {"total", pc.total}};
        std::string path = out + "/param_counts.json";
        std::ofstream(path) << j.dump(2) << "\n";
        Manifest m;
        m.command = "count-params";
        m.config = config_json(cfg);
        m.outputs = {path};
        write_manifest(out, m);
    }
    return 0;
}

static int run_grad_check(uint64_t seed, int64_t coords, double eps) {
    omni::GradSuiteResult res = omni::run_model_gradient_suite(seed, coords, eps);
    std::printf("checked %lld parameters, max rel err %.3e (worst: %s[%lld]) in %.2fs\n",
                static_cast<long long>(res.params_checked), res.report.max_rel_err,
                res.report.worst_param.c_str(), static_cast<long long>(res.report.worst_coord),
                res.seconds);
    if (res.report.max_rel_err >= 1e-4) {
        throw omni::NumericError("gradient suite failed: max rel err " +
                                 std::to_string(res.report.max_rel_err) + " at " + res.report.worst_param);
    }
    return 0;
}

// ---------------------------------------------------------------------------

static void add_hyper_flags(CLI::App * sub, omni::TrainHyper & hyper) {
    sub->add_option("--lr", hyper.lr, "learning rate");
    sub->add_option("--batch", hyper.batch_size, "batch size");
    sub->add_option("--steps", hyper.steps, "optimizer steps");
    sub->add_option("--clip", hyper.clip_norm, "global grad-norm clip (<=0 disables)");
    sub->add_option("--weight-decay", hyper.weight_decay, "decoupled weight decay");
    sub->add_option("--seed", hyper.seed, "run seed");
    sub->add_option("--log-every", hyper.log_every, "metric log interval");
}

int main(int argc, char ** argv) {
    CLI::App app{"desk-scale speech-text omni model testbed"};
    app.require_subcommand(1);
    // ini config: one [subcommand] section per command, flag values win
    app.set_config("--config", "", "config file (ini; keys under a [subcommand] section)");

    GenDataArgs gen;
    {
        CLI::App * sub = app.add_subcommand("gen-data", "generate a synthetic oracle-task dataset");
        gen.model.attach(sub);
        sub->add_option("--out", gen.out, "output directory")->required();
        sub->add_option("--n", gen.n, "record count");
        sub->add_option("--seed", gen.seed, "data seed");
        sub->add_option("--oracle-seed", gen.oracle_seed, "oracle mapping seed");
        sub->add_option("--prompt-min", gen.gen.prompt_len_min, "min prompt tokens");
        sub->add_option("--prompt-max", gen.gen.prompt_len_max, "max prompt tokens");
        sub->add_option("--response-min", gen.gen.response_len_min, "min response tokens");
        sub->add_option("--response-max", gen.gen.response_len_max, "max response tokens");
        sub->add_option("--ref-fraction", gen.gen.ref_fraction, "records with reference codes");
        sub->add_option("--speaker-fraction", gen.gen.speaker_fraction, "records with speaker conditioning");
        sub->add_option("--vision-fraction", gen.gen.vision_fraction, "records with an image span");
        sub->add_option("--audio-span-fraction", gen.gen.audio_span_fraction,
                        "records with an input-speech span");
        sub->add_option("--speaker-jitter", gen.gen.speaker_jitter, "speaker vector noise-to-signal ratio");
        sub->add_option("--speakers", gen.speakers, "comma-separated speaker names");
        sub->callback([&]() { std::exit(run_gen_data(gen)); });
    }

    DumpArgs dump;
    {
        CLI::App * sub = app.add_subcommand("dump", "print dataset records as json lines");
        sub->add_option("--data", dump.data, "record file")->required();
        sub->add_option("--limit", dump.limit, "max records to print (-1 = all)");
        sub->callback([&]() { std::exit(run_dump(dump)); });
    }

    BuildSeqArgs bseq;
    {
        CLI::App * sub = app.add_subcommand("build-seq", "assemble, validate and dump one example");
        bseq.model.attach(sub);
        sub->add_option("--data", bseq.data, "record file")->required();
        sub->add_option("--index", bseq.index, "record index");
        sub->add_option("--out", bseq.out, "optional output directory");
        sub->callback([&]() { std::exit(run_build_seq(bseq)); });
    }

    TrainArgs train;
    {
        CLI::App * sub = app.add_subcommand("train", "train the model on a record file");
        train.model.attach(sub);
        sub->add_option("--data", train.data, "record file")->required();
        sub->add_option("--out", train.out, "output directory")->required();
        sub->add_option("--mode", train.mode, "all|audio_proj|vision_proj");
        sub->add_option("--dtype", train.dtype, "f32|f64");
        sub->add_option("--init-from", train.init_from, "warm-start checkpoint");
        sub->add_option("--epochs", train.epochs, "epochs (overrides --steps)");
        add_hyper_flags(sub, train.hyper);
        sub->callback([&]() { std::exit(run_train(train)); });
    }

    AblateRankArgs ablate;
    {
        CLI::App * sub = app.add_subcommand("ablate-rank",
                                            "adapter rank ablation with a frozen thinker");
        ablate.model.attach(sub);
        sub->add_option("--data", ablate.data, "record file")->required();
        sub->add_option("--out", ablate.out, "output directory")->required();
        sub->add_option("--unified-ranks", ablate.unified_ranks, "comma list, one rank for both adapters");
        sub->add_option("--embed-ranks", ablate.embed_ranks, "comma list, paired with --head-ranks");
        sub->add_option("--head-ranks", ablate.head_ranks, "comma list, paired with --embed-ranks");
        sub->add_option("--init-from", ablate.init_from, "warm-start checkpoint (frozen thinker source)");
        sub->add_option("--dtype", ablate.dtype, "f32|f64");
        sub->add_option("--model-seed", ablate.model_seed, "model init seed shared across cells");
        sub->add_option("--jobs", ablate.jobs, "parallel cells");
        add_hyper_flags(sub, ablate.hyper);
        sub->callback([&]() { std::exit(run_ablate_rank(ablate)); });
    }

    SweepArgs bridge;
    {
        CLI::App * sub = app.add_subcommand("sweep-bridge", "train per bridge tap index, report oracle CER");
        bridge.model.attach(sub);
        sub->add_option("--data", bridge.data, "training record file")->required();
        sub->add_option("--eval-data", bridge.eval_data, "evaluation record file (default: --data)");
        sub->add_option("--out", bridge.out, "output directory")->required();
        sub->add_option("--indices", bridge.values, "comma list of bridge block indices")->required();
        sub->add_option("--init-from", bridge.init_from, "warm-start checkpoint");
        sub->add_option("--dtype", bridge.dtype, "f32|f64");
        sub->add_option("--model-seed", bridge.model_seed, "model init seed");
        sub->add_option("--jobs", bridge.jobs, "parallel cells");
        sub->add_option("--eval-prompts", bridge.eval_prompts, "prompts per consistency eval");
        sub->add_option("--max-steps", bridge.max_steps, "decode budget per prompt");
        add_hyper_flags(sub, bridge.hyper);
        sub->callback([&]() { std::exit(run_sweep_bridge(bridge)); });
    }

    SweepArgs hidden;
    {
        CLI::App * sub = app.add_subcommand("sweep-hidden", "train per talker width, report oracle CER");
        hidden.model.attach(sub);
        sub->add_option("--data", hidden.data, "training record file")->required();
        sub->add_option("--eval-data", hidden.eval_data, "evaluation record file (default: --data)");
        sub->add_option("--out", hidden.out, "output directory")->required();
        sub->add_option("--hidden-sizes", hidden.values, "comma list of talker hidden sizes")->required();
        sub->add_option("--init-from", hidden.init_from, "warm-start checkpoint");
        sub->add_option("--dtype", hidden.dtype, "f32|f64");
        sub->add_option("--model-seed", hidden.model_seed, "model init seed");
        sub->add_option("--jobs", hidden.jobs, "parallel cells");
        sub->add_option("--eval-prompts", hidden.eval_prompts, "prompts per consistency eval");
        sub->add_option("--max-steps", hidden.max_steps, "decode budget per prompt");
        add_hyper_flags(sub, hidden.hyper);
        sub->callback([&]() { std::exit(run_sweep_hidden(hidden)); });
    }

    DecodeArgs decode;
    {
        CLI::App * sub = app.add_subcommand("decode-stream",
                                            "incremental joint decode with an event log");
        sub->add_option("--checkpoint", decode.checkpoint, "model checkpoint")->required();
        sub->add_option("--data", decode.data, "record file for the prompt");
        sub->add_option("--index", decode.index, "record index");
        sub->add_option("--prompt", decode.prompt_ids, "comma list of prompt token ids");
        sub->add_option("--out", decode.out, "output directory")->required();
        sub->add_option("--dtype", decode.dtype, "f32|f64");
        sub->add_option("--sampling", decode.sampling, "greedy|temperature");
        sub->add_option("--temperature", decode.temperature, "sampling temperature");
        sub->add_option("--seed", decode.seed, "sampling seed");
        sub->add_option("--max-steps", decode.max_steps, "text step budget");
        sub->add_option("--cancel-after-step", decode.cancel_after,
                        "cancel the session once this many steps ran (barge-in)");
        sub->add_flag("--wav", decode.wav, "write the stub waveform next to the event log");
        sub->callback([&]() { std::exit(run_decode_stream(decode)); });
    }

    EvalConsistencyArgs evalc;
    {
        CLI::App * sub = app.add_subcommand("eval-consistency",
                                            "stream-decode prompts and score transcripts against the "
                                            "model's own text");
        sub->add_option("--checkpoint", evalc.checkpoint, "model checkpoint")->required();
        sub->add_option("--data", evalc.data, "record file with prompts")->required();
        sub->add_option("--out", evalc.out, "output directory")->required();
        sub->add_option("--dtype", evalc.dtype, "f32|f64");
        sub->add_option("--max-steps", evalc.opt.max_steps, "decode budget per prompt");
        sub->add_option("--max-examples", evalc.opt.max_examples, "prompt budget (-1 = all)");
        sub->add_option("--bucket-short", evalc.opt.bucket_short, "short bucket upper bound");
        sub->add_option("--bucket-mid", evalc.opt.bucket_mid, "mid bucket upper bound");
        sub->add_option("--bucket-long", evalc.opt.bucket_long, "long bucket upper bound");
        sub->callback([&]() { std::exit(run_eval_consistency(evalc)); });
    }

    EvalSpeakerArgs evals;
    {
        CLI::App * sub = app.add_subcommand("eval-speaker",
                                            "per-speaker cosine similarity with a seen/unseen split");
        sub->add_option("--data", evals.data, "record file")->required();
        sub->add_option("--out", evals.out, "output directory")->required();
        sub->add_option("--seen", evals.seen, "comma list of seen speaker names");
        sub->callback([&]() { std::exit(run_eval_speaker(evals)); });
    }

    ModelFlags count_model;
    std::string count_out;
    {
        CLI::App * sub = app.add_subcommand("count-params", "structural per-module parameter counts");
        count_model.attach(sub);
        sub->add_option("--out", count_out, "optional output directory");
        sub->callback([&]() { std::exit(run_count_params(count_model, count_out)); });
    }

    uint64_t gc_seed = 0;
    int64_t gc_coords = 8;
    double gc_eps = 1e-4;
    {
        CLI::App * sub = app.add_subcommand("grad-check",
                                            "finite-difference gradient suite over every module");
        sub->add_option("--seed", gc_seed, "suite seed");
        sub->add_option("--coords", gc_coords, "sampled coordinates per parameter");
        sub->add_option("--eps", gc_eps, "central difference step");
        sub->callback([&]() { std::exit(run_grad_check(gc_seed, gc_coords, gc_eps)); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e);
    } catch (const CLI::ParseError & e) {
        app.exit(e);
        return 1;
    } catch (const omni::UsageError & e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const omni::NumericError & e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const omni::DataError & e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
