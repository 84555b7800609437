// End-to-end tests for the deskomni binary: subcommand wiring, the manifest
// contract, exit codes and the documented-flags guarantee.

#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

using nlohmann::json;

static const std::string kBin = DESKOMNI_BIN;
static const std::string kWork = "/tmp/deskomni_cli_test";

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

static RunResult run(const std::string & args) {
    std::string out_path = kWork + "/stdout.txt";
    std::string err_path = kWork + "/stderr.txt";
    std::string cmd = kBin + " " + args + " > " + out_path + " 2> " + err_path;
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    auto slurp = [](const std::string & p) {
        std::ifstream f(p);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

static json read_json(const std::string & path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    return json::parse(f);
}

TEST_CASE("setup working directory") {
    std::system(("rm -rf " + kWork + " && mkdir -p " + kWork).c_str());
    CHECK(true);
}

TEST_CASE("top-level help lists every subcommand") {
    RunResult r = run("--help");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("--config") != std::string::npos);
    for (const char * sub : {"gen-data", "dump", "build-seq", "train", "ablate-rank", "sweep-bridge",
                             "sweep-hidden", "decode-stream", "eval-consistency", "eval-speaker",
                             "count-params", "grad-check"}) {
        INFO("missing subcommand " << sub);
        CHECK(r.out.find(sub) != std::string::npos);
    }
}

TEST_CASE("every documented flag appears in its subcommand help") {
    auto has_flags = [&](const std::string & sub, const std::vector<std::string> & flags) {
        RunResult r = run(sub + " --help");
        CHECK(r.exit_code == 0);
        for (const std::string & f : flags) {
            INFO(sub << " missing flag " << f);
            CHECK(r.out.find(f) != std::string::npos);
        }
    };
    has_flags("gen-data", {"--out", "--n", "--seed", "--oracle-seed", "--ref-fraction",
                           "--speaker-fraction", "--vision-fraction", "--audio-span-fraction",
                           "--speakers", "--toy"});
    has_flags("dump", {"--data", "--limit"});
    has_flags("build-seq", {"--data", "--index", "--out"});
    has_flags("train", {"--data", "--out", "--mode", "--dtype", "--init-from", "--epochs", "--lr",
                        "--batch", "--steps", "--clip", "--weight-decay", "--seed", "--log-every"});
    has_flags("ablate-rank", {"--unified-ranks", "--embed-ranks", "--head-ranks", "--jobs",
                              "--model-seed", "--init-from"});
    has_flags("sweep-bridge", {"--indices", "--eval-data", "--eval-prompts", "--max-steps"});
    has_flags("sweep-hidden", {"--hidden-sizes"});
    has_flags("decode-stream", {"--checkpoint", "--prompt", "--sampling", "--temperature",
                                "--max-steps", "--cancel-after-step", "--wav"});
    has_flags("eval-consistency", {"--checkpoint", "--data", "--max-examples", "--bucket-short"});
    has_flags("eval-speaker", {"--data", "--seen"});
    has_flags("count-params", {"--toy", "--layers", "--hidden", "--codebooks", "--rank-embed"});
    has_flags("grad-check", {"--seed", "--coords", "--eps"});
}

TEST_CASE("usage failures exit with code 1") {
    CHECK(run("no-such-command").exit_code == 1);
    CHECK(run("dump --no-such-flag").exit_code == 1);
    CHECK(run("dump").exit_code == 1);  // missing required --data
    CHECK(run("").exit_code == 1);      // subcommand required
}

TEST_CASE("count-params reproduces the projector reference values") {
    RunResult r = run("count-params");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("985600") != std::string::npos);
    CHECK(r.out.find("1182720") != std::string::npos);
}

TEST_CASE("grad-check passes and exits 0") {
    RunResult r = run("grad-check --coords 4");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("max rel err") != std::string::npos);
}

TEST_CASE("grad-check rejects an out-of-range epsilon with a usage exit") {
    CHECK(run("grad-check --eps 0.5").exit_code == 1);
}

TEST_CASE("full pipeline: gen-data, dump, build-seq, train, decode, eval") {
    const std::string data_dir = kWork + "/data";
    RunResult r = run("gen-data --toy --out " + data_dir +
                      " --n 24 --seed 5 --speaker-fraction 0.5 --ref-fraction 0.5 --response-min 4 "
                      "--response-max 8");
    CHECK(r.exit_code == 0);
    CHECK(read_json(data_dir + "/manifest.json")["command"] == "gen-data");

    r = run("dump --data " + data_dir + "/data.bin --limit 2");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("\"records\":24") != std::string::npos);

    r = run("build-seq --toy --data " + data_dir + "/data.bin --index 0");
    CHECK(r.exit_code == 0);
    CHECK(r.err.find("validate: ok") != std::string::npos);
    CHECK(r.out.find("audio_streams") != std::string::npos);

    const std::string run_dir = kWork + "/train";
    r = run("train --toy --data " + data_dir + "/data.bin --out " + run_dir +
            " --steps 30 --batch 4 --lr 2e-3 --seed 1");
    CHECK(r.exit_code == 0);
    json manifest = read_json(run_dir + "/manifest.json");
    CHECK(manifest["command"] == "train");
    CHECK(manifest["config"]["args"]["mode"] == "all");
    CHECK(manifest["outputs"].size() == 2);
    {
        std::ifstream metrics(run_dir + "/metrics.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(metrics, line)) {
            if (!line.empty()) {
                json j = json::parse(line);
                CHECK(j.contains("total"));
                CHECK(j.contains("codebook_accuracy"));
                ++lines;
            }
        }
        CHECK(lines == 30);
    }

    const std::string dec_dir = kWork + "/decode";
    r = run("decode-stream --checkpoint " + run_dir + "/checkpoint.bin --data " + data_dir +
            "/data.bin --index 1 --out " + dec_dir + " --max-steps 16 --wav");
    CHECK(r.exit_code == 0);
    {
        std::ifstream events(dec_dir + "/events.ndjson");
        std::string line;
        bool saw_text = false, saw_terminal = false;
        while (std::getline(events, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            if (j["event"] == "text") saw_text = true;
            if (j["event"] == "finish") saw_terminal = true;
        }
        CHECK(saw_text);
        CHECK(saw_terminal);
    }
    std::ifstream wav(dec_dir + "/stream.wav", std::ios::binary);
    CHECK(wav.good());

    const std::string cancel_dir = kWork + "/cancel";
    // cancel before the first step: deterministic for any checkpoint
    r = run("decode-stream --checkpoint " + run_dir + "/checkpoint.bin --data " + data_dir +
            "/data.bin --index 1 --out " + cancel_dir + " --max-steps 40 --cancel-after-step 0");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("cancelled") != std::string::npos);
    {
        std::ifstream events(cancel_dir + "/events.ndjson");
        std::string line;
        bool saw_cancel = false;
        int frames = 0;
        while (std::getline(events, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            if (j["event"] == "cancel") saw_cancel = true;
            if (j["event"] == "frame") ++frames;
        }
        CHECK(saw_cancel);
        CHECK(frames == 0);  // nothing complete before step 8
    }

    const std::string evalc_dir = kWork + "/evalc";
    r = run("eval-consistency --checkpoint " + run_dir + "/checkpoint.bin --data " + data_dir +
            "/data.bin --out " + evalc_dir + " --max-examples 6 --max-steps 20");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("overall") != std::string::npos);
    json report = read_json(evalc_dir + "/consistency.json");
    CHECK(report.contains("overall_cer"));
    CHECK(report["examples"].size() == 6);

    const std::string evals_dir = kWork + "/evals";
    r = run("eval-speaker --data " + data_dir + "/data.bin --out " + evals_dir + " --seen ada,brook");
    CHECK(r.exit_code == 0);
    json sim = read_json(evals_dir + "/speaker_similarity.json");
    CHECK(sim.contains("overall_mean"));
}

TEST_CASE("reruns with identical manifest inputs reproduce artifacts bit-exactly") {
    auto hash_of = [](const std::string & p) {
        std::ifstream f(p, std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    RunResult r = run("gen-data --toy --out " + kWork + "/idem_a --n 12 --seed 9 --speaker-fraction 0.5");
    CHECK(r.exit_code == 0);
    r = run("gen-data --toy --out " + kWork + "/idem_b --n 12 --seed 9 --speaker-fraction 0.5");
    CHECK(r.exit_code == 0);
    CHECK(hash_of(kWork + "/idem_a/data.bin") == hash_of(kWork + "/idem_b/data.bin"));
}

TEST_CASE("config file values apply but flags win") {
    const std::string data_dir = kWork + "/data";  // from the pipeline test
    const std::string ini = kWork + "/train.ini";
    {
        std::ofstream f(ini);
        f << "[train]\nsteps=3\nbatch=2\nlr=1e-3\ntoy=true\n";
    }
    const std::string d1 = kWork + "/cfg_a";
    RunResult r = run("--config " + ini + " train --data " + data_dir + "/data.bin --out " + d1);
    CHECK(r.exit_code == 0);
    {
        json m = read_json(d1 + "/manifest.json");
        CHECK(m["config"]["args"]["steps"] == 3);
        CHECK(m["config"]["hidden_size"] == 64);  // toy preset came from the file
    }

    const std::string d2 = kWork + "/cfg_b";
    r = run("--config " + ini + " train --data " + data_dir + "/data.bin --out " + d2 + " --steps 2");
    CHECK(r.exit_code == 0);
    CHECK(read_json(d2 + "/manifest.json")["config"]["args"]["steps"] == 2);  // flag wins
}

TEST_CASE("data failures exit 2, numerical failures exit 3") {
    CHECK(run("dump --data /tmp/definitely_missing_file.bin").exit_code == 2);
    const std::string data_dir = kWork + "/data";
    const std::string boom_dir = kWork + "/boom";
    RunResult r = run("train --toy --data " + data_dir + "/data.bin --out " + boom_dir +
                      " --steps 5 --batch 2 --lr 1e308 --clip 0");
    CHECK(r.exit_code == 3);
    std::ifstream aborted(boom_dir + "/checkpoint.aborted.bin", std::ios::binary);
    CHECK(aborted.good());
}

TEST_CASE("ablate-rank writes the table artifact") {
    const std::string data_dir = kWork + "/data";
    const std::string out = kWork + "/ranks";
    RunResult r = run("ablate-rank --toy --data " + data_dir + "/data.bin --out " + out +
                      " --unified-ranks 2,8 --steps 12 --batch 4 --lr 1e-3");
    CHECK(r.exit_code == 0);
    json rows = read_json(out + "/rank_ablation.json");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["rank_embed"] == 2);
    CHECK(rows[1]["rank_head"] == 8);
    CHECK(rows[1]["added_params"] > rows[0]["added_params"]);
}

TEST_CASE("sweep-bridge and sweep-hidden produce one row per cell") {
    const std::string data_dir = kWork + "/data";
    RunResult r = run("sweep-bridge --toy --data " + data_dir + "/data.bin --out " + kWork +
                      "/bridge --indices 0,1 --steps 8 --batch 4 --eval-prompts 2 --max-steps 16");
    CHECK(r.exit_code == 0);
    CHECK(read_json(kWork + "/bridge/bridge_sweep.json").size() == 2);

    r = run("sweep-hidden --toy --data " + data_dir + "/data.bin --out " + kWork +
            "/hidden --hidden-sizes 32,64 --steps 8 --batch 4 --eval-prompts 2 --max-steps 16");
    CHECK(r.exit_code == 0);
    json rows = read_json(kWork + "/hidden/hidden_sweep.json");
    REQUIRE(rows.size() == 2);
    CHECK(rows[0]["talker_params"] < rows[1]["talker_params"]);
}
