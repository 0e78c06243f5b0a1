#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "slm/cli/cli.hpp"
#include "slm/bridge/bridge.hpp"
#include "slm/encoder/encoder.hpp"
#include "slm/evalsuite/alignment.hpp"
#include "slm/evalsuite/report.hpp"
#include "slm/frontend/audio.hpp"
#include "slm/frontend/features.hpp"
#include "slm/trainer/config.hpp"
#include "slm/trainer/checkpoint.hpp"
#include "slm/trainer/manifest.hpp"
#include "support/synth.hpp"

using namespace slm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run slm_run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "slm_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& corpus_dir() {
    static const fs::path dir = [] {
        const auto d = scratch("corpus");
        testing::write_toy_corpus(d, {"cat sat", "dog ran", "sun up", "fig jam"});
        return d;
    }();
    return dir;
}

std::string manifest() { return (corpus_dir() / "manifest.jsonl").string(); }

const fs::path& config_file() {
    static const fs::path path = [] {
        const json cfg = {
            {"encoder", {{"num_layers", 1}, {"d_model", 32}, {"ffn_dim", 64}, {"subsample_channels", 16}, {"dropout", 0.0}}},
            {"lm", {{"preset", "tiny"}, {"d_llm", 32}, {"ffn_dim", 64}, {"num_layers", 1}}},
            {"lora", {{"rank", 2}}},
            {"training",
             {{"eval_interval", 5},
              {"pretrain", {{"peak_lr", 3e-3}, {"final_lr", 1e-3}, {"warmup_steps", 3}, {"total_steps", 15}, {"batch_seconds", 4}}},
              {"joint", {{"peak_lr", 3e-3}, {"final_lr", 1e-3}, {"warmup_steps", 3}, {"total_steps", 15}, {"batch_seconds", 4}}}}},
        };
        const auto p = scratch("config") / "tiny.json";
        std::ofstream(p) << cfg.dump(2);
        return p;
    }();
    return path;
}

std::string cfg() { return config_file().string(); }

const fs::path& encoder_ckpt() {
    static const fs::path path = [] {
        const auto dir = scratch("pretrain");
        const auto r = slm_run({"pretrain", "--config", cfg(), "--manifest", manifest(), "--out-dir", dir.string()});
        REQUIRE(r.code == 0);
        return dir / "encoder.slmf";
    }();
    return path;
}

const fs::path& joint_ckpt() {
    static const fs::path path = [] {
        const auto dir = scratch("train");
        const auto r = slm_run({"train", "--config", cfg(), "--manifest", manifest(), "--ckpt",
                                encoder_ckpt().string(), "--out-dir", dir.string()});
        REQUIRE(r.code == 0);
        return dir / "model.slmf";
    }();
    return path;
}

} // namespace

TEST_CASE("cli: parse errors and help") {
    CHECK(slm_run({"--help"}).code == 0);
    CHECK(slm_run({}).code == 2);
    CHECK(slm_run({"pretrain", "--bogus"}).code == 2);
    CHECK(slm_run({"frobnicate"}).code == 2);
}

TEST_CASE("cli: missing manifest is bad input") {
    const auto r = slm_run({"pretrain", "--config", cfg(), "--manifest", "/nonexistent/m.jsonl", "--out-dir",
                            scratch("missing").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("manifest not found") != std::string::npos);
}

TEST_CASE("cli: unknown config keys are rejected") {
    const auto bad = scratch("badcfg") / "bad.json";
    std::ofstream(bad) << R"({"encoder": {"num_layerz": 2}})";
    CHECK(slm_run({"pretrain", "--config", bad.string(), "--manifest", manifest()}).code == 2);
    CHECK(slm_run({"pretrain", "--config", cfg(), "--manifest", manifest(), "--set", "encoder.nope=1"}).code == 2);
    CHECK(slm_run({"pretrain", "--config", cfg(), "--manifest", manifest(), "--set", "stack_n"}).code == 2);
}

TEST_CASE("cli: pretrain is deterministic and reloads") {
    const auto again = scratch("pretrain_again");
    const auto r = slm_run({"pretrain", "--config", cfg(), "--manifest", manifest(), "--out-dir", again.string()});
    REQUIRE(r.code == 0);
    CHECK(trainer::file_digest(again / "encoder.slmf") == trainer::file_digest(encoder_ckpt()));
    const auto ckpt = trainer::load_checkpoint(encoder_ckpt());
    CHECK(ckpt.kind == "encoder");
    CHECK(fs::exists(again / "pretrain_log.csv"));

    const auto other = scratch("pretrain_seed");
    REQUIRE(slm_run({"pretrain", "--config", cfg(), "--manifest", manifest(), "--seed", "99", "--out-dir",
                     other.string()})
                .code == 0);
    CHECK(trainer::file_digest(other / "encoder.slmf") != trainer::file_digest(encoder_ckpt()));
}

TEST_CASE("cli: train logs trainable parameters and embedding rate") {
    const auto dir = scratch("rank0");
    const auto r = slm_run({"train", "--config", cfg(), "--manifest", manifest(), "--ckpt", encoder_ckpt().string(),
                            "--set", "lora_rank=0", "--set", "stack_n=3", "--out-dir", dir.string()});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("trainable LM parameters: 0\n") != std::string::npos);
    CHECK(r.err.find("embedding rate: 240 ms") != std::string::npos);

    const auto with = slm_run({"train", "--config", cfg(), "--manifest", manifest(), "--ckpt", encoder_ckpt().string(),
                               "--set", "stack_n=2", "--stop-after", "1", "--out-dir", scratch("rank2").string()});
    REQUIRE(with.code == 0);
    // rank 2, d 32, one layer: 2 * (32 + 32) * 4 projections
    CHECK(with.err.find("trainable LM parameters: 512\n") != std::string::npos);
    CHECK(with.err.find("embedding rate: 160 ms") != std::string::npos);
}

TEST_CASE("cli: interrupted training resumes to the same checkpoint") {
    const auto part = scratch("interrupt");
    auto r = slm_run({"train", "--config", cfg(), "--manifest", manifest(), "--ckpt", encoder_ckpt().string(),
                      "--stop-after", "7", "--out-dir", part.string()});
    REQUIRE(r.code == 0);
    CHECK_FALSE(fs::exists(part / "model.slmf"));
    REQUIRE(fs::exists(part / "joint_state.slmf"));
    r = slm_run({"train", "--config", cfg(), "--manifest", manifest(), "--ckpt", encoder_ckpt().string(), "--resume",
                 (part / "joint_state.slmf").string(), "--out-dir", part.string()});
    REQUIRE(r.code == 0);
    CHECK(read_file(part / "model.slmf") == read_file(joint_ckpt()));
    CHECK(read_file(part / "joint_log.csv") == read_file(joint_ckpt().parent_path() / "joint_log.csv"));
}

TEST_CASE("cli: transcribe") {
    const std::string wav = (corpus_dir() / "utt0.wav").string();
    auto a = slm_run({"transcribe", "--ckpt", joint_ckpt().string(), wav, wav});
    REQUIRE(a.code == 0);
    CHECK(std::count(a.out.begin(), a.out.end(), '\n') == 2);
    CHECK(slm_run({"transcribe", "--ckpt", joint_ckpt().string(), wav}).out + a.out.substr(a.out.find('\n') + 1) ==
          a.out);
    CHECK(slm_run({"transcribe", "--ckpt", encoder_ckpt().string(), wav}).code == 0);

    const auto dir = scratch("bad_audio");
    std::ofstream(dir / "corrupt.wav") << "RIFF\x10\0\0\0WAVEjunk";
    auto r = slm_run({"transcribe", "--ckpt", joint_ckpt().string(), (dir / "corrupt.wav").string()});
    CHECK(r.code == 3);

    frontend::write_wav(dir / "long.wav", std::vector<float>(21 * frontend::kSampleRate, 0.01f), frontend::kSampleRate);
    r = slm_run({"transcribe", "--ckpt", joint_ckpt().string(), (dir / "long.wav").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("longer than 20 s") != std::string::npos);

    CHECK(slm_run({"transcribe", "--ckpt", (dir / "none.slmf").string(), wav}).code == 2);
    CHECK(slm_run({"transcribe", "--ckpt", (dir / "corrupt.wav").string(), wav}).code == 3);
    // a config describing another architecture is a digest mismatch
    r = slm_run({"transcribe", "--ckpt", joint_ckpt().string(), "--config", cfg(), "--set", "stack_n=4", wav});
    CHECK(r.code == 3);
    CHECK(r.err.find("digest") != std::string::npos);
    CHECK(slm_run({"transcribe", "--ckpt", joint_ckpt().string(), "--config", cfg(), wav}).code == 0);
}

TEST_CASE("cli: eval writes identical reports on repeated runs") {
    const auto a = scratch("eval_a"), b = scratch("eval_b");
    const auto ra = slm_run({"eval", "--ckpt", joint_ckpt().string(), "--manifest", manifest(), "--out-dir", a.string()});
    const auto rb = slm_run({"eval", "--ckpt", joint_ckpt().string(), "--manifest", manifest(), "--out-dir", b.string()});
    REQUIRE(ra.code == 0);
    REQUIRE(rb.code == 0);
    CHECK(read_file(a / "report.json") == read_file(b / "report.json"));
    CHECK(read_file(a / "report.txt") == ra.out);
    const auto report = json::parse(read_file(a / "report.json"));
    CHECK(report.contains("per_language"));
    CHECK(ra.out.find("Avg") != std::string::npos);

    const auto ctc = slm_run({"eval", "--ckpt", encoder_ckpt().string(), "--manifest", manifest(), "--out-dir",
                              scratch("eval_ctc").string()});
    CHECK(ctc.code == 0);
}

TEST_CASE("eval on an echo decoder reports zero error") {
    const auto entries = trainer::load_manifest(manifest(), trainer::kLanguages);
    std::vector<evalsuite::EvalItem> items;
    for (const auto& e : entries) items.push_back({e.id, e.language, e.text, e.audio_path});
    const auto report = evalsuite::eval_corpus(items, [](const evalsuite::EvalItem& it) { return it.reference; }, 2);
    CHECK(report.average == 0.0);
    for (const auto& [lang, score] : report.per_language) CHECK(score.wer == 0.0);
}

TEST_CASE("cli: align dimensions follow the length laws") {
    const auto dir = scratch("align");
    const auto r = slm_run({"align", "--ckpt", joint_ckpt().string(), "--manifest", manifest(), "--utterance", "utt2",
                            "--out-dir", dir.string()});
    REQUIRE(r.code == 0);
    const auto m = evalsuite::read_heatmap_csv(dir / "align_utt2.csv");
    const auto samples = frontend::load_audio(corpus_dir() / "utt2.wav").samples.size();
    const auto frames = frontend::num_frames(samples);
    CHECK(m.rows == bridge::stacked_frames(encoder::output_frames(frames), trainer::load_run_config(cfg(), {}).stack_n));
    CHECK(m.cols == std::string("sun up").size());
    const auto img = evalsuite::read_pgm(dir / "align_utt2.pgm");
    CHECK(img.width == m.cols);
    CHECK(img.height == m.rows);
    CHECK(r.out.find("monotonicity") != std::string::npos);

    CHECK(slm_run({"align", "--ckpt", joint_ckpt().string(), "--manifest", manifest(), "--utterance", "nope",
                   "--out-dir", dir.string()})
              .code == 2);
}

TEST_CASE("cli: inspect-ckpt and merged export") {
    const auto dir = scratch("inspect");
    const auto merged = dir / "merged.slmf";
    const auto r = slm_run({"inspect-ckpt", "--ckpt", joint_ckpt().string(), "--export-merged", merged.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("kind: joint") != std::string::npos);
    const auto ckpt = trainer::load_checkpoint(merged);
    for (const auto& [name, t] : ckpt.tensors) CHECK(name.rfind("lora.", 0) != 0);

    const std::string wav = (corpus_dir() / "utt1.wav").string();
    CHECK(slm_run({"transcribe", "--ckpt", merged.string(), wav}).out ==
          slm_run({"transcribe", "--ckpt", joint_ckpt().string(), wav}).out);
    CHECK(slm_run({"inspect-ckpt", "--ckpt", encoder_ckpt().string(), "--export-merged", merged.string()}).code == 2);
}
