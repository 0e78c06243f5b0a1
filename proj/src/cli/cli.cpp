#include "slm/cli/cli.hpp"

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "slm/errors.hpp"
#include "slm/evalsuite/alignment.hpp"
#include "slm/evalsuite/report.hpp"
#include "slm/numcore/log.hpp"
#include "slm/trainer/trainer.hpp"

namespace slm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string manifest;
    std::string ckpt;
    std::string out_dir = ".";
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

trainer::RunConfig load_config(const Common& c) {
    auto overrides = c.sets;
    if (c.seed) overrides.push_back("training.seed=" + std::to_string(*c.seed));
    return trainer::load_run_config(c.config, overrides);
}

fs::path ensure_out_dir(const Common& c) {
    const fs::path dir = c.out_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

std::vector<trainer::ManifestEntry> load_manifest(const Common& c, const trainer::RunConfig& config) {
    if (c.manifest.empty()) throw InputError("--manifest is required");
    return trainer::load_manifest(c.manifest, config.training.languages);
}

trainer::Checkpoint load_ckpt(const Common& c) {
    if (c.ckpt.empty()) throw InputError("--ckpt is required");
    return trainer::load_checkpoint(c.ckpt);
}

// A --config given alongside a checkpoint must describe the same model.
void check_config_matches(const Common& c, const trainer::Checkpoint& ckpt) {
    if (c.config.empty() && c.sets.empty()) return;
    const auto config = load_config(c);
    const json expected = ckpt.kind == "encoder" ? config.encoder_sections() : config.model_sections();
    if (trainer::config_digest(expected) != ckpt.digest())
        throw DataError("checkpoint config digest " + trainer::hex64(ckpt.digest()) +
                        " does not match the given configuration (" + trainer::hex64(trainer::config_digest(expected)) +
                        ")");
}

std::size_t eval_threads() { return std::max(1u, std::min(8u, std::thread::hardware_concurrency())); }

int finish_training(const trainer::TrainResult& r, const fs::path& ckpt_path, std::ostream& out) {
    if (r.interrupted) {
        out << "interrupted after step " << r.steps_run << "; resume with --resume\n";
        return kOk;
    }
    trainer::save_checkpoint(ckpt_path, r.best);
    out << ckpt_path.string() << " (best step " << r.best_step << ", valid loss " << std::setprecision(6)
        << r.best_valid_loss << ", digest " << trainer::hex64(trainer::file_digest(ckpt_path)) << ")\n";
    if (r.diverged) {
        log::error(r.message);
        return kInternal;
    }
    return kOk;
}

void add_common(CLI::App* app, Common& c, bool training) {
    app->add_option("--config", c.config, "JSON run configuration");
    app->add_option("--set", c.sets, "Override a config value, key=value (repeatable)");
    app->add_option("--out-dir", c.out_dir, "Output directory");
    if (training) app->add_option("--seed", c.seed, "Random seed (overrides training.seed)");
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Speech recognition with a decoder-only LM conditioned on audio embeddings", "slm"};
    app.require_subcommand(1);
    Common c;
    std::string resume;
    std::size_t stop_after = 0;
    std::vector<std::string> audio_paths;
    std::string utterance;
    std::string export_merged;
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    auto* pretrain = app.add_subcommand("pretrain", "Train the conformer encoder with CTC");
    add_common(pretrain, c, true);
    pretrain->add_option("--manifest", c.manifest, "Training manifest (JSON lines)");
    pretrain->add_option("--resume", resume, "Resume from a saved training state");
    pretrain->add_option("--stop-after", stop_after, "Save the training state after this step and exit");

    auto* train = app.add_subcommand("train", "Jointly train encoder, bridge and LM adapters");
    add_common(train, c, true);
    train->add_option("--manifest", c.manifest, "Training manifest (JSON lines)");
    train->add_option("--ckpt", c.ckpt, "Encoder checkpoint from pretrain");
    train->add_option("--resume", resume, "Resume from a saved training state");
    train->add_option("--stop-after", stop_after, "Save the training state after this step and exit");

    auto* transcribe = app.add_subcommand("transcribe", "Greedy-decode audio files");
    add_common(transcribe, c, false);
    transcribe->add_option("--ckpt", c.ckpt, "Joint or encoder checkpoint")->required();
    transcribe->add_option("audio", audio_paths, "WAV files")->required();

    auto* eval = app.add_subcommand("eval", "Word error rates per language");
    add_common(eval, c, false);
    eval->add_option("--ckpt", c.ckpt, "Joint or encoder checkpoint")->required();
    eval->add_option("--manifest", c.manifest, "Evaluation manifest")->required();

    auto* align = app.add_subcommand("align", "Audio/text embedding similarity heatmap");
    add_common(align, c, false);
    align->add_option("--ckpt", c.ckpt, "Joint checkpoint")->required();
    align->add_option("--manifest", c.manifest, "Manifest containing the utterance")->required();
    align->add_option("--utterance", utterance, "Utterance id")->required();

    auto* inspect = app.add_subcommand("inspect-ckpt", "Describe a checkpoint");
    inspect->add_option("--ckpt", c.ckpt, "Checkpoint")->required();
    inspect->add_option("--export-merged", export_merged, "Write a copy with adapters folded into the LM");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    }

    log::set_level(verbose ? log::Level::debug : log::Level::info);
    log::set_sink([&err](log::Level level, const std::string& msg) {
        static constexpr const char* tags[] = {"debug", "info", "warn", "error"};
        err << "[" << tags[static_cast<int>(level)] << "] " << msg << "\n";
    });
    const struct RestoreSink {
        ~RestoreSink() { log::set_sink(nullptr); }
    } restore;
    try {
        if (*pretrain) {
            const auto config = load_config(c);
            const auto manifest = load_manifest(c, config);
            const auto dir = ensure_out_dir(c);
            trainer::TrainOptions opts;
            opts.out_dir = dir;
            if (!resume.empty()) opts.resume = resume;
            opts.stop_after = stop_after;
            const auto r = trainer::pretrain_encoder(manifest, config, opts);
            return finish_training(r, dir / "encoder.slmf", out);
        }
        if (*train) {
            const auto config = load_config(c);
            const auto manifest = load_manifest(c, config);
            const auto dir = ensure_out_dir(c);
            std::optional<trainer::Checkpoint> enc;
            if (!c.ckpt.empty()) enc = trainer::load_checkpoint(c.ckpt);
            else log::warn("no --ckpt given; the encoder starts from random weights");
            std::optional<declm::CharTokenizer> tok;
            std::optional<frontend::NormStats> norm;
            if (enc) {
                tok.emplace(enc->tokenizer);
                norm = trainer::get_norm(*enc);
            }
            trainer::JointTrainer jt(config,
                                     trainer::prepare_corpus(manifest, config, tok ? &*tok : nullptr,
                                                             norm ? &*norm : nullptr),
                                     enc ? &*enc : nullptr);
            log::info("trainable LM parameters: " + std::to_string(jt.model().lm().trainable_count()));
            log::info("embedding rate: " + std::to_string(config.stack_config().frame_ms()) + " ms");
            trainer::TrainOptions opts;
            opts.out_dir = dir;
            if (!resume.empty()) opts.resume = resume;
            opts.stop_after = stop_after;
            return finish_training(jt.run(opts), dir / "model.slmf", out);
        }
        if (*transcribe) {
            const auto ckpt = load_ckpt(c);
            check_config_matches(c, ckpt);
            if (ckpt.kind == "encoder") {
                auto model = trainer::CtcModel::from_checkpoint(ckpt);
                for (const auto& p : audio_paths) out << model.transcribe(model.pipeline()(p).frames) << "\n";
            } else {
                auto model = trainer::SpeechModel::from_checkpoint(ckpt);
                for (const auto& p : audio_paths) out << model.transcribe(model.pipeline()(p).frames) << "\n";
            }
            return kOk;
        }
        if (*eval) {
            const auto ckpt = load_ckpt(c);
            check_config_matches(c, ckpt);
            const auto config = trainer::config_from_checkpoint(ckpt);
            const auto manifest = trainer::load_manifest(c.manifest, config.training.languages);
            std::vector<evalsuite::EvalItem> items;
            for (const auto& e : manifest) items.push_back({e.id, e.language, e.text, e.audio_path});
            evalsuite::EvalReport report;
            if (ckpt.kind == "encoder") {
                auto model = trainer::CtcModel::from_checkpoint(ckpt);
                report = evalsuite::eval_corpus(
                    items, [&](const evalsuite::EvalItem& it) { return model.transcribe(model.pipeline()(it.audio_path).frames); },
                    eval_threads());
            } else {
                auto model = trainer::SpeechModel::from_checkpoint(ckpt);
                report = evalsuite::eval_corpus(
                    items, [&](const evalsuite::EvalItem& it) { return model.transcribe(model.pipeline()(it.audio_path).frames); },
                    eval_threads());
            }
            report.decode_config_digest =
                trainer::hex64(trainer::config_digest({{"model", ckpt.config}, {"eval", config.to_json()["eval"]}}));
            const auto dir = ensure_out_dir(c);
            std::ofstream(dir / "report.json") << report.to_json().dump(2) << "\n";
            const std::string table = report.table(trainer::kLanguages, fs::path(c.ckpt).stem().string());
            std::ofstream(dir / "report.txt") << table;
            out << table;
            if (!report.skipped.empty()) out << report.skipped.size() << " utterance(s) skipped\n";
            return kOk;
        }
        if (*align) {
            const auto ckpt = load_ckpt(c);
            check_config_matches(c, ckpt);
            auto model = trainer::SpeechModel::from_checkpoint(ckpt);
            const auto manifest = trainer::load_manifest(c.manifest, model.config().training.languages);
            const auto it = std::find_if(manifest.begin(), manifest.end(),
                                         [&](const trainer::ManifestEntry& e) { return e.id == utterance; });
            if (it == manifest.end()) throw InputError("utterance '" + utterance + "' not in " + c.manifest);
            const auto features = model.pipeline()(it->audio_path);
            Tape<float> tape(false);
            const auto audio = model.audio_embeddings(tape, features.frames).value();
            const auto ids = model.tokenizer().encode(it->text);
            const auto text = model.text_embeddings(ids);
            const auto m = evalsuite::alignment_matrix(audio, text, it->id, model.config().stack_config().frame_ms());
            const auto files = evalsuite::export_heatmap(m, ensure_out_dir(c) / ("align_" + it->id));
            out << "alignment " << it->id << ": " << m.rows << " audio embeddings (" << features.num_frames()
                << " frames, " << m.stride_ms << " ms) x " << m.cols << " tokens\n"
                << "argmax monotonicity: " << std::setprecision(3) << evalsuite::argmax_monotonicity(m) << "\n"
                << files.csv.string() << "\n"
                << files.pgm.string() << "\n";
            return kOk;
        }
        if (*inspect) {
            auto ckpt = load_ckpt(c);
            std::size_t total = 0, adapters = 0;
            for (const auto& [name, t] : ckpt.tensors) {
                total += t.size();
                if (name.rfind("lora.", 0) == 0) adapters += t.size();
            }
            out << "kind: " << ckpt.kind << "\nconfig digest: " << trainer::hex64(ckpt.digest())
                << "\ntensors: " << ckpt.tensors.size() << " (" << total << " values, " << adapters
                << " in adapters)\nvocabulary: " << ckpt.tokenizer.size() << " characters\nconfig: "
                << ckpt.config.dump() << "\nmeta: " << ckpt.meta.dump() << "\n";
            for (const auto& [name, t] : ckpt.tensors) out << "  " << name << " " << shape_str(t.shape()) << "\n";
            if (!export_merged.empty()) {
                if (ckpt.kind != "joint") throw InputError("--export-merged needs a joint checkpoint");
                auto model = trainer::SpeechModel::from_checkpoint(ckpt);
                model.lm().merge_adapters();
                auto merged = model.to_checkpoint();
                merged.meta.update(ckpt.meta);
                merged.meta["merged"] = true;
                trainer::save_checkpoint(export_merged, merged);
                out << "merged checkpoint: " << export_merged << "\n";
            }
            return kOk;
        }
    } catch (const InputError& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kBadData;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kInternal;
}

} // namespace slm::cli
