#include "slm/trainer/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <thread>

#include "slm/ctc/ctc.hpp"
#include "slm/errors.hpp"
#include "slm/frontend/audio.hpp"
#include "slm/numcore/log.hpp"

namespace slm::trainer {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Rng streams derived from the run seed.
enum Stream : std::uint64_t {
    kSplitStream = 71,
    kBatchStream = 11,
    kDropoutStream = 12,
    kMaskStream = 13,
    kModelStream = 14,
    kTextStream = 21,
};

json nan_to_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double null_to_nan(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

std::size_t worker_count(std::size_t jobs) {
    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    return std::max<std::size_t>(1, std::min({hw, jobs, std::size_t{8}}));
}

} // namespace

Corpus prepare_corpus(const std::vector<ManifestEntry>& entries, const RunConfig& config,
                      const declm::CharTokenizer* tokenizer, const frontend::NormStats* norm) {
    struct Loaded {
        bool ok = false;
        std::string error;
        frontend::FeatureMatrix features;
        double seconds = 0.0;
    };
    std::vector<Loaded> loaded(entries.size());
    FeaturePipeline pipeline(config.frontend, {});
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < entries.size(); i = next++) {
            try {
                const auto wave = frontend::load_audio(entries[i].audio_path);
                loaded[i].seconds = wave.duration();
                loaded[i].features = pipeline.raw(wave);
                loaded[i].ok = true;
            } catch (const DataError& e) {
                loaded[i].error = e.what();
            }
        }
    };
    {
        std::vector<std::jthread> workers;
        for (std::size_t w = 0; w < worker_count(entries.size()); ++w) workers.emplace_back(work);
    }

    Corpus corpus;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (loaded[i].ok) {
            usable.push_back(i);
        } else {
            log::warn("skipping " + entries[i].id + ": " + loaded[i].error);
            ++corpus.skipped;
        }
    }
    if (usable.empty()) throw DataError("no usable utterances in the manifest");

    std::vector<std::size_t> train_idx = usable, valid_idx;
    const double want = static_cast<double>(usable.size()) * config.training.valid_fraction;
    if (want >= 1.0 && usable.size() >= 20) {
        Rng rng = Rng(config.training.seed).split(kSplitStream);
        std::vector<std::size_t> order = usable;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        const auto n_valid = static_cast<std::size_t>(std::llround(want));
        valid_idx.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
        std::sort(valid_idx.begin(), valid_idx.end());
        train_idx.clear();
        std::set_difference(usable.begin(), usable.end(), valid_idx.begin(), valid_idx.end(),
                            std::back_inserter(train_idx));
    } else {
        log::warn("manifest too small for a held-out split; validating on the training set");
        corpus.valid_is_train = true;
    }

    if (tokenizer) {
        corpus.tokenizer = *tokenizer;
    } else {
        std::vector<std::string> texts;
        for (std::size_t i : usable) texts.push_back(entries[i].text);
        corpus.tokenizer = declm::CharTokenizer::build(texts);
    }
    if (norm) {
        corpus.norm = *norm;
    } else {
        std::vector<frontend::FeatureMatrix> train_feats;
        for (std::size_t i : train_idx) train_feats.push_back(loaded[i].features);
        corpus.norm = frontend::compute_norm_stats(train_feats);
    }
    pipeline.set_norm(corpus.norm);

    auto make = [&](std::size_t i) {
        Example ex;
        ex.id = entries[i].id;
        ex.language = entries[i].language;
        ex.text = entries[i].text;
        ex.ids = corpus.tokenizer.encode(ex.text);
        try {
            ex.ctc_ids = corpus.tokenizer.encode_ctc(ex.text);
        } catch (const std::out_of_range&) {
            ex.ctc_ids.clear();
        }
        auto f = loaded[i].features;
        pipeline.normalize(f);
        ex.features = std::move(f.frames);
        ex.seconds = loaded[i].seconds;
        return ex;
    };
    for (std::size_t i : train_idx) corpus.train.push_back(make(i));
    if (corpus.valid_is_train) {
        corpus.valid = corpus.train;
    } else {
        for (std::size_t i : valid_idx) corpus.valid.push_back(make(i));
    }
    return corpus;
}

void write_training_log(const std::filesystem::path& path, const std::vector<LogRow>& rows) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write training log " + path.string());
    os << "step,lr,train_loss,valid_loss\n";
    os << std::setprecision(9);
    for (const auto& r : rows) {
        os << r.step << ',' << r.lr << ',' << r.train_loss << ',';
        if (std::isfinite(r.valid_loss)) os << r.valid_loss;
        os << '\n';
    }
}

TrainerBase::TrainerBase(RunConfig config, Corpus corpus, const StageConfig& stage, std::string stage_name)
    : config_(std::move(config)), corpus_(std::move(corpus)), stage_(stage), stage_name_(std::move(stage_name)) {
    if (corpus_.train.empty()) throw DataError(stage_name_ + ": no trainable utterances");
    std::map<std::string, double> hours;
    for (const auto& ex : corpus_.train) hours[ex.language] += ex.seconds / 3600.0;
    sampler_.emplace(hours, config_.training.sampling_alpha);
    by_language_.resize(sampler_->languages().size());
    for (std::size_t i = 0; i < corpus_.train.size(); ++i) {
        const auto& langs = sampler_->languages();
        const auto li = std::find(langs.begin(), langs.end(), corpus_.train[i].language) - langs.begin();
        by_language_[static_cast<std::size_t>(li)].push_back(i);
    }
}

std::vector<std::size_t> TrainerBase::draw_batch(Rng& rng) const {
    std::vector<std::size_t> batch;
    double seconds = 0.0;
    for (;;) {
        const auto& pool = by_language_[sampler_->draw(rng)];
        const std::size_t idx = pool[rng.below(pool.size())];
        const double s = corpus_.train[idx].seconds;
        if (!batch.empty() && seconds + s > stage_.batch_seconds) break;
        batch.push_back(idx);
        seconds += s;
    }
    return batch;
}

TrainResult TrainerBase::run(const TrainOptions& options) {
    const auto& schedule = stage_.schedule;
    Rng root(config_.training.seed);
    Rng batch_rng = root.split(kBatchStream);
    Rng dropout_rng = root.split(kDropoutStream);
    Rng mask_rng = root.split(kMaskStream);

    TrainResult result;
    std::size_t start = 0;
    std::size_t bad_evals = 0;
    result.best_valid_loss = std::numeric_limits<double>::infinity();
    std::optional<Checkpoint> resumed;

    if (options.resume) {
        resumed = load_checkpoint(*options.resume);
        const Checkpoint& st = *resumed;
        if (st.kind != "train_state" || st.meta.value("stage", "") != stage_name_)
            throw DataError(options.resume->string() + " is not a " + stage_name_ + " training state");
        if (st.digest() != config_digest(snapshot().config))
            throw DataError("training state config digest does not match the current configuration");
        st.get(all_parameters(), "param/");
        const auto& m = st.meta;
        start = m.at("step").get<std::size_t>();
        batch_rng.load_state(m.at("rng_batch").get<std::string>());
        dropout_rng.load_state(m.at("rng_dropout").get<std::string>());
        mask_rng.load_state(m.at("rng_mask").get<std::string>());
        bad_evals = m.at("bad_evals").get<std::size_t>();
        result.best_step = m.at("best_step").get<std::size_t>();
        result.best_valid_loss = m.at("best_valid").is_null() ? std::numeric_limits<double>::infinity()
                                                               : m.at("best_valid").get<double>();
        for (const auto& row : m.at("history"))
            result.log.push_back({row[0].get<std::size_t>(), row[1].get<double>(), null_to_nan(row[2]),
                                  null_to_nan(row[3])});
        Checkpoint best;
        best.kind = m.at("best_kind").get<std::string>();
        best.config = m.at("best_config");
        best.meta = m.at("best_meta");
        best.tokenizer = st.tokenizer;
        const std::string prefix = "best/";
        for (const auto& [name, t] : st.tensors)
            if (name.rfind(prefix, 0) == 0) best.tensors[name.substr(prefix.size())] = t;
        result.best = std::move(best);
    } else {
        before_training();
        result.best = snapshot();
    }

    nn::ParamList<float> params = trainable_parameters();
    Adam<float> adam(params, AdamConfig{0.9, 0.98, 1e-9, config_.training.clip_norm});
    if (resumed && resumed->meta.at("adam_step").get<std::size_t>() > 0) {
        auto& s = adam.state();
        s.step = resumed->meta.at("adam_step").get<std::size_t>();
        for (auto* p : params) {
            s.m.push_back(resumed->tensor("adam.m/" + p->name));
            s.v.push_back(resumed->tensor("adam.v/" + p->name));
        }
    }
    log::info(stage_name_ + ": " + std::to_string(corpus_.train.size()) + " train / " +
              std::to_string(corpus_.valid.size()) + " valid utterances, " +
              std::to_string(nn::count_params(params, true)) + " trainable parameters");

    auto save_state = [&](std::size_t step) {
        Checkpoint st;
        st.kind = "train_state";
        st.config = snapshot().config;
        st.tokenizer = corpus_.tokenizer.chars();
        st.put(all_parameters(), "param/");
        const auto& s = adam.state();
        for (std::size_t i = 0; i < s.m.size(); ++i) {
            st.tensors["adam.m/" + params[i]->name] = s.m[i];
            st.tensors["adam.v/" + params[i]->name] = s.v[i];
        }
        for (const auto& [name, t] : result.best.tensors) st.tensors["best/" + name] = t;
        json history = json::array();
        for (const auto& r : result.log)
            history.push_back({r.step, r.lr, nan_to_null(r.train_loss), nan_to_null(r.valid_loss)});
        st.meta = {{"stage", stage_name_},
                   {"step", step},
                   {"adam_step", s.step},
                   {"rng_batch", batch_rng.save_state()},
                   {"rng_dropout", dropout_rng.save_state()},
                   {"rng_mask", mask_rng.save_state()},
                   {"bad_evals", bad_evals},
                   {"best_step", result.best_step},
                   {"best_valid", nan_to_null(result.best_valid_loss)},
                   {"best_kind", result.best.kind},
                   {"best_config", result.best.config},
                   {"best_meta", result.best.meta},
                   {"history", history}};
        const auto path = options.out_dir / (stage_name_ + "_state.slmf");
        save_checkpoint(path, st);
        log::info(stage_name_ + ": saved training state at step " + std::to_string(step) + " to " + path.string());
    };

    for (std::size_t step = start + 1; step <= schedule.total_steps; ++step) {
        const double lr = schedule_lr(schedule, step);
        const auto batch = draw_batch(batch_rng);
        adam.zero_grad();
        double sum = 0.0;
        std::size_t used = 0;
        const float inv = 1.0f / static_cast<float>(batch.size());
        for (std::size_t idx : batch) {
            Tape<float> tape;
            Var<float> loss = example_loss(tape, corpus_.train[idx], &dropout_rng, mask_rng);
            if (!loss) continue;
            if (!std::isfinite(loss.item())) {
                result.diverged = true;
                result.message = stage_name_ + ": non-finite loss at step " + std::to_string(step) + " on " +
                                 corpus_.train[idx].id;
                break;
            }
            tape.backward(ad::scale(loss, inv));
            sum += loss.item();
            ++used;
        }
        if (!result.diverged) {
            const auto update = adam.step(lr);
            if (!update.applied) {
                result.diverged = true;
                result.message = stage_name_ + ": update rejected at step " + std::to_string(step) + " (" +
                                 update.diagnostic + ")";
            }
        }
        if (result.diverged) {
            log::error(result.message + "; keeping the last good checkpoint");
            break;
        }
        result.steps_run = step;
        LogRow row{step, lr, used ? sum / static_cast<double>(used) : kNaN, kNaN};
        bool stop = false;
        if (step % config_.training.eval_interval == 0 || step == schedule.total_steps) {
            const double v = validation_loss();
            row.valid_loss = v;
            if (!std::isfinite(v)) {
                result.diverged = true;
                result.message = stage_name_ + ": non-finite validation loss at step " + std::to_string(step);
                log::error(result.message + "; keeping the last good checkpoint");
                result.log.push_back(row);
                break;
            }
            if (v < result.best_valid_loss) {
                result.best_valid_loss = v;
                result.best_step = step;
                result.best = snapshot();
                bad_evals = 0;
            } else {
                ++bad_evals;
            }
            log::info(stage_name_ + " step " + std::to_string(step) + ": train " + std::to_string(row.train_loss) +
                      " valid " + std::to_string(v) + " lr " + std::to_string(lr));
            if (options.on_eval && options.on_eval(step, v)) stop = true;
            if (bad_evals >= config_.training.patience) {
                result.stopped_early = true;
                stop = true;
                log::info(stage_name_ + ": no improvement in " + std::to_string(bad_evals) + " evaluations, stopping");
            }
        }
        result.log.push_back(row);
        if (options.stop_after == step && !stop) {
            if (options.out_dir.empty()) throw InputError("stop_after needs an output directory for the state");
            save_state(step);
            result.interrupted = true;
            break;
        }
        if (stop) break;
    }

    result.best.meta["best_step"] = result.best_step;
    result.best.meta["best_valid_loss"] = nan_to_null(result.best_valid_loss);
    if (!options.out_dir.empty()) write_training_log(options.out_dir / (stage_name_ + "_log.csv"), result.log);
    return result;
}

namespace {

Corpus drop_ctc_infeasible(Corpus corpus, const RunConfig& config) {
    auto bad = [&](const Example& ex) {
        const std::size_t frames = encoder::output_frames(ex.features.rows(), config.encoder.subsample_stride);
        if (ex.ctc_ids.empty() || ctc::min_frames(ex.ctc_ids) > frames) {
            log::warn("ctc: skipping " + ex.id + " (transcript cannot fit " + std::to_string(frames) + " frames)");
            return true;
        }
        return false;
    };
    std::erase_if(corpus.train, bad);
    std::erase_if(corpus.valid, bad);
    return corpus;
}

Corpus drop_lm_overflow(Corpus corpus, const RunConfig& config) {
    const std::size_t max_pos = config.lm.max_positions;
    auto bad = [&](const Example& ex) {
        const std::size_t m = bridge::stacked_frames(
            encoder::output_frames(ex.features.rows(), config.encoder.subsample_stride), config.stack_n);
        if (m + ex.ids.size() + 1 > max_pos) {
            log::warn("joint: skipping " + ex.id + " (audio M=" + std::to_string(m) + " + text length " +
                      std::to_string(ex.ids.size() + 1) + " exceeds max_positions)");
            return true;
        }
        return false;
    };
    std::erase_if(corpus.train, bad);
    std::erase_if(corpus.valid, bad);
    return corpus;
}

} // namespace

CtcTrainer::CtcTrainer(const RunConfig& config, Corpus corpus)
    : TrainerBase(config, drop_ctc_infeasible(std::move(corpus), config), config.training.pretrain, "pretrain"),
      model_([&] {
          Rng rng = Rng(config.training.seed).split(kModelStream);
          return CtcModel(config_, corpus_.tokenizer, corpus_.norm, rng);
      }()) {}

Var<float> CtcTrainer::example_loss(Tape<float>& tape, const Example& ex, Rng* dropout_rng, Rng&) {
    auto out = model_.encoder().encode(tape, ex.features, dropout_rng);
    return ctc::ctc_loss_op(ad::log_softmax_rows(out.ctc_logits), ex.ctc_ids);
}

double CtcTrainer::validation_loss() {
    if (corpus_.valid.empty()) return kNaN;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& ex : corpus_.valid) {
        Tape<float> tape(false);
        auto out = model_.encoder().encode(tape, ex.features);
        bool feasible = true;
        auto loss = ctc::ctc_loss_op(ad::log_softmax_rows(out.ctc_logits), ex.ctc_ids, &feasible);
        if (!feasible) continue;
        sum += loss.item();
        ++n;
    }
    return n ? sum / static_cast<double>(n) : kNaN;
}

JointTrainer::JointTrainer(const RunConfig& config, Corpus corpus, const Checkpoint* encoder_ckpt)
    : TrainerBase(config, drop_lm_overflow(std::move(corpus), config), config.training.joint, "joint"),
      model_([&] {
          Rng rng = Rng(config.training.seed).split(kModelStream);
          return SpeechModel(config_, corpus_.tokenizer, corpus_.norm, rng);
      }()) {
    if (encoder_ckpt) model_.load_encoder(*encoder_ckpt);
}

void JointTrainer::before_training() {
    if (config_.training.lm_text_steps > 0)
        pretrain_lm_on_text(model_.lm(), corpus_.train, config_.training.lm_text_steps, config_.training.lm_text_lr,
                            Rng(config_.training.seed).split(kTextStream).next_u64());
}

Var<float> JointTrainer::example_loss(Tape<float>& tape, const Example& ex, Rng* dropout_rng, Rng& mask_rng) {
    const int unk = model_.lm().config().unk_id;
    const auto inputs =
        mask_tokens(ex.ids, config_.training.mask_fraction_for(ex.language), unk, mask_rng, declm::CharTokenizer::kNumSpecial);
    for (std::size_t i = 0; i < inputs.size(); ++i)
        if (inputs[i] != ex.ids[i] && inputs[i] != unk)
            throw std::logic_error("masking altered a token other than by unk replacement");
    return model_.loss(tape, ex.features, inputs, ex.ids, dropout_rng);
}

double JointTrainer::mean_loss(const std::vector<Example>& examples) {
    if (examples.empty()) return kNaN;
    double sum = 0.0;
    for (const auto& ex : examples) {
        Tape<float> tape(false);
        sum += model_.loss(tape, ex.features, ex.ids, ex.ids).item();
    }
    return sum / static_cast<double>(examples.size());
}

void pretrain_lm_on_text(declm::DecoderLM<float>& lm, const std::vector<Example>& examples, std::size_t steps,
                         double lr, std::uint64_t seed) {
    if (examples.empty() || steps == 0) return;
    lm.set_base_trainable(true);
    nn::ParamList<float> params;
    for (auto* p : lm.parameters())
        if (p->name.rfind("lora.", 0) != 0) params.push_back(p);
    Adam<float> adam(params, AdamConfig{});
    const LrSchedule schedule{lr, lr / 10, std::max<std::size_t>(1, steps / 10), steps + 1};
    Rng rng(seed);
    const std::size_t batch = std::min<std::size_t>(16, examples.size());
    double last = 0.0;
    for (std::size_t step = 1; step <= steps; ++step) {
        adam.zero_grad();
        last = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& ex = examples[rng.below(examples.size())];
            Tape<float> tape;
            auto loss = lm.loss(tape, Var<float>(), ex.ids);
            tape.backward(ad::scale(loss, 1.0f / static_cast<float>(batch)));
            last += loss.item() / static_cast<double>(batch);
        }
        adam.step(schedule_lr(schedule, step));
    }
    for (auto* p : params) p->zero_grad();
    lm.set_base_trainable(!lm.config().freeze_base);
    log::info("lm text pretraining: " + std::to_string(steps) + " steps, final loss " + std::to_string(last));
}

TrainResult pretrain_encoder(const std::vector<ManifestEntry>& manifest, const RunConfig& config,
                             const TrainOptions& options) {
    CtcTrainer trainer(config, prepare_corpus(manifest, config));
    return trainer.run(options);
}

TrainResult train_joint(const std::vector<ManifestEntry>& manifest, const RunConfig& config,
                        const Checkpoint* encoder_ckpt, const TrainOptions& options) {
    std::optional<declm::CharTokenizer> tok;
    std::optional<frontend::NormStats> norm;
    if (encoder_ckpt) {
        tok.emplace(encoder_ckpt->tokenizer);
        norm = get_norm(*encoder_ckpt);
    }
    JointTrainer trainer(config, prepare_corpus(manifest, config, tok ? &*tok : nullptr, norm ? &*norm : nullptr),
                         encoder_ckpt);
    return trainer.run(options);
}

} // namespace slm::trainer
