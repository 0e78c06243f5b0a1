#include "slm/trainer/config.hpp"

#include <fstream>

#include "slm/errors.hpp"
#include "slm/trainer/manifest.hpp"

namespace slm::trainer {

using nlohmann::json;

namespace {

json schedule_json(const StageConfig& s) {
    return {{"peak_lr", s.schedule.peak_lr},
            {"final_lr", s.schedule.final_lr},
            {"warmup_steps", s.schedule.warmup_steps},
            {"total_steps", s.schedule.total_steps},
            {"batch_seconds", s.batch_seconds}};
}

StageConfig schedule_from(const json& j) {
    StageConfig s;
    s.schedule.peak_lr = j.at("peak_lr").get<double>();
    s.schedule.final_lr = j.at("final_lr").get<double>();
    s.schedule.warmup_steps = j.at("warmup_steps").get<std::size_t>();
    s.schedule.total_steps = j.at("total_steps").get<std::size_t>();
    s.batch_seconds = j.at("batch_seconds").get<double>();
    return s;
}

// Keys below these paths are free-form maps.
bool open_map(const std::string& path) { return path == "training.mask_overrides"; }

} // namespace

double TrainingConfig::mask_fraction_for(const std::string& language) const {
    auto it = mask_overrides.find(language);
    return it == mask_overrides.end() ? mask_fraction : it->second;
}

RunConfig::RunConfig() { training.languages = kLanguages; }

json RunConfig::to_json() const {
    json j;
    j["frontend"] = {{"window", frontend.window},     {"hop", frontend.hop},   {"fft_size", frontend.fft_size},
                     {"num_mel", frontend.num_mel},   {"fmin", frontend.fmin}, {"fmax", frontend.fmax},
                     {"log_floor", frontend.log_floor}};
    j["encoder"] = {{"num_layers", encoder.num_layers},
                    {"d_model", encoder.d_model},
                    {"ffn_dim", encoder.ffn_dim},
                    {"conv_kernel", encoder.conv_kernel},
                    {"num_heads", encoder.num_heads},
                    {"subsample_channels", encoder.subsample_channels},
                    {"max_frames", encoder.max_frames},
                    {"dropout", encoder.dropout}};
    j["bridge"] = {{"stack_n", stack_n}};
    j["lm"] = {{"preset", lm.preset},       {"d_llm", lm.d_llm},
               {"num_layers", lm.num_layers}, {"num_heads", lm.num_heads},
               {"ffn_dim", lm.ffn_dim},     {"max_positions", lm.max_positions},
               {"dropout", lm.dropout}};
    j["lora"] = {{"rank", lora.rank}, {"alpha", lora.alpha}};
    j["training"] = {{"seed", training.seed},
                     {"mask_fraction", training.mask_fraction},
                     {"mask_overrides", training.mask_overrides},
                     {"sampling_alpha", training.sampling_alpha},
                     {"valid_fraction", training.valid_fraction},
                     {"eval_interval", training.eval_interval},
                     {"patience", training.patience},
                     {"clip_norm", training.clip_norm},
                     {"lm_text_steps", training.lm_text_steps},
                     {"lm_text_lr", training.lm_text_lr},
                     {"pretrain", schedule_json(training.pretrain)},
                     {"joint", schedule_json(training.joint)},
                     {"languages", training.languages}};
    j["eval"] = {{"max_len", eval.max_len}};
    return j;
}

RunConfig RunConfig::from_json(const json& patch) {
    RunConfig c;
    json j = c.to_json();
    merge_strict(j, patch);
    try {
        const auto& f = j["frontend"];
        c.frontend.window = f["window"].get<std::size_t>();
        c.frontend.hop = f["hop"].get<std::size_t>();
        c.frontend.fft_size = f["fft_size"].get<std::size_t>();
        c.frontend.num_mel = f["num_mel"].get<std::size_t>();
        c.frontend.fmin = f["fmin"].get<double>();
        c.frontend.fmax = f["fmax"].get<double>();
        c.frontend.log_floor = f["log_floor"].get<double>();
        const auto& e = j["encoder"];
        c.encoder.num_layers = e["num_layers"].get<std::size_t>();
        c.encoder.d_model = e["d_model"].get<std::size_t>();
        c.encoder.ffn_dim = e["ffn_dim"].get<std::size_t>();
        c.encoder.conv_kernel = e["conv_kernel"].get<std::size_t>();
        c.encoder.num_heads = e["num_heads"].get<std::size_t>();
        c.encoder.subsample_channels = e["subsample_channels"].get<std::size_t>();
        c.encoder.max_frames = e["max_frames"].get<std::size_t>();
        c.encoder.dropout = e["dropout"].get<double>();
        c.stack_n = j["bridge"]["stack_n"].get<std::size_t>();
        const auto& l = j["lm"];
        c.lm.preset = l["preset"].get<std::string>();
        c.lm.d_llm = l["d_llm"].get<std::size_t>();
        c.lm.num_layers = l["num_layers"].get<std::size_t>();
        c.lm.num_heads = l["num_heads"].get<std::size_t>();
        c.lm.ffn_dim = l["ffn_dim"].get<std::size_t>();
        c.lm.max_positions = l["max_positions"].get<std::size_t>();
        c.lm.dropout = l["dropout"].get<double>();
        c.lora.rank = j["lora"]["rank"].get<std::size_t>();
        c.lora.alpha = j["lora"]["alpha"].get<double>();
        const auto& t = j["training"];
        c.training.seed = t["seed"].get<std::uint64_t>();
        c.training.mask_fraction = t["mask_fraction"].get<double>();
        c.training.mask_overrides = t["mask_overrides"].get<std::map<std::string, double>>();
        c.training.sampling_alpha = t["sampling_alpha"].get<double>();
        c.training.valid_fraction = t["valid_fraction"].get<double>();
        c.training.eval_interval = t["eval_interval"].get<std::size_t>();
        c.training.patience = t["patience"].get<std::size_t>();
        c.training.clip_norm = t["clip_norm"].get<double>();
        c.training.lm_text_steps = t["lm_text_steps"].get<std::size_t>();
        c.training.lm_text_lr = t["lm_text_lr"].get<double>();
        c.training.pretrain = schedule_from(t["pretrain"]);
        c.training.joint = schedule_from(t["joint"]);
        c.training.languages = t["languages"].get<std::vector<std::string>>();
        c.eval.max_len = j["eval"]["max_len"].get<std::size_t>();
    } catch (const json::exception& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

void RunConfig::validate() const {
    if (frontend.window == 0 || frontend.hop == 0 || frontend.fft_size < frontend.window || frontend.num_mel == 0)
        throw InputError("config: invalid frontend framing");
    if (!(frontend.fmax > frontend.fmin)) throw InputError("config: frontend fmax must exceed fmin");
    if (stack_n < 1) throw InputError("config: bridge.stack_n must be at least 1");
    if (lm.max_positions < 2) throw InputError("config: lm.max_positions must be at least 2");
    if (!(training.mask_fraction >= 0 && training.mask_fraction <= 1))
        throw InputError("config: training.mask_fraction must be in [0, 1]");
    for (const auto& [lang, f] : training.mask_overrides)
        if (!(f >= 0 && f <= 1)) throw InputError("config: mask override for " + lang + " must be in [0, 1]");
    if (!(training.sampling_alpha >= 0 && training.sampling_alpha <= 1))
        throw InputError("config: training.sampling_alpha must be in [0, 1]");
    if (!(training.valid_fraction >= 0 && training.valid_fraction < 1))
        throw InputError("config: training.valid_fraction must be in [0, 1)");
    if (training.eval_interval == 0) throw InputError("config: training.eval_interval must be positive");
    for (const auto* s : {&training.pretrain, &training.joint}) {
        if (!(s->batch_seconds > 0)) throw InputError("config: batch_seconds must be positive");
        try {
            s->schedule.validate();
        } catch (const std::invalid_argument& e) {
            throw InputError(std::string("config: ") + e.what());
        }
    }
    if (training.languages.empty()) throw InputError("config: training.languages is empty");
    if (eval.max_len == 0) throw InputError("config: eval.max_len must be positive");
    try {
        encoder_config(1).validate();
    } catch (const std::invalid_argument& e) {
        throw InputError(std::string("config: ") + e.what());
    }
    (void)lm_config(8);
}

json RunConfig::encoder_sections() const {
    const json j = to_json();
    return {{"frontend", j["frontend"]}, {"encoder", j["encoder"]}};
}

json RunConfig::model_sections() const {
    const json j = to_json();
    return {{"frontend", j["frontend"]}, {"encoder", j["encoder"]}, {"bridge", j["bridge"]},
            {"lm", j["lm"]},             {"lora", j["lora"]}};
}

encoder::EncoderConfig RunConfig::encoder_config(std::size_t ctc_vocab) const {
    encoder::EncoderConfig e = encoder;
    e.input_dim = frontend.num_mel;
    e.ctc_vocab = ctc_vocab;
    return e;
}

bridge::StackConfig RunConfig::stack_config() const {
    return {stack_n, encoder.d_model, lm_config(8).d_llm};
}

declm::LmConfig RunConfig::lm_config(std::size_t vocab_size) const {
    declm::LmConfig c = declm::lm_preset(lm.preset, vocab_size);
    if (lm.d_llm) c.d_llm = lm.d_llm;
    if (lm.num_layers) c.num_layers = lm.num_layers;
    if (lm.num_heads) c.num_heads = lm.num_heads;
    if (lm.ffn_dim) c.ffn_dim = lm.ffn_dim;
    c.max_positions = lm.max_positions;
    c.dropout = lm.dropout;
    c.lora = lora;
    c.validate();
    return c;
}

const std::map<std::string, std::string>& override_aliases() {
    static const std::map<std::string, std::string> aliases{
        {"stack_n", "bridge.stack_n"},        {"encoder_layers", "encoder.num_layers"},
        {"lora_rank", "lora.rank"},           {"lora_alpha", "lora.alpha"},
        {"mask_fraction", "training.mask_fraction"}, {"lm_preset", "lm.preset"},
        {"seed", "training.seed"},
    };
    return aliases;
}

void merge_strict(json& base, const json& patch, const std::string& path) {
    if (!patch.is_object()) throw InputError("config: expected an object at '" + (path.empty() ? "<root>" : path) + "'");
    for (const auto& [key, value] : patch.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) {
            if (open_map(path)) {
                base[key] = value;
                continue;
            }
            throw InputError("config: unknown key '" + here + "'");
        }
        json& slot = base[key];
        if (slot.is_object() && !open_map(here)) {
            merge_strict(slot, value, here);
        } else {
            if (slot.is_number() && !value.is_number())
                throw InputError("config: '" + here + "' expects a number");
            if (slot.is_string() && !value.is_string()) throw InputError("config: '" + here + "' expects a string");
            slot = value;
        }
    }
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw InputError("--set expects key=value, got '" + assignment + "'");
    std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    if (auto it = override_aliases().find(key); it != override_aliases().end()) key = it->second;
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    // build a nested patch from the dotted path
    json patch = value;
    std::vector<std::string> parts;
    for (std::size_t start = 0;;) {
        const auto dot = key.find('.', start);
        parts.push_back(key.substr(start, dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
    merge_strict(config, patch);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json j = RunConfig().to_json();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw InputError("config not found: " + path.string());
        json file = json::parse(is, nullptr, false);
        if (file.is_discarded()) throw InputError("config: " + path.string() + " is not valid JSON");
        merge_strict(j, file);
    }
    for (const auto& o : overrides) apply_override(j, o);
    return RunConfig::from_json(j);
}

} // namespace slm::trainer
