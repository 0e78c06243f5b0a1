#include "slm/declm/lm.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "slm/errors.hpp"
#include "slm/numcore/kernels.hpp"

namespace slm::declm {

void LmConfig::validate() const {
    if (vocab_size <= static_cast<std::size_t>(std::max({pad_id, unk_id, bos_id, eos_id})))
        throw InputError("lm: vocab_size " + std::to_string(vocab_size) + " does not cover the special ids");
    if (d_llm == 0 || num_heads == 0 || d_llm % num_heads != 0)
        throw InputError("lm: d_llm " + std::to_string(d_llm) + " not divisible by num_heads " +
                         std::to_string(num_heads));
    if (num_layers == 0 || ffn_dim == 0) throw InputError("lm: num_layers and ffn_dim must be positive");
    if (max_positions < 2) throw InputError("lm: max_positions must be at least 2");
    if (lora.rank > 0 && lora.alpha <= 0) throw InputError("lm: lora alpha must be positive");
    if (dropout < 0 || dropout >= 1) throw InputError("lm: dropout must be in [0, 1)");
}

LmConfig lm_preset(std::string_view name, std::size_t vocab_size) {
    LmConfig c;
    c.vocab_size = vocab_size;
    if (name == "tiny") {
        c.d_llm = 64;
        c.num_layers = 2;
        c.num_heads = 4;
        c.ffn_dim = 256;
    } else if (name == "small") {
        c.d_llm = 128;
        c.num_layers = 2;
        c.num_heads = 4;
        c.ffn_dim = 512;
    } else if (name == "base") {
        c.d_llm = 256;
        c.num_layers = 4;
        c.num_heads = 8;
        c.ffn_dim = 1024;
    } else {
        throw InputError("unknown lm preset '" + std::string(name) + "' (tiny, small, base)");
    }
    return c;
}

std::vector<std::string> lm_preset_names() { return {"tiny", "small", "base"}; }

std::vector<LmShape> reference_lm_shapes() {
    return {
        {"llama-7b", 4096, 32, 32, 11008},
        {"bloom-560m", 1024, 24, 16, 4096},
        {"bloom-1b7", 2048, 24, 16, 8192},
        {"bloom-7b1", 4096, 30, 32, 16384},
    };
}

std::optional<LmShape> reference_lm_shape(std::string_view name) {
    for (auto& s : reference_lm_shapes())
        if (s.name == name) return s;
    return std::nullopt;
}

std::size_t lora_param_count(std::size_t d_model, std::size_t num_layers, std::size_t rank) {
    return rank * (d_model + d_model) * 4 * num_layers;
}

template <typename T>
DecoderLM<T>::DecoderLM(const LmConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_llm;
    const double std_embed = 1.0 / std::sqrt(static_cast<double>(d));
    tok_embed_ = Parameter<T>("lm.tok_embed", nn::normal_init<T>({config_.vocab_size, d}, std_embed, rng));
    pos_embed_ = Parameter<T>("lm.pos_embed", nn::normal_init<T>({config_.max_positions, d}, 0.1 * std_embed, rng));
    blocks_.reserve(config_.num_layers);
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
        const std::string p = "lm.layers." + std::to_string(i);
        const std::string a = "lora.layers." + std::to_string(i);
        LmBlock<T> b;
        b.attn_norm = nn::LayerNorm<T>(p + ".attn_norm", d);
        b.q = LoraLinear<T>(p + ".attn.q", a + ".attn.q", d, d, config_.lora, rng);
        b.k = LoraLinear<T>(p + ".attn.k", a + ".attn.k", d, d, config_.lora, rng);
        b.v = LoraLinear<T>(p + ".attn.v", a + ".attn.v", d, d, config_.lora, rng);
        b.o = LoraLinear<T>(p + ".attn.o", a + ".attn.o", d, d, config_.lora, rng);
        b.ffn_norm = nn::LayerNorm<T>(p + ".ffn_norm", d);
        b.ffn_in = nn::Linear<T>(p + ".ffn.in", d, config_.ffn_dim, rng);
        b.ffn_out = nn::Linear<T>(p + ".ffn.out", config_.ffn_dim, d, rng);
        blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::LayerNorm<T>("lm.final_norm", d);
    head_ = nn::Linear<T>("lm.head", d, config_.vocab_size, rng);
    set_base_trainable(!config_.freeze_base);
}

template <typename T>
void DecoderLM<T>::check_fits(std::size_t audio_rows, std::size_t text_len) const {
    if (audio_rows + text_len > config_.max_positions)
        throw InputError("lm: sequence overflow, audio M=" + std::to_string(audio_rows) + " + text length " +
                         std::to_string(text_len) + " exceeds max_positions " +
                         std::to_string(config_.max_positions));
}

template <typename T>
Var<T> DecoderLM<T>::embed(Tape<T>& tape, Var<T> audio, std::span<const int> ids, std::size_t pos0) {
    const std::size_t m = audio ? audio.rows() : 0;
    if (m > 0 && audio.cols() != config_.d_llm)
        throw ShapeError("lm: audio embeddings " + shape_str(audio.shape()) + " vs d_llm " +
                         std::to_string(config_.d_llm));
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= config_.vocab_size)
            throw InputError("lm: token id " + std::to_string(id) + " outside vocabulary");
    std::vector<Var<T>> parts;
    if (m > 0) parts.push_back(audio);
    if (!ids.empty()) parts.push_back(ad::embedding(tape.param(tok_embed_), ids));
    Var<T> x = parts.size() == 1 ? parts[0] : ad::concat_rows<T>(parts);
    std::vector<int> positions(x.rows());
    std::iota(positions.begin(), positions.end(), static_cast<int>(pos0));
    return ad::add(x, ad::embedding(tape.param(pos_embed_), std::span<const int>(positions)));
}

template <typename T>
Var<T> DecoderLM<T>::run_blocks(Var<T> h, KvCache* cache, Rng* dropout_rng) {
    auto& tape = h.tape();
    const double p = dropout_rng ? config_.dropout : 0.0;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        LmBlock<T>& b = blocks_[l];
        Var<T> a = b.attn_norm(h);
        Var<T> q = b.q(a), k = b.k(a), v = b.v(a);
        if (cache) {
            auto append = [](Tensor<T>& store, const Tensor<T>& rows) {
                std::vector<T> data = store.vec();
                data.insert(data.end(), rows.vec().begin(), rows.vec().end());
                store = Tensor<T>(Shape{store.rows() + rows.rows(), rows.cols()}, std::move(data));
            };
            append(cache->k[l], k.value());
            append(cache->v[l], v.value());
            k = tape.constant(cache->k[l]);
            v = tape.constant(cache->v[l]);
        }
        Var<T> att = b.o(ad::attention(q, k, v, config_.num_heads, true));
        if (p > 0) att = ad::dropout(att, p, *dropout_rng);
        h = ad::add(h, att);
        Var<T> f = b.ffn_out(ad::swish(b.ffn_in(b.ffn_norm(h))));
        if (p > 0) f = ad::dropout(f, p, *dropout_rng);
        h = ad::add(h, f);
    }
    return h;
}

template <typename T>
Var<T> DecoderLM<T>::forward(Tape<T>& tape, Var<T> audio, std::span<const int> ids, Rng* dropout_rng) {
    const std::size_t m = audio ? audio.rows() : 0;
    check_fits(m, ids.size());
    if (m + ids.size() == 0) throw InputError("lm: empty sequence");
    Var<T> h = run_blocks(embed(tape, audio, ids, 0), nullptr, dropout_rng);
    return head_(final_norm_(h));
}

template <typename T>
Var<T> DecoderLM<T>::loss(Tape<T>& tape, Var<T> audio, std::span<const int> text, Rng* dropout_rng) {
    return loss(tape, audio, text, text, dropout_rng);
}

template <typename T>
Var<T> DecoderLM<T>::loss(Tape<T>& tape, Var<T> audio, std::span<const int> inputs, std::span<const int> targets,
                          Rng* dropout_rng) {
    if (inputs.size() != targets.size())
        throw ShapeError("lm loss: " + std::to_string(inputs.size()) + " inputs vs " +
                         std::to_string(targets.size()) + " targets");
    const std::size_t m = audio ? audio.rows() : 0;
    std::vector<int> in{config_.bos_id};
    in.insert(in.end(), inputs.begin(), inputs.end());
    std::vector<int> out(m, -1);
    out.insert(out.end(), targets.begin(), targets.end());
    out.push_back(config_.eos_id);
    Var<T> logits = forward(tape, audio, in, dropout_rng);
    return ad::cross_entropy(logits, std::span<const int>(out));
}

template <typename T>
std::vector<int> DecoderLM<T>::greedy_decode(const Tensor<T>& audio, std::size_t max_len) {
    const std::size_t m = audio.empty() ? 0 : audio.rows();
    check_fits(m, 1);
    KvCache cache;
    cache.k.assign(blocks_.size(), Tensor<T>(Shape{0, config_.d_llm}));
    cache.v.assign(blocks_.size(), Tensor<T>(Shape{0, config_.d_llm}));
    std::vector<int> out;
    int next = config_.bos_id;
    for (std::size_t step = 0; step < max_len && m + step < config_.max_positions; ++step) {
        Tape<T> tape(false);
        Var<T> a;
        if (step == 0 && m > 0) a = tape.constant(audio);
        const int ids[1] = {next};
        Var<T> h = run_blocks(embed(tape, a, ids, cache.length), &cache, nullptr);
        cache.length += h.rows();
        Var<T> last = ad::slice_rows(h, h.rows() - 1, h.rows());
        Var<T> logits = head_(final_norm_(last));
        next = static_cast<int>(kernels::argmax(logits.value().data(), config_.vocab_size));
        if (next == config_.eos_id) break;
        out.push_back(next);
    }
    return out;
}

template <typename T>
std::vector<int> DecoderLM<T>::greedy_decode_uncached(const Tensor<T>& audio, std::size_t max_len) {
    const std::size_t m = audio.empty() ? 0 : audio.rows();
    check_fits(m, 1);
    std::vector<int> seq{config_.bos_id};
    for (std::size_t step = 0; step < max_len && m + step < config_.max_positions; ++step) {
        Tape<T> tape(false);
        Var<T> a = m > 0 ? tape.constant(audio) : Var<T>();
        Var<T> h = run_blocks(embed(tape, a, seq, 0), nullptr, nullptr);
        Var<T> last = ad::slice_rows(h, h.rows() - 1, h.rows());
        Var<T> logits = head_(final_norm_(last));
        const int next = static_cast<int>(kernels::argmax(logits.value().data(), config_.vocab_size));
        if (next == config_.eos_id) break;
        seq.push_back(next);
    }
    return {seq.begin() + 1, seq.end()};
}

template <typename T>
void DecoderLM<T>::merge_adapters() {
    for (auto& b : blocks_)
        for (auto* lin : {&b.q, &b.k, &b.v, &b.o}) lin->merge();
}

template <typename T>
bool DecoderLM<T>::has_adapters() const {
    for (const auto& b : blocks_)
        if (b.q.adapter || b.k.adapter || b.v.adapter || b.o.adapter) return true;
    return false;
}

template <typename T>
void DecoderLM<T>::set_base_trainable(bool trainable) {
    nn::ParamList<T> ps;
    ps.push_back(&tok_embed_);
    ps.push_back(&pos_embed_);
    for (auto& b : blocks_) {
        b.attn_norm.collect(ps);
        for (auto* lin : {&b.q, &b.k, &b.v, &b.o}) lin->collect_base(ps);
        b.ffn_norm.collect(ps);
        b.ffn_in.collect(ps);
        b.ffn_out.collect(ps);
    }
    final_norm_.collect(ps);
    head_.collect(ps);
    for (auto* p : ps) p->trainable = trainable;
}

template <typename T>
nn::ParamList<T> DecoderLM<T>::parameters() {
    nn::ParamList<T> ps;
    ps.push_back(&tok_embed_);
    ps.push_back(&pos_embed_);
    for (auto& b : blocks_) {
        b.attn_norm.collect(ps);
        for (auto* lin : {&b.q, &b.k, &b.v, &b.o}) {
            lin->collect_base(ps);
            lin->collect_adapter(ps);
        }
        b.ffn_norm.collect(ps);
        b.ffn_in.collect(ps);
        b.ffn_out.collect(ps);
    }
    final_norm_.collect(ps);
    head_.collect(ps);
    return ps;
}

template <typename T>
nn::ParamList<T> DecoderLM<T>::adapter_parameters() {
    nn::ParamList<T> ps;
    for (auto& b : blocks_)
        for (auto* lin : {&b.q, &b.k, &b.v, &b.o}) lin->collect_adapter(ps);
    return ps;
}

template <typename T>
std::size_t DecoderLM<T>::trainable_count() {
    return nn::count_params(parameters(), true);
}

template class DecoderLM<float>;
template class DecoderLM<double>;

} // namespace slm::declm
