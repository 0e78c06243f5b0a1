#include "slm/trainer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "slm/errors.hpp"

namespace slm::trainer {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'L', 'M', 'F'};
constexpr std::uint8_t kFloat32 = 0;

template <typename U>
void put(std::string& out, U v) {
    char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    out.append(b, sizeof(U));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    void raw(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError(where_ + ": truncated checkpoint");
    }
    const std::string& bytes_;
    std::string where_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("checkpoint not found: " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

} // namespace

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_digest(const nlohmann::json& config) { return fnv1a(config.dump()); }

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

std::uint64_t Checkpoint::digest() const { return config_digest(config); }

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

void Checkpoint::put(const nn::ParamList<float>& params, const std::string& prefix) {
    for (const auto* p : params) tensors[prefix + p->name] = p->value;
}

void Checkpoint::get(const nn::ParamList<float>& params, const std::string& prefix) const {
    for (auto* p : params) {
        const auto& t = tensor(prefix + p->name);
        if (t.shape() != p->value.shape())
            throw DataError("checkpoint tensor '" + prefix + p->name + "' has shape " + shape_str(t.shape()) +
                            ", model expects " + shape_str(p->value.shape()));
        p->value = t;
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, Checkpoint::kVersion);
    put<std::uint64_t>(out, ckpt.digest());
    nlohmann::json header{{"kind", ckpt.kind}, {"config", ckpt.config}, {"meta", ckpt.meta}};
    const std::string text = header.dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tokenizer.size()));
    for (char32_t c : ckpt.tokenizer) put<std::uint32_t>(out, static_cast<std::uint32_t>(c));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, kFloat32);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
    }
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw InputError("cannot write checkpoint " + path.string());
        os.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!os) throw InputError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    Reader r(bytes, path.string());
    if (r.str(4) != std::string(kMagic, 4)) throw DataError(path.string() + ": not a model checkpoint (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != Checkpoint::kVersion)
        throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto stored_digest = r.get<std::uint64_t>();
    const auto text_len = r.get<std::uint32_t>();
    Checkpoint ckpt;
    try {
        const auto header = nlohmann::json::parse(r.str(text_len));
        ckpt.kind = header.at("kind").get<std::string>();
        ckpt.config = header.at("config");
        ckpt.meta = header.at("meta");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": corrupt checkpoint header (" + e.what() + ")");
    }
    if (ckpt.digest() != stored_digest)
        throw DataError(path.string() + ": config digest mismatch (stored " + hex64(stored_digest) + ", computed " +
                        hex64(ckpt.digest()) + ")");
    const auto nchars = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < nchars; ++i) ckpt.tokenizer.push_back(static_cast<char32_t>(r.get<std::uint32_t>()));
    const auto ntensors = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < ntensors; ++i) {
        std::string name = r.str(r.get<std::uint32_t>());
        if (r.get<std::uint8_t>() != kFloat32) throw DataError(path.string() + ": unsupported dtype for " + name);
        const auto ndim = r.get<std::uint8_t>();
        Shape shape(ndim);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        Tensor<float> t(shape);
        r.raw(t.data(), t.size() * sizeof(float));
        ckpt.tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw DataError(path.string() + ": trailing bytes after tensors");
    return ckpt;
}

std::uint64_t file_digest(const std::filesystem::path& path) { return fnv1a(read_file(path)); }

std::uint64_t params_digest(const nn::ParamList<float>& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto* p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
        for (std::size_t i = 0; i < p->value.size() * sizeof(float); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

} // namespace slm::trainer
