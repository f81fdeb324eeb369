#include "tags/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "tags/error.hpp"
#include "tags/volume_io.hpp"

namespace tags {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'A', 'G', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (bytes.size() < pos || bytes.size() - pos < n) throw CheckpointError("checkpoint truncated");
    }
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
};

std::vector<std::uint8_t> pack(const json& manifest, const std::vector<const ad::Tensor*>& tensors) {
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put(out, kVersion);
    const std::string m = manifest.dump();
    put(out, static_cast<std::uint64_t>(m.size()));
    out.insert(out.end(), m.begin(), m.end());
    for (const auto* t : tensors) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t->data.data());
        out.insert(out.end(), p, p + t->data.size() * sizeof(double));
    }
    put(out, fnv1a64(out.data(), out.size()));
    return out;
}

// Validates framing and checksum; returns the manifest and the data offset.
std::pair<json, std::size_t> unpack(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw CheckpointError("not a checkpoint (bad magic)");
    r.pos = 8;
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto mlen = r.get<std::uint64_t>();
    r.need(mlen);
    const std::string text(bytes.begin() + r.pos, bytes.begin() + r.pos + mlen);
    r.pos += mlen;
    json manifest;
    try {
        manifest = json::parse(text);
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    std::size_t total = 0;
    for (const auto& p : manifest.at("params")) {
        std::size_t n = 1;
        for (int d : p.at("shape").get<std::vector<int>>()) n *= static_cast<std::size_t>(d);
        total += n;
    }
    const std::size_t data_at = r.pos;
    r.need(total * sizeof(double) + sizeof(std::uint64_t));
    if (bytes.size() != data_at + total * sizeof(double) + sizeof(std::uint64_t)) {
        throw CheckpointError("checkpoint has trailing bytes");
    }
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (stored != fnv1a64(bytes.data(), bytes.size() - 8)) throw CheckpointError("checkpoint checksum mismatch");
    return {std::move(manifest), data_at};
}

std::vector<std::pair<std::string, ad::Tensor>> read_params(const json& manifest, const std::vector<std::uint8_t>& bytes,
                                                            std::size_t offset) {
    std::vector<std::pair<std::string, ad::Tensor>> out;
    for (const auto& p : manifest.at("params")) {
        ad::Tensor t(p.at("shape").get<std::vector<int>>(), 0.0);
        std::memcpy(t.data.data(), bytes.data() + offset, t.data.size() * sizeof(double));
        offset += t.data.size() * sizeof(double);
        out.emplace_back(p.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

}  // namespace

void PreprocessConfig::validate() const {
    for (double s : spacing)
        if (!(s > 0.0)) throw InvalidArgument("preprocess spacing must be > 0");
    if (!(clip_lo < clip_hi)) throw InvalidArgument("preprocess clip range must satisfy lo < hi");
}

json PreprocessConfig::to_json() const { return {{"spacing", spacing}, {"clip", {clip_lo, clip_hi}}}; }

PreprocessConfig PreprocessConfig::from_json(const json& j) {
    PreprocessConfig p;
    if (j.contains("spacing")) p.spacing = j["spacing"].get<Spacing>();
    if (j.contains("clip")) {
        const auto c = j["clip"].get<std::vector<double>>();
        if (c.size() != 2) throw InvalidArgument("preprocess clip must be [lo, hi]");
        p.clip_lo = c[0];
        p.clip_hi = c[1];
    }
    p.validate();
    return p;
}

Checkpoint Checkpoint::capture(const TagsModel& model) {
    Checkpoint c;
    c.config = model.config();
    for (const auto& v : model.params().vars()) c.params.push_back(v->value);
    return c;
}

TagsModel Checkpoint::model() const { return TagsModel(config, ParameterStore(model_layout(config), params)); }

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    const auto layout = model_layout(ckpt.config);
    if (layout.size() != ckpt.params.size()) throw CheckpointError("checkpoint parameters do not match layout");
    json params = json::array();
    std::vector<const ad::Tensor*> tensors;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (ckpt.params[i].shape != layout[i].shape) {
            throw CheckpointError("parameter " + layout[i].name + " has shape " + ckpt.params[i].shape_str());
        }
        params.push_back({{"name", layout[i].name},
                          {"shape", layout[i].shape},
                          {"trainable", layout[i].trainable()},
                          {"group", group_name(layout[i].group)},
                          {"offset", offset}});
        offset += layout[i].numel();
        tensors.push_back(&ckpt.params[i]);
    }
    json text = json::object();
    for (const auto& [organ, pair] : ckpt.text_features) text[organ] = {{"fg", pair.fg}, {"bg", pair.bg}};
    const json manifest{{"format", "tags-checkpoint"},
                        {"config", ckpt.config.to_json()},
                        {"config_hash", hex64(ckpt.config.hash())},
                        {"epoch", ckpt.epoch},
                        {"rng_state", ckpt.rng_state},
                        {"preprocess", ckpt.preprocess.to_json()},
                        {"text_features", text},
                        {"params", params}};
    return pack(manifest, tensors);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected) {
    auto [manifest, offset] = unpack(bytes);
    Checkpoint c;
    try {
        c.config = ModelConfig::from_json(manifest.at("config"));
        const std::string stored_hash = manifest.at("config_hash").get<std::string>();
        if (stored_hash != hex64(c.config.hash())) {
            throw CheckpointError("config hash mismatch: manifest " + stored_hash + ", config " +
                                  hex64(c.config.hash()));
        }
        if (expected && expected->hash() != c.config.hash()) {
            throw CheckpointError("config hash mismatch: checkpoint " + stored_hash + ", expected " +
                                  hex64(expected->hash()));
        }
        c.epoch = manifest.at("epoch").get<int>();
        c.rng_state = manifest.at("rng_state").get<std::string>();
        c.preprocess = PreprocessConfig::from_json(manifest.at("preprocess"));
        for (const auto& [organ, pair] : manifest.at("text_features").items()) {
            c.text_features[organ] = {pair.at("fg").get<std::vector<double>>(), pair.at("bg").get<std::vector<double>>()};
        }
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw CheckpointError(std::string("invalid checkpoint config: ") + e.what());
    }
    const auto layout = model_layout(c.config);
    auto params = read_params(manifest, bytes, offset);
    if (params.size() != layout.size()) throw CheckpointError("checkpoint parameters do not match layout");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (params[i].first != layout[i].name || params[i].second.shape != layout[i].shape) {
            throw CheckpointError("checkpoint parameter '" + params[i].first + "' does not match layout");
        }
        c.params.push_back(std::move(params[i].second));
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    return decode_checkpoint(io::read_file(path), expected);
}

void save_tensors(const TensorMap& tensors, const std::filesystem::path& path) {
    json params = json::array();
    std::vector<const ad::Tensor*> list;
    for (const auto& [name, t] : tensors) {
        params.push_back({{"name", name}, {"shape", t.shape}});
        list.push_back(&t);
    }
    io::write_file(path, pack({{"format", "tags-tensors"}, {"params", params}}, list));
}

TensorMap load_tensors(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    auto [manifest, offset] = unpack(bytes);
    TensorMap out;
    for (auto& [name, t] : read_params(manifest, bytes, offset)) out[name] = std::move(t);
    return out;
}

std::vector<std::string> import_2d_weights(TagsModel& model, const TensorMap& weights2d) {
    const auto& enc = model.config().encoder;
    auto& store = model.params();
    std::vector<std::string> written;
    auto assign = [&](const std::string& name, const ad::Tensor& value) {
        const auto& var = store.get(name);
        if (var->value.shape != value.shape) {
            throw InvalidArgument("2D import: " + name + " expects " + var->value.shape_str() + ", got " +
                                  value.shape_str());
        }
        var->value = value;
        written.push_back(name);
    };
    for (const auto& [key, t] : weights2d) {
        if (key == "patch_embed.weight") {
            assign("encoder.patch_embed.weight", inflate_patch_kernel(t, enc.patch_size));
        } else if (key == "pos_embed") {
            const Dims3 g = enc.grid();
            assign("encoder.pos_embed", inflate_positional(t, ad::Tensor({g.d, enc.embed_width}, 0.0), g));
        } else if (store.contains(key)) {
            assign(key, t);
        } else {
            throw InvalidArgument("2D import: unknown tensor '" + key + "'");
        }
    }
    return written;
}

}  // namespace tags
