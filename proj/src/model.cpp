#include "tags/model.hpp"

#include <cstdio>

#include "tags/error.hpp"

namespace tags {

using nlohmann::json;

namespace {

json dims_json(Dims3 d) { return json::array({d.d, d.h, d.w}); }

Dims3 dims_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw InvalidArgument("expected [d, h, w]");
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
    if (!j.is_object()) throw InvalidArgument(std::string(where) + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (const char* key : keys) known = known || k == key;
        if (!known) throw InvalidArgument(std::string(where) + ": unknown key '" + k + "'");
    }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ModelConfig ModelConfig::tiny() { return {EncoderConfig::tiny(), DecoderConfig::tiny()}; }

ModelConfig ModelConfig::full() { return {EncoderConfig{}, DecoderConfig{}}; }

void ModelConfig::validate() const {
    encoder.validate();
    decoder.validate(encoder);
}

json ModelConfig::to_json() const {
    const auto& e = encoder;
    const auto& d = decoder;
    return json{
        {"encoder",
         {{"num_stages", e.num_stages},
          {"blocks_per_stage", e.blocks_per_stage},
          {"embed_width", e.embed_width},
          {"num_heads", e.num_heads},
          {"mlp_ratio", e.mlp_ratio},
          {"patch_size", e.patch_size},
          {"input_size", dims_json(e.input_size)},
          {"adapter_width", e.adapter_width},
          {"adapter_kernel", e.adapter_kernel},
          {"lambda", e.lambda},
          {"alignment_activation", e.alignment_activation == Activation::Gelu ? "gelu" : "identity"}}},
        {"decoder",
         {{"stage_width", d.stage_width},
          {"fused_width", d.fused_width},
          {"up_widths", d.up_widths},
          {"head_width", d.head_width}}},
    };
}

ModelConfig ModelConfig::from_json(const json& j) {
    reject_unknown(j, {"encoder", "decoder", "preset"}, "model config");
    ModelConfig cfg = j.value("preset", std::string("tiny")) == "full" ? full() : tiny();
    if (j.contains("preset") && j["preset"] != "tiny" && j["preset"] != "full") {
        throw InvalidArgument("model preset must be 'tiny' or 'full'");
    }
    if (j.contains("encoder")) {
        const json& e = j["encoder"];
        reject_unknown(e,
                       {"num_stages", "blocks_per_stage", "embed_width", "num_heads", "mlp_ratio", "patch_size",
                        "input_size", "adapter_width", "adapter_kernel", "lambda", "alignment_activation"},
                       "encoder config");
        auto& c = cfg.encoder;
        read_opt(e, "num_stages", c.num_stages);
        read_opt(e, "blocks_per_stage", c.blocks_per_stage);
        read_opt(e, "embed_width", c.embed_width);
        read_opt(e, "num_heads", c.num_heads);
        read_opt(e, "mlp_ratio", c.mlp_ratio);
        read_opt(e, "patch_size", c.patch_size);
        if (e.contains("input_size")) c.input_size = dims_from(e["input_size"]);
        read_opt(e, "adapter_width", c.adapter_width);
        read_opt(e, "adapter_kernel", c.adapter_kernel);
        read_opt(e, "lambda", c.lambda);
        if (e.contains("alignment_activation")) {
            const auto a = e["alignment_activation"].get<std::string>();
            if (a == "gelu") {
                c.alignment_activation = Activation::Gelu;
            } else if (a == "identity") {
                c.alignment_activation = Activation::Identity;
            } else {
                throw InvalidArgument("alignment_activation must be 'gelu' or 'identity'");
            }
        }
    }
    if (j.contains("decoder")) {
        const json& d = j["decoder"];
        reject_unknown(d, {"stage_width", "fused_width", "up_widths", "head_width"}, "decoder config");
        read_opt(d, "stage_width", cfg.decoder.stage_width);
        read_opt(d, "fused_width", cfg.decoder.fused_width);
        read_opt(d, "up_widths", cfg.decoder.up_widths);
        read_opt(d, "head_width", cfg.decoder.head_width);
    }
    cfg.validate();
    return cfg;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t ModelConfig::hash() const {
    const std::string s = to_json().dump();
    return fnv1a64(s.data(), s.size());
}

std::vector<ParamSpec> model_layout(const ModelConfig& cfg) {
    cfg.validate();
    auto specs = encoder_layout(cfg.encoder);
    auto dec = decoder_layout(cfg.decoder, cfg.encoder);
    specs.insert(specs.end(), dec.begin(), dec.end());
    return specs;
}

TagsModel::TagsModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)), params_(model_layout(cfg_), rng) {}

TagsModel::TagsModel(ModelConfig cfg, ParameterStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    const auto layout = model_layout(cfg_);
    const auto& specs = params_.specs();
    if (layout.size() != specs.size()) throw InvalidArgument("parameter store does not match model layout");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].name != specs[i].name || layout[i].shape != specs[i].shape) {
            throw InvalidArgument("parameter '" + specs[i].name + "' does not match model layout");
        }
    }
}

ModelOutput TagsModel::forward(const ModelInput& input, const std::vector<PointPrompt>& points) const {
    ModelOutput out;
    out.encoder = encoder_forward(input, cfg_.encoder, params_);
    out.mask = decode_mask(out.encoder, input, points, cfg_.decoder, cfg_.encoder, params_);
    return out;
}

}  // namespace tags
