#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tags/decoder.hpp"
#include "tags/encoder.hpp"

namespace tags {

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig decoder;

    static ModelConfig tiny();
    static ModelConfig full();
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static ModelConfig from_json(const nlohmann::json& j);
    /// FNV-1a 64 of the canonical (sorted-key, compact) JSON dump.
    std::uint64_t hash() const;
};

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::vector<ParamSpec> model_layout(const ModelConfig& cfg);

struct ModelOutput {
    EncoderOutput encoder;
    DecodeResult mask;
};

class TagsModel {
public:
    TagsModel(ModelConfig cfg, Rng& rng);
    TagsModel(ModelConfig cfg, ParameterStore params);

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    /// Encoder + decoder on a patch of exactly `encoder.input_size`.
    ModelOutput forward(const ModelInput& input, const std::vector<PointPrompt>& points) const;

private:
    ModelConfig cfg_;
    ParameterStore params_;
};

}  // namespace tags
