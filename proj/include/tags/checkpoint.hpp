#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tags/model.hpp"
#include "tags/prompt_bank.hpp"

namespace tags {

struct PreprocessConfig {
    Spacing spacing{1.0, 1.0, 1.0};
    double clip_lo = -52.0;
    double clip_hi = 247.0;

    void validate() const;
    nlohmann::json to_json() const;
    static PreprocessConfig from_json(const nlohmann::json& j);
};

struct Checkpoint {
    ModelConfig config;
    /// One tensor per entry of model_layout(config), in layout order.
    std::vector<ad::Tensor> params;
    int epoch = 0;
    std::string rng_state;
    PreprocessConfig preprocess;
    /// Cached F_text per organ name.
    std::map<std::string, TextEmbeddingPair> text_features;

    static Checkpoint capture(const TagsModel& model);
    TagsModel model() const;
};

/// Binary archive: "TAGSCKPT", u32 version, u64 manifest length, manifest
/// JSON, raw little-endian float64 parameter data, u64 FNV-1a checksum of
/// everything before it.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on truncation, checksum failure, or a config hash
/// that differs from the stored config (or from `expected` when given).
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected = nullptr);

/// Plain named-tensor archive in the same container (no model config).
using TensorMap = std::map<std::string, ad::Tensor>;
void save_tensors(const TensorMap& tensors, const std::filesystem::path& path);
TensorMap load_tensors(const std::filesystem::path& path);

/// Imports 2D weights into a 3D model. Recognized keys:
///   patch_embed.weight [3*p*p, c]  -> inflated along depth
///   pos_embed [Ph*Pw, c]           -> plus a zero depth encoding
///   any other key equal to a model parameter name with matching shape.
/// Returns the names that were written.
std::vector<std::string> import_2d_weights(TagsModel& model, const TensorMap& weights2d);

}  // namespace tags
