#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace tags {

/// Dual-category text prompt source. States carry `{obj}` (the organ name);
/// templates carry `{c}` (a state). Every template is applied to every state.
struct PromptBank {
    std::string organ_name;
    std::vector<std::string> fg_states;
    std::vector<std::string> bg_states;
    std::vector<std::string> templates;

    void validate() const;

    /// Reads `{"fg_states": [...], "bg_states": [...], "templates": [...]}`.
    static PromptBank load(const std::filesystem::path& path, const std::string& organ_name);
    /// The bank shipped at TAGS_DEFAULT_PROMPT_BANK; falls back to the two
    /// plain exemplars ("healthy {obj}" / "{obj} with tumor") when that file
    /// is unavailable.
    static PromptBank standard(const std::string& organ_name);
};

struct ExpandedPrompts {
    std::vector<std::string> fg;
    std::vector<std::string> bg;
};

ExpandedPrompts expand_prompts(const PromptBank& bank);

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int width() const = 0;
    virtual std::vector<double> encode(const std::string& text) const = 0;
};

/// Deterministic stand-in for a pretrained text encoder: each distinct string
/// maps to a pseudo-random unit vector derived from (seed, text). Uses only
/// integer hashing and IEEE sqrt, so results are identical across platforms.
class HashTextEncoder final : public TextEncoder {
public:
    HashTextEncoder(int width, std::uint64_t seed = 0);
    int width() const override { return width_; }
    std::vector<double> encode(const std::string& text) const override;

private:
    int width_;
    std::uint64_t seed_;
};

/// Client for an external embedding service:
/// POST {path} with `{"text": "..."}` -> `{"embedding": [...]}`.
class HttpTextEncoder final : public TextEncoder {
public:
    HttpTextEncoder(std::string base_url, int width, std::string path = "/embed");
    int width() const override { return width_; }
    std::vector<double> encode(const std::string& text) const override;

private:
    std::string base_url_;
    std::string path_;
    int width_;
};

struct TextEmbeddingPair {
    std::vector<double> fg;
    std::vector<double> bg;

    int width() const { return static_cast<int>(fg.size()); }
};

/// Per category: L2-normalize each embedding, average, re-normalize.
TextEmbeddingPair encode_dual_category(const ExpandedPrompts& texts, const TextEncoder& encoder);

/// Convenience: expand + encode.
TextEmbeddingPair text_features(const PromptBank& bank, const TextEncoder& encoder);

}  // namespace tags
