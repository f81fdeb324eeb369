#include "tags/prompt_bank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "httplib.h"
#include "json.hpp"
#include "tags/error.hpp"

namespace tags {

using json = nlohmann::json;

namespace {

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

bool has_placeholder(const std::string& s) {
    const auto open = s.find('{');
    return open != std::string::npos && s.find('}', open) != std::string::npos;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<double> normalized(std::vector<double> v) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (!(n2 > 0.0) || !std::isfinite(n2)) throw InvalidArgument("text embedding has zero or non-finite norm");
    const double n = std::sqrt(n2);
    for (double& x : v) x /= n;
    return v;
}

std::vector<double> category_mean(std::vector<std::string> texts, const TextEncoder& encoder) {
    if (texts.empty()) throw InvalidArgument("encode_dual_category: empty prompt list");
    // Fixed summation order makes the mean independent of list order.
    std::sort(texts.begin(), texts.end());
    std::vector<double> acc(encoder.width(), 0.0);
    for (const auto& t : texts) {
        const auto e = encoder.encode(t);
        if (static_cast<int>(e.size()) != encoder.width()) {
            throw InvalidArgument("text encoder returned width " + std::to_string(e.size()) + ", expected " +
                                  std::to_string(encoder.width()));
        }
        const auto u = normalized(e);
        for (std::size_t i = 0; i < u.size(); ++i) acc[i] += u[i];
    }
    for (double& x : acc) x /= static_cast<double>(texts.size());
    return normalized(std::move(acc));
}

std::vector<std::string> string_list(const json& doc, const char* key) {
    if (!doc.contains(key)) throw InvalidArgument(std::string("prompt bank is missing '") + key + "'");
    return doc.at(key).get<std::vector<std::string>>();
}

}  // namespace

void PromptBank::validate() const {
    if (organ_name.empty()) throw InvalidArgument("prompt bank: organ name is empty");
    if (templates.empty()) throw InvalidArgument("prompt bank: template list is empty");
    if (fg_states.empty() || bg_states.empty()) throw InvalidArgument("prompt bank: state list is empty");
    for (const auto& t : templates) {
        if (t.find("{c}") == std::string::npos) throw InvalidArgument("prompt template lacks {c}: " + t);
    }
}

PromptBank PromptBank::load(const std::filesystem::path& path, const std::string& organ_name) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prompt bank " + path.string());
    try {
        const json doc = json::parse(in);
        PromptBank bank;
        bank.organ_name = organ_name;
        bank.fg_states = string_list(doc, "fg_states");
        bank.bg_states = string_list(doc, "bg_states");
        bank.templates = string_list(doc, "templates");
        bank.validate();
        return bank;
    } catch (const json::exception& e) {
        throw IoError("malformed prompt bank " + path.string() + ": " + e.what());
    }
}

PromptBank PromptBank::standard(const std::string& organ_name) {
#ifdef TAGS_DEFAULT_PROMPT_BANK
    if (std::filesystem::exists(TAGS_DEFAULT_PROMPT_BANK)) return load(TAGS_DEFAULT_PROMPT_BANK, organ_name);
#endif
    return PromptBank{organ_name, {"{obj} with tumor"}, {"healthy {obj}"}, {"{c}"}};
}

ExpandedPrompts expand_prompts(const PromptBank& bank) {
    bank.validate();
    ExpandedPrompts out;
    auto expand = [&](const std::vector<std::string>& states, std::vector<std::string>& dst) {
        for (const auto& tmpl : bank.templates) {
            for (const auto& state : states) {
                std::string text = replace_all(tmpl, "{c}", replace_all(state, "{obj}", bank.organ_name));
                if (has_placeholder(text)) throw InvalidArgument("unresolved placeholder in prompt: " + text);
                dst.push_back(std::move(text));
            }
        }
    };
    expand(bank.fg_states, out.fg);
    expand(bank.bg_states, out.bg);
    return out;
}

HashTextEncoder::HashTextEncoder(int width, std::uint64_t seed) : width_(width), seed_(seed) {
    if (width < 1) throw InvalidArgument("text encoder width must be >= 1");
}

std::vector<double> HashTextEncoder::encode(const std::string& text) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    unsigned char seed_bytes[8];
    for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<unsigned char>(seed_ >> (8 * i));
    h = fnv1a(h, seed_bytes, sizeof(seed_bytes));
    h = fnv1a(h, text.data(), text.size());
    std::vector<double> v(width_);
    std::uint64_t state = h;
    for (int i = 0; i < width_; ++i) {
        const std::uint64_t bits = splitmix64(state) >> 11;
        v[i] = 2.0 * (static_cast<double>(bits) * 0x1.0p-53) - 1.0;
    }
    return normalized(std::move(v));
}

HttpTextEncoder::HttpTextEncoder(std::string base_url, int width, std::string path)
    : base_url_(std::move(base_url)), path_(std::move(path)), width_(width) {
    if (width < 1) throw InvalidArgument("text encoder width must be >= 1");
}

std::vector<double> HttpTextEncoder::encode(const std::string& text) const {
    httplib::Client client(base_url_);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    const auto res = client.Post(path_, json{{"text", text}}.dump(), "application/json");
    if (!res) throw IoError("text encoder service unreachable at " + base_url_);
    if (res->status != 200) throw IoError("text encoder service returned HTTP " + std::to_string(res->status));
    try {
        auto v = json::parse(res->body).at("embedding").get<std::vector<double>>();
        if (static_cast<int>(v.size()) != width_) {
            throw InvalidArgument("text encoder service returned width " + std::to_string(v.size()));
        }
        return v;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed text encoder response: ") + e.what());
    }
}

TextEmbeddingPair encode_dual_category(const ExpandedPrompts& texts, const TextEncoder& encoder) {
    return {category_mean(texts.fg, encoder), category_mean(texts.bg, encoder)};
}

TextEmbeddingPair text_features(const PromptBank& bank, const TextEncoder& encoder) {
    return encode_dual_category(expand_prompts(bank), encoder);
}

}  // namespace tags
