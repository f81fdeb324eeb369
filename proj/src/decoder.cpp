#include "tags/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tags/error.hpp"

namespace tags {

namespace {

ad::Var linear(const ad::Var& x, const ParameterStore& p, const std::string& name) {
    return ad::add_bias(ad::matmul(x, p.get(name + ".weight")), p.get(name + ".bias"));
}

ad::Tensor token_encodings(Dims3 grid, int width) {
    ad::Tensor out({static_cast<int>(grid.count()), width});
    for (int z = 0; z < grid.d; ++z)
        for (int y = 0; y < grid.h; ++y)
            for (int x = 0; x < grid.w; ++x) {
                const auto e = sinusoidal_encoding(normalized_coord(z, grid.d), normalized_coord(y, grid.h),
                                                   normalized_coord(x, grid.w), width);
                std::copy(e.begin(), e.end(), out.data.begin() + grid.index(z, y, x) * width);
            }
    return out;
}

ad::Tensor input_channels(const ModelInput& input) {
    const std::size_t n = input.dims().count();
    ad::Tensor out({static_cast<int>(n), 3});
    for (std::size_t v = 0; v < n; ++v)
        for (int c = 0; c < 3; ++c) out.data[v * 3 + c] = input.channels[c][v];
    return out;
}

}  // namespace

DecoderConfig DecoderConfig::tiny() {
    DecoderConfig cfg;
    cfg.stage_width = 16;
    cfg.fused_width = 32;
    cfg.up_widths = {16, 8, 8};
    cfg.head_width = 8;
    return cfg;
}

void DecoderConfig::validate(const EncoderConfig& enc) const {
    if (stage_width < 1 || fused_width < 6 || head_width < 1) throw InvalidArgument("invalid decoder widths");
    for (int w : up_widths)
        if (w < 1) throw InvalidArgument("invalid decoder upsampling width");
    if ((1 << up_widths.size()) != enc.patch_size) {
        throw InvalidArgument("decoder needs log2(patch_size) upsampling steps; patch " +
                              std::to_string(enc.patch_size) + " vs " + std::to_string(up_widths.size()) + " steps");
    }
}

std::vector<ParamSpec> decoder_layout(const DecoderConfig& cfg, const EncoderConfig& enc) {
    cfg.validate(enc);
    std::vector<ParamSpec> specs;
    auto add = [&](std::string name, std::vector<int> shape, ParamGroup g, Init init = Init::TruncNormal) {
        specs.push_back({std::move(name), std::move(shape), g, init});
    };
    auto add_linear = [&](const std::string& name, int in, int out, ParamGroup g = ParamGroup::Decoder) {
        add(name + ".weight", {in, out}, g);
        add(name + ".bias", {out}, g, Init::Zeros);
    };
    const int f = cfg.fused_width;
    add("prompt.label_embed", {2, f}, ParamGroup::PromptEncoder);
    add("prompt.null_token", {1, f}, ParamGroup::PromptEncoder);
    for (int s = 0; s < enc.num_stages; ++s) {
        add_linear("decoder.stage." + std::to_string(s) + ".proj", enc.embed_width, cfg.stage_width);
    }
    add_linear("decoder.fuse", enc.num_stages * cfg.stage_width, f);
    add("decoder.xattn.norm.weight", {f}, ParamGroup::Decoder, Init::Ones);
    add("decoder.xattn.norm.bias", {f}, ParamGroup::Decoder, Init::Zeros);
    add_linear("decoder.xattn.q", f, f);
    add_linear("decoder.xattn.k", f, f);
    add_linear("decoder.xattn.v", f, f);
    add_linear("decoder.xattn.out", f, f);
    int prev = f;
    for (std::size_t i = 0; i < cfg.up_widths.size(); ++i) {
        add_linear("decoder.up." + std::to_string(i) + ".conv", 27 * prev, cfg.up_widths[i]);
        prev = cfg.up_widths[i];
    }
    add_linear("decoder.head.conv", 27 * (prev + 3), cfg.head_width);
    add_linear("decoder.head.out", cfg.head_width, 1);
    return specs;
}

std::vector<double> sinusoidal_encoding(double uz, double uy, double ux, int width) {
    std::vector<double> out(width, 0.0);
    const int freqs = width / 6;
    const double u[3] = {uz, uy, ux};
    for (int a = 0; a < 3; ++a)
        for (int k = 0; k < freqs; ++k) {
            const double arg = std::ldexp(std::numbers::pi, k) * u[a];
            out[a * 2 * freqs + 2 * k] = std::sin(arg);
            out[a * 2 * freqs + 2 * k + 1] = std::cos(arg);
        }
    return out;
}

double normalized_coord(int index, int extent) { return (index + 0.5) / extent; }

ad::Var encode_points(const std::vector<PointPrompt>& points, Dims3 volume_shape, const ParameterStore& params,
                      const DecoderConfig& cfg) {
    if (points.empty()) return nullptr;
    std::vector<PointPrompt> sorted = points;
    for (const auto& p : sorted) {
        if (!volume_shape.contains(p.coord.z, p.coord.y, p.coord.x)) {
            throw InvalidArgument("point prompt (" + std::to_string(p.coord.z) + "," + std::to_string(p.coord.y) + "," +
                                  std::to_string(p.coord.x) + ") outside volume " + volume_shape.str());
        }
    }
    std::sort(sorted.begin(), sorted.end(), [](const PointPrompt& a, const PointPrompt& b) {
        if (a.label != b.label) return a.label < b.label;
        return a.coord < b.coord;
    });
    const int f = cfg.fused_width;
    const int n = static_cast<int>(sorted.size());
    ad::Tensor pe({n, f});
    ad::Tensor onehot({n, 2});
    for (int i = 0; i < n; ++i) {
        const auto& c = sorted[i].coord;
        const auto e = sinusoidal_encoding(normalized_coord(c.z, volume_shape.d), normalized_coord(c.y, volume_shape.h),
                                           normalized_coord(c.x, volume_shape.w), f);
        std::copy(e.begin(), e.end(), pe.data.begin() + static_cast<std::size_t>(i) * f);
        onehot(i, sorted[i].label == PointLabel::Foreground ? 1 : 0) = 1.0;
    }
    return ad::add(ad::constant(std::move(pe)), ad::matmul(ad::constant(std::move(onehot)), params.get("prompt.label_embed")));
}

DecodeResult decode_mask(const EncoderOutput& enc_out, const ModelInput& input, const std::vector<PointPrompt>& points,
                         const DecoderConfig& cfg, const EncoderConfig& enc, const ParameterStore& params) {
    cfg.validate(enc);
    if (static_cast<int>(enc_out.stage_outputs.size()) != enc.num_stages) {
        throw InvalidArgument("decode_mask: expected one output per encoder stage");
    }
    const Dims3 grid = enc_out.grid;
    const int f = cfg.fused_width;

    std::vector<ad::Var> projected;
    for (int s = 0; s < enc.num_stages; ++s) {
        projected.push_back(linear(enc_out.stage_outputs[s], params, "decoder.stage." + std::to_string(s) + ".proj"));
    }
    ad::Var x = ad::gelu(linear(projected.size() == 1 ? projected.front() : ad::concat_cols(projected), params,
                                "decoder.fuse"));

    // Point prompts: every token attends over {null token, prompt embeddings}.
    {
        const ad::Var normed =
            ad::layer_norm(x, params.get("decoder.xattn.norm.weight"), params.get("decoder.xattn.norm.bias"));
        const ad::Var q = linear(ad::add(normed, ad::constant(token_encodings(grid, f))), params, "decoder.xattn.q");
        std::vector<ad::Var> key_rows{params.get("prompt.null_token")};
        if (ad::Var prompts = encode_points(points, input.dims(), params, cfg)) key_rows.push_back(prompts);
        const ad::Var keys = key_rows.size() == 1 ? key_rows.front() : ad::concat_rows(key_rows);
        const ad::Var k = linear(keys, params, "decoder.xattn.k");
        const ad::Var v = linear(keys, params, "decoder.xattn.v");
        const ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_transposed(q, k), 1.0 / std::sqrt(double(f))));
        x = ad::add(x, linear(ad::matmul(att, v), params, "decoder.xattn.out"));
    }

    Dims3 dims = grid;
    for (std::size_t i = 0; i < cfg.up_widths.size(); ++i) {
        const Dims3 next{dims.d * 2, dims.h * 2, dims.w * 2};
        x = ad::resize_trilinear(x, dims, next);
        const std::string name = "decoder.up." + std::to_string(i) + ".conv";
        x = ad::gelu(ad::conv3d(x, next, params.get(name + ".weight"), params.get(name + ".bias"), 3));
        dims = next;
    }
    if (!(dims == input.dims())) {
        throw InvalidArgument("decoder output " + dims.str() + " does not match input " + input.dims().str());
    }
    x = ad::concat_cols({x, ad::constant(input_channels(input))});
    x = ad::gelu(ad::conv3d(x, dims, params.get("decoder.head.conv.weight"), params.get("decoder.head.conv.bias"), 3));
    DecodeResult out;
    out.logits = linear(x, params, "decoder.head.out");
    ad::check_finite(out.logits, "decoder logits");
    out.probs = ad::sigmoid(out.logits);
    return out;
}

}  // namespace tags
