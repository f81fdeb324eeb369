#include "tags/encoder.hpp"

#include <cmath>
#include <string>

#include "tags/error.hpp"

namespace tags {

namespace {

std::string block_prefix(int block) { return "encoder.blocks." + std::to_string(block) + "."; }

ad::Var linear(const ad::Var& x, const ParameterStore& p, const std::string& name) {
    return ad::add_bias(ad::matmul(x, p.get(name + ".weight")), p.get(name + ".bias"));
}

ad::Var attention(const ad::Var& x, const EncoderConfig& cfg, const ParameterStore& p, const std::string& pre) {
    const int c = cfg.embed_width;
    const int hd = c / cfg.num_heads;
    const ad::Var qkv = linear(x, p, pre + "attn.qkv");
    std::vector<ad::Var> heads;
    heads.reserve(cfg.num_heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int h = 0; h < cfg.num_heads; ++h) {
        const ad::Var q = ad::slice_cols(qkv, h * hd, hd);
        const ad::Var k = ad::slice_cols(qkv, c + h * hd, hd);
        const ad::Var v = ad::slice_cols(qkv, 2 * c + h * hd, hd);
        const ad::Var att = ad::softmax_rows(ad::scale(ad::matmul_transposed(q, k), scale));
        heads.push_back(ad::matmul(att, v));
    }
    return linear(heads.size() == 1 ? heads.front() : ad::concat_cols(heads), p, pre + "attn.proj");
}

ad::Var transformer_block(ad::Var x, const EncoderConfig& cfg, const ParameterStore& p, int block) {
    const std::string pre = block_prefix(block);
    const ad::Var h1 = ad::layer_norm(x, p.get(pre + "norm1.weight"), p.get(pre + "norm1.bias"));
    x = ad::add(x, attention(h1, cfg, p, pre));
    const ad::Var h2 = ad::layer_norm(x, p.get(pre + "norm2.weight"), p.get(pre + "norm2.bias"));
    x = ad::add(x, linear(ad::gelu(linear(h2, p, pre + "mlp.fc1")), p, pre + "mlp.fc2"));
    return x;
}

ad::Var spatial_adapter(const ad::Var& x, const EncoderConfig& cfg, const ParameterStore& p, int block) {
    const std::string pre = block_prefix(block) + "adapter.";
    ad::Var h = linear(x, p, pre + "down");
    h = ad::conv3d(h, cfg.grid(), p.get(pre + "conv.weight"), p.get(pre + "conv.bias"), cfg.adapter_kernel);
    h = ad::gelu(h);
    return ad::add(x, linear(h, p, pre + "up"));
}

}  // namespace

EncoderConfig EncoderConfig::tiny() {
    EncoderConfig cfg;
    cfg.num_stages = 2;
    cfg.blocks_per_stage = 3;
    cfg.embed_width = 32;
    cfg.num_heads = 4;
    cfg.mlp_ratio = 4;
    cfg.patch_size = 8;
    cfg.input_size = {32, 32, 32};
    cfg.adapter_width = 8;
    return cfg;
}

void EncoderConfig::validate() const {
    if (num_stages < 1 || blocks_per_stage < 1) throw InvalidArgument("encoder needs >= 1 stage and block");
    if (embed_width < 1 || num_heads < 1 || embed_width % num_heads != 0) {
        throw InvalidArgument("embed width must be a positive multiple of the head count");
    }
    if (patch_size < 1 || adapter_width < 1 || mlp_ratio < 1) throw InvalidArgument("invalid encoder widths");
    if (adapter_kernel < 1 || adapter_kernel % 2 == 0) throw InvalidArgument("adapter kernel must be odd");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0,1]");
    for (int a = 0; a < 3; ++a) {
        if (input_size[a] < 1 || input_size[a] % patch_size != 0) {
            throw InvalidArgument("input extent " + input_size.str() + " not divisible by patch size " +
                                  std::to_string(patch_size));
        }
    }
}

Dims3 EncoderConfig::grid() const {
    return {input_size.d / patch_size, input_size.h / patch_size, input_size.w / patch_size};
}

std::vector<ParamSpec> encoder_layout(const EncoderConfig& cfg) {
    cfg.validate();
    const int c = cfg.embed_width;
    const int p3 = cfg.patch_size * cfg.patch_size * cfg.patch_size;
    const int a = cfg.adapter_width;
    const int k3 = cfg.adapter_kernel * cfg.adapter_kernel * cfg.adapter_kernel;
    std::vector<ParamSpec> specs;
    auto add = [&](std::string name, std::vector<int> shape, ParamGroup g, Init init = Init::TruncNormal) {
        specs.push_back({std::move(name), std::move(shape), g, init});
    };
    auto add_linear = [&](const std::string& name, int in, int out, ParamGroup g) {
        add(name + ".weight", {in, out}, g);
        add(name + ".bias", {out}, g, Init::Zeros);
    };
    add_linear("encoder.patch_embed", 3 * p3, c, ParamGroup::PatchEmbed);
    add("encoder.pos_embed", {cfg.tokens(), c}, ParamGroup::PositionalEncoding);
    const int blocks = cfg.num_stages * cfg.blocks_per_stage;
    for (int b = 0; b < blocks; ++b) {
        const std::string pre = block_prefix(b);
        add(pre + "norm1.weight", {c}, ParamGroup::Norm, Init::Ones);
        add(pre + "norm1.bias", {c}, ParamGroup::Norm, Init::Zeros);
        add_linear(pre + "attn.qkv", c, 3 * c, ParamGroup::Attention);
        add_linear(pre + "attn.proj", c, c, ParamGroup::Attention);
        add(pre + "norm2.weight", {c}, ParamGroup::Norm, Init::Ones);
        add(pre + "norm2.bias", {c}, ParamGroup::Norm, Init::Zeros);
        add_linear(pre + "mlp.fc1", c, cfg.mlp_ratio * c, ParamGroup::Mlp);
        add_linear(pre + "mlp.fc2", cfg.mlp_ratio * c, c, ParamGroup::Mlp);
        add_linear(pre + "adapter.down", c, a, ParamGroup::SpatialAdapter);
        add_linear(pre + "adapter.conv", k3 * a, a, ParamGroup::SpatialAdapter);
        add_linear(pre + "adapter.up", a, c, ParamGroup::SpatialAdapter);
    }
    for (int s = 0; s < cfg.num_stages; ++s) {
        add("encoder.align." + std::to_string(s) + ".weight", {c, c}, ParamGroup::AlignmentAdapter);
    }
    return specs;
}

ad::Tensor extract_patches(const ModelInput& input, int p) {
    const Dims3 d = input.dims();
    if (p < 1 || d.d % p || d.h % p || d.w % p) {
        throw InvalidArgument("input extents " + d.str() + " not divisible by patch size " + std::to_string(p));
    }
    const Dims3 grid{d.d / p, d.h / p, d.w / p};
    const int cols = 3 * p * p * p;
    ad::Tensor out({static_cast<int>(grid.count()), cols});
    for (int gz = 0; gz < grid.d; ++gz)
        for (int gy = 0; gy < grid.h; ++gy)
            for (int gx = 0; gx < grid.w; ++gx) {
                double* row = out.data.data() + grid.index(gz, gy, gx) * cols;
                int col = 0;
                for (int ch = 0; ch < 3; ++ch)
                    for (int dz = 0; dz < p; ++dz)
                        for (int dy = 0; dy < p; ++dy)
                            for (int dx = 0; dx < p; ++dx)
                                row[col++] = input.channels[ch].at(gz * p + dz, gy * p + dy, gx * p + dx);
            }
    return out;
}

ad::Var patchify3d(const ModelInput& input, const EncoderConfig& cfg, const ParameterStore& params) {
    cfg.validate();
    if (!(input.dims() == cfg.input_size)) {
        throw InvalidArgument("encoder input " + input.dims().str() + " does not match configured size " +
                              cfg.input_size.str());
    }
    const ad::Var patches = ad::constant(extract_patches(input, cfg.patch_size));
    const ad::Var tokens = linear(patches, params, "encoder.patch_embed");
    return ad::add(tokens, params.get("encoder.pos_embed"));
}

ad::Var apply_alignment_adapter(const ad::Var& features, const ad::Var& weight, Activation act) {
    if (features->value.cols() != weight->value.rows()) {
        throw InvalidArgument("alignment adapter width mismatch");
    }
    const ad::Var z = ad::matmul(features, weight);
    return act == Activation::Gelu ? ad::gelu(z) : z;
}

ad::Var stage_residual(const ad::Var& features, const ad::Var& adapter_out, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda must lie in [0,1]");
    return ad::lerp(adapter_out, features, lambda);
}

EncoderOutput encoder_forward(const ModelInput& input, const EncoderConfig& cfg, const ParameterStore& params) {
    EncoderOutput out;
    out.grid = cfg.grid();
    ad::Var x = patchify3d(input, cfg, params);
    ad::check_finite(x, "patch embedding");
    int block = 0;
    for (int s = 0; s < cfg.num_stages; ++s) {
        for (int b = 0; b < cfg.blocks_per_stage; ++b, ++block) {
            x = transformer_block(x, cfg, params, block);
            x = spatial_adapter(x, cfg, params, block);
        }
        ad::check_finite(x, "encoder stage " + std::to_string(s + 1));
        const ad::Var a = apply_alignment_adapter(x, params.get("encoder.align." + std::to_string(s) + ".weight"),
                                                  cfg.alignment_activation);
        x = stage_residual(x, a, cfg.lambda);
        out.adapter_outputs.push_back(a);
        out.stage_outputs.push_back(x);
    }
    return out;
}

ad::Tensor inflate_patch_kernel(const ad::Tensor& kernel2d, int p) {
    const int c = kernel2d.cols();
    if (kernel2d.rows() != 3 * p * p) throw InvalidArgument("2D patch kernel must have 3*p*p rows");
    ad::Tensor out({3 * p * p * p, c});
    for (int ch = 0; ch < 3; ++ch)
        for (int dz = 0; dz < p; ++dz)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx) {
                    const int src = (ch * p + dy) * p + dx;
                    const int dst = ((ch * p + dz) * p + dy) * p + dx;
                    for (int j = 0; j < c; ++j) out(dst, j) = kernel2d(src, j) / p;
                }
    return out;
}

ad::Tensor inflate_positional(const ad::Tensor& pos2d, const ad::Tensor& depth, Dims3 grid) {
    const int c = pos2d.cols();
    if (pos2d.rows() != grid.h * grid.w || depth.rows() != grid.d || depth.cols() != c) {
        throw InvalidArgument("positional inflation shape mismatch");
    }
    ad::Tensor out({static_cast<int>(grid.count()), c});
    for (int z = 0; z < grid.d; ++z)
        for (int yx = 0; yx < grid.h * grid.w; ++yx)
            for (int j = 0; j < c; ++j) out(z * grid.h * grid.w + yx, j) = pos2d(yx, j) + depth(z, j);
    return out;
}

}  // namespace tags
