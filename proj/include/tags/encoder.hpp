#pragma once

#include <vector>

#include "tags/autograd.hpp"
#include "tags/parameters.hpp"
#include "tags/volume.hpp"

namespace tags {

enum class Activation { Gelu, Identity };

/// 3D-inflated ViT encoder. Stages keep the token grid resolution; each stage
/// is `blocks_per_stage` attention blocks, each followed by a spatial adapter,
/// then a stage-wise alignment adapter with a lambda-weighted residual.
struct EncoderConfig {
    int num_stages = 4;
    int blocks_per_stage = 3;
    int embed_width = 768;
    int num_heads = 12;
    int mlp_ratio = 4;
    int patch_size = 16;
    Dims3 input_size{128, 128, 128};
    /// Bottleneck width and kernel of the spatial adapters.
    int adapter_width = 192;
    int adapter_kernel = 3;
    double lambda = 0.2;
    Activation alignment_activation = Activation::Gelu;

    /// Desk-scale preset: 2 stages, width 32, patch 8 on 32^3 inputs.
    static EncoderConfig tiny();
    void validate() const;
    Dims3 grid() const;
    int tokens() const { return static_cast<int>(grid().count()); }
};

std::vector<ParamSpec> encoder_layout(const EncoderConfig& cfg);

struct EncoderOutput {
    Dims3 grid;
    /// F'_s per stage, [tokens, width].
    std::vector<ad::Var> stage_outputs;
    /// A_s(F_s) per stage, [tokens, width].
    std::vector<ad::Var> adapter_outputs;
};

/// Non-overlapping cubic patches flattened channel-major: row = token (z-major
/// over the grid), column = (channel, dz, dy, dx).
ad::Tensor extract_patches(const ModelInput& input, int patch_size);

/// Patch embedding plus positional encodings: stage-0 tokens.
ad::Var patchify3d(const ModelInput& input, const EncoderConfig& cfg, const ParameterStore& params);

/// A_s(F_s) = sigma(F_s W_s).
ad::Var apply_alignment_adapter(const ad::Var& features, const ad::Var& weight,
                                Activation act = Activation::Gelu);

/// F'_s = lambda * A_s(F_s) + (1 - lambda) * F_s.
ad::Var stage_residual(const ad::Var& features, const ad::Var& adapter_out, double lambda);

EncoderOutput encoder_forward(const ModelInput& input, const EncoderConfig& cfg, const ParameterStore& params);

// -- 2D checkpoint inflation --------------------------------------------------

/// Replicates a 2D patch-embedding kernel [3*p*p, c] along depth and divides
/// by p, giving [3*p^3, c] with the same response to depth-constant input.
ad::Tensor inflate_patch_kernel(const ad::Tensor& kernel2d, int patch_size);
/// Extends 2D positional encodings [Ph*Pw, c] to [Pd*Ph*Pw, c] by adding a
/// per-depth encoding [Pd, c].
ad::Tensor inflate_positional(const ad::Tensor& pos2d, const ad::Tensor& depth, Dims3 grid);

}  // namespace tags
