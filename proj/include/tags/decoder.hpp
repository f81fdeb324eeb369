#pragma once

#include <vector>

#include "tags/encoder.hpp"
#include "tags/points.hpp"

namespace tags {

/// Multi-layer aggregation decoder. Every stage output is projected to
/// `stage_width`, the projections are concatenated and fused, point prompts
/// are injected by one cross-attention layer on the token grid, and the
/// fused map is upsampled x2 per entry of `up_widths` (3x3x3 conv + GELU
/// after each step) until it reaches the input resolution, where it is
/// concatenated with the three input channels for the output head.
struct DecoderConfig {
    int stage_width = 64;
    int fused_width = 256;
    std::vector<int> up_widths{128, 64, 32, 16};
    int head_width = 16;

    static DecoderConfig tiny();
    void validate(const EncoderConfig& enc) const;
};

std::vector<ParamSpec> decoder_layout(const DecoderConfig& cfg, const EncoderConfig& enc);

/// Sinusoidal encoding of normalized coordinates u in [0,1]^3: for axis a and
/// frequency k < width/6, entries (sin, cos)(2^k * pi * u_a); the remainder
/// is zero.
std::vector<double> sinusoidal_encoding(double uz, double uy, double ux, int width);

/// Normalized coordinate of a voxel centre: (i + 0.5) / extent.
double normalized_coord(int index, int extent);

/// Prompt embeddings [n, fused_width]: positional encoding plus the learned
/// label embedding. Prompts are put in a canonical order first, so the result
/// does not depend on input order. Returns nullptr for an empty prompt set.
ad::Var encode_points(const std::vector<PointPrompt>& points, Dims3 volume_shape, const ParameterStore& params,
                      const DecoderConfig& cfg);

struct DecodeResult {
    ad::Var logits;  ///< [voxels, 1]
    ad::Var probs;   ///< sigmoid(logits)
};

DecodeResult decode_mask(const EncoderOutput& enc_out, const ModelInput& input, const std::vector<PointPrompt>& points,
                         const DecoderConfig& cfg, const EncoderConfig& enc, const ParameterStore& params);

}  // namespace tags
