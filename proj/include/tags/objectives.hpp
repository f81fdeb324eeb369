#pragma once

#include <vector>

#include "tags/autograd.hpp"
#include "tags/prompt_bank.hpp"
#include "tags/volume.hpp"

namespace tags {

struct LossConfig {
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double dice_eps = 1e-5;
    /// Softmax temperature applied to raw cosine similarities.
    double temperature = 1.0;

    void validate() const;
};

/// Per-token cosine similarity against (fg, bg) text embeddings: [tokens, 2].
/// Zero-norm tokens map to 0.
ad::Var similarity_map(const ad::Var& adapter_out, const TextEmbeddingPair& text);

/// Trilinear upsampling of each similarity channel from `grid` to `target`,
/// followed by a per-voxel 2-way softmax of sim / temperature: [voxels, 2].
ad::Var dense_prediction(const ad::Var& similarity, Dims3 grid, Dims3 target, const LossConfig& cfg);

/// Mean over voxels of -alpha_t (1 - p_t)^gamma log p_t; `probs` is [voxels, 2]
/// with columns (fg, bg). alpha applies to foreground, 1 - alpha to background.
ad::Var focal_loss(const ad::Var& probs, const MaskVolume& y, const LossConfig& cfg);

/// Soft dice on a foreground probability column [voxels, 1]:
/// 1 - (2 sum(p y) + eps) / (sum(p) + sum(y) + eps).
ad::Var dice_loss(const ad::Var& fg_prob, const MaskVolume& y, const LossConfig& cfg);

struct AlignmentLoss {
    ad::Var total;
    std::vector<double> per_stage;
};

/// Sum over stages of 0.5 * focal + 0.5 * dice on the dense prediction derived
/// from each stage's alignment-adapter output.
AlignmentLoss alignment_loss(const std::vector<ad::Var>& adapter_outputs, Dims3 grid,
                             const TextEmbeddingPair& text, const MaskVolume& y, const LossConfig& cfg);

struct TotalLoss {
    ad::Var total;
    double dice = 0.0;
    double alignment = 0.0;
};

/// L = dice(y_hat, y) + l_a.
TotalLoss total_loss(const ad::Var& y_hat, const MaskVolume& y, const ad::Var& alignment, const LossConfig& cfg);

}  // namespace tags
