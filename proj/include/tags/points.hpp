#pragma once

#include <string>
#include <vector>

#include "tags/volume.hpp"

namespace tags {

enum class PointLabel { Background = 0, Foreground = 1 };

struct PointPrompt {
    Voxel coord;
    PointLabel label = PointLabel::Foreground;

    bool operator==(const PointPrompt&) const = default;
};

enum class StrategyKind { Random, Edge, Central };

struct SelectionStrategy {
    StrategyKind kind = StrategyKind::Random;
    int k = 1;

    void validate() const;
    /// e.g. "random (1pts)", "edge (3pts)".
    std::string label() const;
    static StrategyKind parse_kind(const std::string& name);
};

/// The four point-robustness rows: random(1), edge(1), edge(3), central(1).
std::vector<SelectionStrategy> robustness_strategies();

/// Training prompts: n/2 foreground points inside the tumor and the rest in
/// the background; all n from the background when the tumor is empty.
std::vector<PointPrompt> sample_train_points(const MaskVolume& tumor, int n, Rng& rng);

/// Evaluation-time prompts chosen from the ground-truth tumor. Edge and
/// central operate on the largest connected lesion. Throws NoLesionError on
/// an empty mask.
std::vector<PointPrompt> select_inference_points(const MaskVolume& tumor, const SelectionStrategy& strategy,
                                                 Rng& rng);

/// Largest 26-connected component; ties go to the component whose first
/// voxel (z-major order) comes first.
MaskVolume largest_component(const MaskVolume& mask);

/// Mask voxels with at least one 6-neighbour outside the mask (voxels beyond
/// the grid count as outside), in z-major order.
std::vector<Voxel> boundary_voxels(const MaskVolume& mask);

/// Squared Euclidean distance (mm^2) from every voxel to the nearest voxel
/// where `target` is set. Voxels with no reachable target get +inf.
Grid3<double> squared_distance_to(const Grid3<std::uint8_t>& target, const Spacing& spacing);

/// Deepest mask voxel: argmax of the distance to the nearest non-mask voxel
/// (the grid border counts as non-mask); ties broken lexicographically.
Voxel deepest_voxel(const MaskVolume& mask);

std::string label_name(PointLabel label);
PointLabel parse_label(const std::string& s);

}  // namespace tags
