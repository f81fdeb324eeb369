#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tags/grid.hpp"

namespace tags {

using Rng = std::mt19937_64;

/// Scalar image on a regular grid; spacing and origin in millimetres.
struct Volume {
    Grid3<double> data;
    Spacing spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    Dims3 dims() const { return data.dims(); }
};

/// Binary label grid paired with a Volume.
struct MaskVolume {
    Grid3<std::uint8_t> data;
    Spacing spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    MaskVolume() = default;
    explicit MaskVolume(Dims3 dims, Spacing sp = {1.0, 1.0, 1.0}) : data(dims, 0), spacing(sp) {}

    Dims3 dims() const { return data.dims(); }
    std::size_t count() const;
    bool empty() const { return count() == 0; }
    bool is_binary() const;
    bool operator==(const MaskVolume& o) const { return data == o.data; }
};

/// Three-channel encoder input: two copies of the normalized image and the
/// organ mask in the last channel.
struct ModelInput {
    std::array<Grid3<double>, 3> channels;
    Spacing spacing{1.0, 1.0, 1.0};

    Dims3 dims() const { return channels[0].dims(); }
    MaskVolume organ() const;
    Volume image() const;
};

// -- preprocessing -----------------------------------------------------------

/// Trilinear resampling of an image to `target` spacing. Output extents are
/// round(extent * spacing / target) per axis.
Volume resample(const Volume& v, const Spacing& target);
/// Nearest-neighbour resampling of a label grid.
MaskVolume resample(const MaskVolume& m, const Spacing& target);
/// Nearest-neighbour resampling onto explicit extents (used to map
/// predictions back onto the source grid).
MaskVolume resample_to(const MaskVolume& m, Dims3 dims, const Spacing& spacing);

/// Clips to [lo, hi] and maps linearly onto [0, 1].
Volume clip_normalize(const Volume& v, double lo, double hi);

ModelInput inject_organ_channel(const Volume& image, const MaskVolume& organ);

// -- augmentation ------------------------------------------------------------

struct AugmentPolicy {
    double p_flip = 0.5;
    double p_rotate = 0.5;
    double p_intensity = 0.5;
    double p_zoom = 0.3;
    /// Planes eligible for 90-degree rotation: 0 = (z,y), 1 = (z,x), 2 = (y,x).
    std::vector<int> rotation_planes{0, 1, 2};
    double intensity_shift = 0.1;
    double zoom_min = 0.9;
    double zoom_max = 1.1;

    static AugmentPolicy none();
    void validate() const;
};

/// Concrete transform drawn from a policy. Applying the same plan to image
/// and mask keeps them aligned.
struct AugmentPlan {
    std::optional<int> flip_axis;
    std::optional<int> rotate_plane;
    int rotate_quarters = 0;
    double intensity_offset = 0.0;
    std::optional<double> zoom;
};

AugmentPlan draw_augment_plan(const AugmentPolicy& policy, Dims3 dims, Rng& rng);

Volume apply_augment(const AugmentPlan& plan, const Volume& image);
MaskVolume apply_augment(const AugmentPlan& plan, const MaskVolume& mask);
ModelInput apply_augment(const AugmentPlan& plan, const ModelInput& input);

struct AugmentedSample {
    ModelInput input;
    MaskVolume tumor;
};
AugmentedSample augment(const ModelInput& input, const MaskVolume& tumor, const AugmentPolicy& policy,
                        Rng& rng);

template <class T>
Grid3<T> flip(const Grid3<T>& g, int axis);
/// Rotates by quarters * 90 degrees in `plane`; both in-plane extents must match.
template <class T>
Grid3<T> rot90(const Grid3<T>& g, int plane, int quarters);

// -- patch sampling ----------------------------------------------------------

struct PatchSpec {
    Dims3 size{128, 128, 128};
    int fg_weight = 2;
    int bg_weight = 1;

    double fg_fraction() const { return static_cast<double>(fg_weight) / (fg_weight + bg_weight); }
    void validate() const;
};

struct PatchSample {
    ModelInput input;
    MaskVolume tumor;
    Voxel offset;  ///< source coordinate of patch voxel (0,0,0); may be negative
    bool foreground = false;
};

/// Zero-padded crop whose voxel (0,0,0) sits at `offset` in the source grid.
ModelInput crop(const ModelInput& input, Voxel offset, Dims3 size);
MaskVolume crop(const MaskVolume& mask, Voxel offset, Dims3 size);

PatchSample sample_patch(const ModelInput& input, const MaskVolume& tumor, const PatchSpec& spec, Rng& rng);

// -- synthetic phantoms -------------------------------------------------------

struct PhantomSpec {
    Dims3 dims{48, 48, 48};
    Spacing spacing{1.0, 1.0, 1.0};
    std::array<double, 3> organ_radii{16.0, 14.0, 15.0};
    std::array<double, 3> tumor_radii{6.0, 6.0, 6.0};
    /// Tumor centre relative to the organ centre (voxels); drawn at random when unset.
    std::optional<std::array<double, 3>> tumor_offset;
    double background_hu = 0.0;
    double organ_hu = 150.0;
    double tumor_hu = 60.0;
    double noise_sigma = 10.0;
};

struct Phantom {
    Volume image;
    MaskVolume organ;
    MaskVolume tumor;
};

Phantom synth_phantom(const PhantomSpec& spec, Rng& rng);

/// Voxels whose centres satisfy sum(((p - centre) / radii)^2) <= 1.
MaskVolume ellipsoid_mask(Dims3 dims, const std::array<double, 3>& centre,
                          const std::array<double, 3>& radii);

}  // namespace tags
