#include "tags/volume.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

namespace tags {

namespace {

double clamp_index(double s, int n) { return std::clamp(s, 0.0, static_cast<double>(n - 1)); }

// Continuous source index of output voxel i when resampling between spacings.
double source_coord(int i, double out_spacing, double in_spacing) {
    return (i + 0.5) * (out_spacing / in_spacing) - 0.5;
}

double trilinear(const Grid3<double>& g, double z, double y, double x) {
    const Dims3 d = g.dims();
    z = clamp_index(z, d.d);
    y = clamp_index(y, d.h);
    x = clamp_index(x, d.w);
    const int z0 = static_cast<int>(std::floor(z)), y0 = static_cast<int>(std::floor(y)),
              x0 = static_cast<int>(std::floor(x));
    const int z1 = std::min(z0 + 1, d.d - 1), y1 = std::min(y0 + 1, d.h - 1), x1 = std::min(x0 + 1, d.w - 1);
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    auto lerp = [](double a, double b, double t) { return t == 0.0 ? a : a + (b - a) * t; };
    const double c00 = lerp(g.at(z0, y0, x0), g.at(z0, y0, x1), fx);
    const double c01 = lerp(g.at(z0, y1, x0), g.at(z0, y1, x1), fx);
    const double c10 = lerp(g.at(z1, y0, x0), g.at(z1, y0, x1), fx);
    const double c11 = lerp(g.at(z1, y1, x0), g.at(z1, y1, x1), fx);
    return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
}

int nearest_index(double s, int n) {
    return std::clamp(static_cast<int>(std::floor(s + 0.5)), 0, n - 1);
}

Dims3 resampled_dims(Dims3 in, const Spacing& from, const Spacing& to) {
    for (int a = 0; a < 3; ++a) {
        if (!(to[a] > 0.0)) throw InvalidArgument("resample: target spacing must be > 0");
        if (!(from[a] > 0.0)) throw InvalidArgument("resample: source spacing must be > 0");
    }
    if (in.d < 1 || in.h < 1 || in.w < 1) throw InvalidArgument("resample: degenerate input " + in.str());
    auto ext = [&](int n, int a) { return std::max(1, static_cast<int>(std::lround(n * from[a] / to[a]))); };
    return {ext(in.d, 0), ext(in.h, 1), ext(in.w, 2)};
}

template <class T>
Grid3<T> zoom_grid(const Grid3<T>& g, double factor, bool nearest) {
    const Dims3 d = g.dims();
    Grid3<T> out(d, T{});
    const double cz = (d.d - 1) / 2.0, cy = (d.h - 1) / 2.0, cx = (d.w - 1) / 2.0;
    for (int z = 0; z < d.d; ++z) {
        const double sz = cz + (z - cz) / factor;
        if (sz < -0.5 || sz > d.d - 0.5) continue;
        for (int y = 0; y < d.h; ++y) {
            const double sy = cy + (y - cy) / factor;
            if (sy < -0.5 || sy > d.h - 0.5) continue;
            for (int x = 0; x < d.w; ++x) {
                const double sx = cx + (x - cx) / factor;
                if (sx < -0.5 || sx > d.w - 0.5) continue;
                if constexpr (std::is_same_v<T, double>) {
                    if (!nearest) {
                        out.at(z, y, x) = trilinear(g, sz, sy, sx);
                        continue;
                    }
                }
                out.at(z, y, x) = g.at(nearest_index(sz, d.d), nearest_index(sy, d.h), nearest_index(sx, d.w));
            }
        }
    }
    return out;
}

template <class T>
Grid3<T> crop_grid(const Grid3<T>& g, Voxel offset, Dims3 size) {
    Grid3<T> out(size, T{});
    const Dims3 d = g.dims();
    for (int z = 0; z < size.d; ++z) {
        const int sz = offset.z + z;
        if (sz < 0 || sz >= d.d) continue;
        for (int y = 0; y < size.h; ++y) {
            const int sy = offset.y + y;
            if (sy < 0 || sy >= d.h) continue;
            for (int x = 0; x < size.w; ++x) {
                const int sx = offset.x + x;
                if (sx < 0 || sx >= d.w) continue;
                out.at(z, y, x) = g.at(sz, sy, sx);
            }
        }
    }
    return out;
}

constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{0, 1}, {0, 2}, {1, 2}}};

}  // namespace

std::size_t MaskVolume::count() const {
    return static_cast<std::size_t>(std::count_if(data.values().begin(), data.values().end(),
                                                  [](std::uint8_t v) { return v != 0; }));
}

bool MaskVolume::is_binary() const {
    return std::all_of(data.values().begin(), data.values().end(), [](std::uint8_t v) { return v <= 1; });
}

MaskVolume ModelInput::organ() const {
    MaskVolume m(dims(), spacing);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = channels[2][i] != 0.0 ? 1 : 0;
    return m;
}

Volume ModelInput::image() const { return Volume{channels[0], spacing, {0.0, 0.0, 0.0}}; }

Volume resample(const Volume& v, const Spacing& target) {
    const Dims3 in = v.dims();
    const Dims3 out_dims = resampled_dims(in, v.spacing, target);
    Volume out{Grid3<double>(out_dims), target, v.origin};
    for (int z = 0; z < out_dims.d; ++z) {
        const double sz = source_coord(z, target[0], v.spacing[0]);
        for (int y = 0; y < out_dims.h; ++y) {
            const double sy = source_coord(y, target[1], v.spacing[1]);
            for (int x = 0; x < out_dims.w; ++x) {
                out.data.at(z, y, x) = trilinear(v.data, sz, sy, source_coord(x, target[2], v.spacing[2]));
            }
        }
    }
    return out;
}

MaskVolume resample(const MaskVolume& m, const Spacing& target) {
    return resample_to(m, resampled_dims(m.dims(), m.spacing, target), target);
}

MaskVolume resample_to(const MaskVolume& m, Dims3 dims, const Spacing& spacing) {
    const Dims3 in = m.dims();
    MaskVolume out(dims, spacing);
    out.origin = m.origin;
    for (int z = 0; z < dims.d; ++z) {
        const int sz = nearest_index((z + 0.5) * in.d / dims.d - 0.5, in.d);
        for (int y = 0; y < dims.h; ++y) {
            const int sy = nearest_index((y + 0.5) * in.h / dims.h - 0.5, in.h);
            for (int x = 0; x < dims.w; ++x) {
                const int sx = nearest_index((x + 0.5) * in.w / dims.w - 0.5, in.w);
                out.data.at(z, y, x) = m.data.at(sz, sy, sx);
            }
        }
    }
    return out;
}

Volume clip_normalize(const Volume& v, double lo, double hi) {
    if (!(lo < hi)) throw InvalidArgument("clip_normalize: requires lo < hi");
    Volume out = v;
    const double range = hi - lo;
    for (double& x : out.data.values()) {
        if (std::isnan(x)) x = lo;
        x = (std::clamp(x, lo, hi) - lo) / range;
    }
    return out;
}

ModelInput inject_organ_channel(const Volume& image, const MaskVolume& organ) {
    if (!(image.dims() == organ.dims())) {
        throw InvalidArgument("inject_organ_channel: image " + image.dims().str() + " vs organ " +
                              organ.dims().str());
    }
    ModelInput in;
    in.spacing = image.spacing;
    in.channels[0] = image.data;
    in.channels[1] = image.data;
    in.channels[2] = Grid3<double>(image.dims(), 0.0);
    for (std::size_t i = 0; i < organ.data.size(); ++i) in.channels[2][i] = organ.data[i] ? 1.0 : 0.0;
    return in;
}

// -- augmentation ------------------------------------------------------------

AugmentPolicy AugmentPolicy::none() {
    AugmentPolicy p;
    p.p_flip = p.p_rotate = p.p_intensity = p.p_zoom = 0.0;
    return p;
}

void AugmentPolicy::validate() const {
    for (double p : {p_flip, p_rotate, p_intensity, p_zoom}) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("augment probabilities must lie in [0,1]");
    }
    for (int plane : rotation_planes) {
        if (plane < 0 || plane > 2) throw InvalidArgument("rotation plane must be 0, 1 or 2");
    }
    if (!(zoom_min > 0.0 && zoom_min <= zoom_max)) throw InvalidArgument("invalid zoom range");
    if (intensity_shift < 0.0) throw InvalidArgument("intensity shift must be >= 0");
}

AugmentPlan draw_augment_plan(const AugmentPolicy& policy, Dims3 dims, Rng& rng) {
    policy.validate();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AugmentPlan plan;
    // Every draw is made unconditionally so the stream position does not
    // depend on which transforms fire.
    const double u_flip = unit(rng), u_rot = unit(rng), u_int = unit(rng), u_zoom = unit(rng);
    const int flip_axis = std::uniform_int_distribution<int>(0, 2)(rng);
    const double plane_pick = unit(rng);
    const int quarters = std::uniform_int_distribution<int>(1, 3)(rng);
    const double shift = unit(rng);
    const double zoom = unit(rng);

    if (u_flip < policy.p_flip) plan.flip_axis = flip_axis;
    if (u_rot < policy.p_rotate) {
        std::vector<int> eligible;
        for (int plane : policy.rotation_planes) {
            const auto [a, b] = kPlaneAxes[plane];
            if (dims[a] == dims[b]) eligible.push_back(plane);
        }
        if (!eligible.empty()) {
            const auto pick = std::min(eligible.size() - 1, static_cast<std::size_t>(plane_pick * eligible.size()));
            plan.rotate_plane = eligible[pick];
            plan.rotate_quarters = quarters;
        }
    }
    if (u_int < policy.p_intensity) plan.intensity_offset = (2.0 * shift - 1.0) * policy.intensity_shift;
    if (u_zoom < policy.p_zoom) plan.zoom = policy.zoom_min + zoom * (policy.zoom_max - policy.zoom_min);
    return plan;
}

template <class T>
Grid3<T> flip(const Grid3<T>& g, int axis) {
    if (axis < 0 || axis > 2) throw InvalidArgument("flip: axis must be 0, 1 or 2");
    const Dims3 d = g.dims();
    Grid3<T> out(d);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                const int sz = axis == 0 ? d.d - 1 - z : z;
                const int sy = axis == 1 ? d.h - 1 - y : y;
                const int sx = axis == 2 ? d.w - 1 - x : x;
                out.at(z, y, x) = g.at(sz, sy, sx);
            }
    return out;
}

template <class T>
Grid3<T> rot90(const Grid3<T>& g, int plane, int quarters) {
    if (plane < 0 || plane > 2) throw InvalidArgument("rot90: plane must be 0, 1 or 2");
    const auto [a, b] = kPlaneAxes[plane];
    const Dims3 d = g.dims();
    if (d[a] != d[b]) throw InvalidArgument("rot90: in-plane extents differ");
    const int n = d[a];
    quarters = ((quarters % 4) + 4) % 4;
    Grid3<T> cur = g;
    for (int q = 0; q < quarters; ++q) {
        Grid3<T> next(d);
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    int idx[3] = {z, y, x};
                    // (i, j) -> (j, n - 1 - i) in the rotation plane.
                    int src[3] = {z, y, x};
                    src[a] = n - 1 - idx[b];
                    src[b] = idx[a];
                    next.at(z, y, x) = cur.at(src[0], src[1], src[2]);
                }
        cur = std::move(next);
    }
    return cur;
}

template Grid3<double> flip(const Grid3<double>&, int);
template Grid3<std::uint8_t> flip(const Grid3<std::uint8_t>&, int);
template Grid3<double> rot90(const Grid3<double>&, int, int);
template Grid3<std::uint8_t> rot90(const Grid3<std::uint8_t>&, int, int);

namespace {

template <class T>
Grid3<T> apply_geometry(const AugmentPlan& plan, Grid3<T> g, bool nearest) {
    if (plan.flip_axis) g = flip(g, *plan.flip_axis);
    if (plan.rotate_plane) g = rot90(g, *plan.rotate_plane, plan.rotate_quarters);
    if (plan.zoom) g = zoom_grid(g, *plan.zoom, nearest);
    return g;
}

}  // namespace

Volume apply_augment(const AugmentPlan& plan, const Volume& image) {
    Volume out = image;
    out.data = apply_geometry(plan, image.data, false);
    if (plan.intensity_offset != 0.0) {
        for (double& v : out.data.values()) v += plan.intensity_offset;
    }
    return out;
}

MaskVolume apply_augment(const AugmentPlan& plan, const MaskVolume& mask) {
    MaskVolume out = mask;
    out.data = apply_geometry(plan, mask.data, true);
    return out;
}

ModelInput apply_augment(const AugmentPlan& plan, const ModelInput& input) {
    ModelInput out = input;
    const Volume img = apply_augment(plan, input.image());
    out.channels[0] = img.data;
    out.channels[1] = img.data;
    out.channels[2] = apply_geometry(plan, input.channels[2], true);
    return out;
}

AugmentedSample augment(const ModelInput& input, const MaskVolume& tumor, const AugmentPolicy& policy,
                        Rng& rng) {
    if (!(input.dims() == tumor.dims())) throw InvalidArgument("augment: input/mask shape mismatch");
    const AugmentPlan plan = draw_augment_plan(policy, input.dims(), rng);
    return {apply_augment(plan, input), apply_augment(plan, tumor)};
}

// -- patches -----------------------------------------------------------------

void PatchSpec::validate() const {
    if (size.d < 1 || size.h < 1 || size.w < 1) throw InvalidArgument("patch size must be >= 1");
    if (fg_weight < 0 || bg_weight < 0 || fg_weight + bg_weight == 0) {
        throw InvalidArgument("patch fg:bg ratio must be positive");
    }
}

ModelInput crop(const ModelInput& input, Voxel offset, Dims3 size) {
    ModelInput out;
    out.spacing = input.spacing;
    for (int c = 0; c < 3; ++c) out.channels[c] = crop_grid(input.channels[c], offset, size);
    return out;
}

MaskVolume crop(const MaskVolume& mask, Voxel offset, Dims3 size) {
    MaskVolume out;
    out.spacing = mask.spacing;
    out.data = crop_grid(mask.data, offset, size);
    return out;
}

PatchSample sample_patch(const ModelInput& input, const MaskVolume& tumor, const PatchSpec& spec, Rng& rng) {
    spec.validate();
    const Dims3 d = input.dims();
    if (!(d == tumor.dims())) throw InvalidArgument("sample_patch: input/mask shape mismatch");

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool want_fg = unit(rng) < spec.fg_fraction();

    std::vector<std::size_t> fg_index;
    for (std::size_t i = 0; i < tumor.data.size(); ++i)
        if (tumor.data[i]) fg_index.push_back(i);
    const bool has_bg = fg_index.size() < tumor.data.size();
    const bool foreground = !fg_index.empty() && (want_fg || !has_bg);

    std::size_t centre_index = 0;
    if (foreground) {
        centre_index = fg_index[std::uniform_int_distribution<std::size_t>(0, fg_index.size() - 1)(rng)];
    } else {
        std::uniform_int_distribution<std::size_t> any(0, tumor.data.size() - 1);
        do {
            centre_index = any(rng);
        } while (tumor.data[centre_index]);
    }
    const int z = static_cast<int>(centre_index / (static_cast<std::size_t>(d.h) * d.w));
    const int y = static_cast<int>((centre_index / d.w) % d.h);
    const int x = static_cast<int>(centre_index % d.w);
    const Voxel offset{z - spec.size.d / 2, y - spec.size.h / 2, x - spec.size.w / 2};
    return {crop(input, offset, spec.size), crop(tumor, offset, spec.size), offset, foreground};
}

// -- phantoms ----------------------------------------------------------------

MaskVolume ellipsoid_mask(Dims3 dims, const std::array<double, 3>& centre, const std::array<double, 3>& radii) {
    MaskVolume m(dims);
    if (radii[0] <= 0.0 || radii[1] <= 0.0 || radii[2] <= 0.0) return m;
    for (int z = 0; z < dims.d; ++z) {
        const double nz = (z - centre[0]) / radii[0];
        for (int y = 0; y < dims.h; ++y) {
            const double ny = (y - centre[1]) / radii[1];
            for (int x = 0; x < dims.w; ++x) {
                const double nx = (x - centre[2]) / radii[2];
                if (nz * nz + ny * ny + nx * nx <= 1.0) m.data.at(z, y, x) = 1;
            }
        }
    }
    return m;
}

Phantom synth_phantom(const PhantomSpec& spec, Rng& rng) {
    const Dims3 d = spec.dims;
    const std::array<double, 3> centre{(d.d - 1) / 2.0, (d.h - 1) / 2.0, (d.w - 1) / 2.0};
    double tumor_extent = 0.0;  // max_i r_i / R_i
    for (int a = 0; a < 3; ++a) {
        if (!(spec.organ_radii[a] > 0.0)) throw InvalidArgument("phantom: organ radii must be > 0");
        if (spec.tumor_radii[a] < 0.0) throw InvalidArgument("phantom: tumor radii must be >= 0");
        if (spec.tumor_radii[a] >= spec.organ_radii[a]) {
            throw InvalidArgument("phantom: tumor radius must be smaller than organ radius");
        }
        if (centre[a] - spec.organ_radii[a] < 0.0 || centre[a] + spec.organ_radii[a] > d[a] - 1) {
            throw InvalidArgument("phantom: organ does not fit in the grid");
        }
        tumor_extent = std::max(tumor_extent, spec.tumor_radii[a] / spec.organ_radii[a]);
    }

    // A tumor ellipsoid with normalized offset o/R satisfies
    // |o/R| + max(r/R) < 1  =>  it lies strictly inside the organ.
    std::array<double, 3> offset{0.0, 0.0, 0.0};
    const double slack = 1.0 - tumor_extent;
    if (spec.tumor_offset) {
        offset = *spec.tumor_offset;
    } else {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        std::array<double, 3> dir{};
        double norm2 = 0.0;
        do {
            dir = {u(rng), u(rng), u(rng)};
            norm2 = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
        } while (norm2 > 1.0);
        const double reach = 0.8 * slack;
        for (int a = 0; a < 3; ++a) offset[a] = dir[a] * reach * spec.organ_radii[a];
    }
    double norm_offset = 0.0;
    for (int a = 0; a < 3; ++a) norm_offset += std::pow(offset[a] / spec.organ_radii[a], 2);
    if (std::sqrt(norm_offset) + tumor_extent >= 1.0) {
        throw InvalidArgument("phantom: tumor does not fit strictly inside the organ");
    }

    Phantom ph;
    ph.organ = ellipsoid_mask(d, centre, spec.organ_radii);
    const std::array<double, 3> tc{centre[0] + offset[0], centre[1] + offset[1], centre[2] + offset[2]};
    ph.tumor = ellipsoid_mask(d, tc, spec.tumor_radii);
    for (std::size_t i = 0; i < ph.tumor.data.size(); ++i) ph.tumor.data[i] &= ph.organ.data[i];
    ph.organ.spacing = ph.tumor.spacing = spec.spacing;

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    ph.image = Volume{Grid3<double>(d), spec.spacing, {0.0, 0.0, 0.0}};
    for (std::size_t i = 0; i < ph.image.data.size(); ++i) {
        const double base = ph.tumor.data[i] ? spec.tumor_hu : (ph.organ.data[i] ? spec.organ_hu : spec.background_hu);
        ph.image.data[i] = base + (spec.noise_sigma > 0.0 ? noise(rng) : 0.0);
    }
    return ph;
}

}  // namespace tags
