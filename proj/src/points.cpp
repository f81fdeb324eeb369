#include "tags/points.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tags/error.hpp"

namespace tags {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Voxel voxel_at(const Dims3& d, std::size_t i) {
    return {static_cast<int>(i / (static_cast<std::size_t>(d.h) * d.w)), static_cast<int>((i / d.w) % d.h),
            static_cast<int>(i % d.w)};
}

// Picks k entries uniformly; distinct when the pool is large enough, then
// cycles through the pool again.
std::vector<Voxel> pick(std::vector<Voxel> pool, int k, Rng& rng) {
    std::vector<Voxel> out;
    if (pool.empty()) return out;
    const std::size_t distinct = std::min<std::size_t>(k, pool.size());
    for (std::size_t i = 0; i < distinct; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    for (std::size_t i = distinct; i < static_cast<std::size_t>(k); ++i) out.push_back(out[i % distinct]);
    return out;
}

// One pass of the lower-envelope squared distance transform along a line:
// out[p] = min_q (s^2 (p - q)^2 + f[q]).
void edt_line(const std::vector<double>& f, std::vector<double>& out, double s, std::vector<int>& v,
              std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    const double s2 = s * s;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        while (k >= 0) {
            const int r = v[k];
            const double inter = ((f[q] + s2 * q * q) - (f[r] + s2 * r * r)) / (2.0 * s2 * (q - r));
            if (inter <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -kInf : ((f[q] + s2 * q * q) - (f[v[k - 1]] + s2 * v[k - 1] * v[k - 1])) /
                                    (2.0 * s2 * (q - v[k - 1]));
        z[k + 1] = kInf;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), kInf);
        return;
    }
    int j = 0;
    for (int p = 0; p < n; ++p) {
        while (z[j + 1] < p) ++j;
        const double dq = p - v[j];
        out[p] = s2 * dq * dq + f[v[j]];
    }
}

}  // namespace

void SelectionStrategy::validate() const {
    if (k < 1) throw InvalidArgument("selection strategy needs k >= 1");
    if (kind == StrategyKind::Central && k != 1) throw InvalidArgument("central selection uses exactly one point");
}

std::string SelectionStrategy::label() const {
    const char* name = kind == StrategyKind::Random ? "random" : (kind == StrategyKind::Edge ? "edge" : "central");
    return std::string(name) + " (" + std::to_string(k) + "pts)";
}

StrategyKind SelectionStrategy::parse_kind(const std::string& name) {
    if (name == "random") return StrategyKind::Random;
    if (name == "edge") return StrategyKind::Edge;
    if (name == "central") return StrategyKind::Central;
    throw InvalidArgument("unknown selection strategy '" + name + "'");
}

std::vector<SelectionStrategy> robustness_strategies() {
    return {{StrategyKind::Random, 1}, {StrategyKind::Edge, 1}, {StrategyKind::Edge, 3}, {StrategyKind::Central, 1}};
}

std::vector<PointPrompt> sample_train_points(const MaskVolume& tumor, int n, Rng& rng) {
    if (n < 1) throw InvalidArgument("sample_train_points: n must be >= 1");
    const Dims3 d = tumor.dims();
    std::vector<Voxel> fg, bg;
    for (std::size_t i = 0; i < tumor.data.size(); ++i) (tumor.data[i] ? fg : bg).push_back(voxel_at(d, i));
    if (bg.empty()) throw InvalidArgument("sample_train_points: volume has no background voxels");

    const int n_fg = fg.empty() ? 0 : n / 2;
    std::vector<PointPrompt> out;
    for (const auto& v : pick(std::move(fg), n_fg, rng)) out.push_back({v, PointLabel::Foreground});
    for (const auto& v : pick(std::move(bg), n - n_fg, rng)) out.push_back({v, PointLabel::Background});
    return out;
}

std::vector<PointPrompt> select_inference_points(const MaskVolume& tumor, const SelectionStrategy& strategy,
                                                 Rng& rng) {
    strategy.validate();
    if (tumor.empty()) throw NoLesionError();
    std::vector<Voxel> chosen;
    switch (strategy.kind) {
        case StrategyKind::Random: {
            std::vector<Voxel> pool;
            for (std::size_t i = 0; i < tumor.data.size(); ++i)
                if (tumor.data[i]) pool.push_back(voxel_at(tumor.dims(), i));
            chosen = pick(std::move(pool), strategy.k, rng);
            break;
        }
        case StrategyKind::Edge:
            chosen = pick(boundary_voxels(largest_component(tumor)), strategy.k, rng);
            break;
        case StrategyKind::Central:
            chosen = {deepest_voxel(largest_component(tumor))};
            break;
    }
    std::vector<PointPrompt> out;
    for (const auto& v : chosen) out.push_back({v, PointLabel::Foreground});
    return out;
}

MaskVolume largest_component(const MaskVolume& mask) {
    const Dims3 d = mask.dims();
    std::vector<int> label(mask.data.size(), -1);
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < mask.data.size(); ++seed) {
        if (!mask.data[seed] || label[seed] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        std::size_t count = 0;
        label[seed] = id;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            ++count;
            const Voxel v = voxel_at(d, cur);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int z = v.z + dz, y = v.y + dy, x = v.x + dx;
                        if (!d.contains(z, y, x)) continue;
                        const std::size_t nb = d.index(z, y, x);
                        if (mask.data[nb] && label[nb] < 0) {
                            label[nb] = id;
                            stack.push_back(nb);
                        }
                    }
        }
        sizes.push_back(count);
    }
    MaskVolume out(d, mask.spacing);
    out.origin = mask.origin;
    if (sizes.empty()) return out;
    // max_element returns the first maximum, i.e. the earliest seed.
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    for (std::size_t i = 0; i < label.size(); ++i) out.data[i] = label[i] == best ? 1 : 0;
    return out;
}

std::vector<Voxel> boundary_voxels(const MaskVolume& mask) {
    const Dims3 d = mask.dims();
    static constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    std::vector<Voxel> out;
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                if (!mask.data.at(z, y, x)) continue;
                for (const auto& o : kOffsets) {
                    const int nz = z + o[0], ny = y + o[1], nx = x + o[2];
                    if (!d.contains(nz, ny, nx) || !mask.data.at(nz, ny, nx)) {
                        out.push_back({z, y, x});
                        break;
                    }
                }
            }
    return out;
}

Grid3<double> squared_distance_to(const Grid3<std::uint8_t>& target, const Spacing& spacing) {
    const Dims3 d = target.dims();
    Grid3<double> dist(d, kInf);
    for (std::size_t i = 0; i < target.size(); ++i)
        if (target[i]) dist[i] = 0.0;

    const int longest = std::max({d.d, d.h, d.w});
    std::vector<double> f(longest), out(longest), z(longest + 1);
    std::vector<int> v(longest);
    auto pass = [&](int axis) {
        const int n = d[axis];
        f.resize(n);
        out.resize(n);
        const int n1 = axis == 0 ? d.h : d.d;
        const int n2 = axis == 2 ? d.h : d.w;
        for (int a = 0; a < n1; ++a)
            for (int b = 0; b < n2; ++b) {
                auto idx = [&](int t) {
                    if (axis == 0) return d.index(t, a, b);
                    if (axis == 1) return d.index(a, t, b);
                    return d.index(a, b, t);
                };
                for (int t = 0; t < n; ++t) f[t] = dist[idx(t)];
                edt_line(f, out, spacing[axis], v, z);
                for (int t = 0; t < n; ++t) dist[idx(t)] = out[t];
            }
    };
    pass(2);
    pass(1);
    pass(0);
    return dist;
}

Voxel deepest_voxel(const MaskVolume& mask) {
    if (mask.empty()) throw NoLesionError();
    const Dims3 d = mask.dims();
    // Pad by one voxel so the grid border counts as background.
    const Dims3 pd{d.d + 2, d.h + 2, d.w + 2};
    Grid3<std::uint8_t> background(pd, 1);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x)
                if (mask.data.at(z, y, x)) background.at(z + 1, y + 1, x + 1) = 0;
    const Grid3<double> dist = squared_distance_to(background, {1.0, 1.0, 1.0});
    Voxel best{};
    double best_d = -1.0;
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                if (!mask.data.at(z, y, x)) continue;
                const double dd = dist.at(z + 1, y + 1, x + 1);
                if (dd > best_d) {
                    best_d = dd;
                    best = {z, y, x};
                }
            }
    return best;
}

std::string label_name(PointLabel label) { return label == PointLabel::Foreground ? "fg" : "bg"; }

PointLabel parse_label(const std::string& s) {
    if (s == "fg" || s == "foreground" || s == "1") return PointLabel::Foreground;
    if (s == "bg" || s == "background" || s == "0") return PointLabel::Background;
    throw InvalidArgument("unknown point label '" + s + "'");
}

}  // namespace tags
