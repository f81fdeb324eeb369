#pragma once

// Brute-force reference implementations used as test oracles. Deliberately
// naive and written without the library's helpers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "tags/autograd.hpp"
#include "tags/volume.hpp"

namespace oracle {

using tags::Dims3;
using tags::MaskVolume;
using tags::Voxel;

inline bool inside(const MaskVolume& m, int z, int y, int x) {
    const Dims3 d = m.dims();
    return z >= 0 && y >= 0 && x >= 0 && z < d.d && y < d.h && x < d.w && m.data.at(z, y, x) != 0;
}

inline std::vector<Voxel> voxels(const MaskVolume& m) {
    std::vector<Voxel> out;
    const Dims3 d = m.dims();
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x)
                if (m.data.at(z, y, x)) out.push_back({z, y, x});
    return out;
}

/// Mask voxels with a 6-neighbour that is not in the mask (or off-grid).
inline std::vector<Voxel> boundary(const MaskVolume& m) {
    std::vector<Voxel> out;
    for (const Voxel& v : voxels(m)) {
        const bool edge = !inside(m, v.z - 1, v.y, v.x) || !inside(m, v.z + 1, v.y, v.x) ||
                          !inside(m, v.z, v.y - 1, v.x) || !inside(m, v.z, v.y + 1, v.x) ||
                          !inside(m, v.z, v.y, v.x - 1) || !inside(m, v.z, v.y, v.x + 1);
        if (edge) out.push_back(v);
    }
    return out;
}

inline double dice(const MaskVolume& a, const MaskVolume& b) {
    const auto va = voxels(a), vb = voxels(b);
    if (va.empty() && vb.empty()) return 1.0;
    const std::set<Voxel> sb(vb.begin(), vb.end());
    int common = 0;
    for (const auto& v : va) common += sb.count(v) ? 1 : 0;
    return 2.0 * common / static_cast<double>(va.size() + vb.size());
}

inline double dist2(const Voxel& a, const Voxel& b, const tags::Spacing& s) {
    const double dz = (a.z - b.z) * s[0], dy = (a.y - b.y) * s[1], dx = (a.x - b.x) * s[2];
    return dz * dz + dy * dy + dx * dx;
}

/// Exhaustive pairwise surface distances.
inline double nsd(const MaskVolume& a, const MaskVolume& b, double tol, const tags::Spacing& s) {
    const auto sa = boundary(a), sb = boundary(b);
    if (sa.empty() && sb.empty()) return 1.0;
    if (sa.empty() || sb.empty()) return 0.0;
    auto covered = [&](const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
        int n = 0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, dist2(p, q, s));
            if (std::sqrt(best) <= tol + 1e-9) ++n;
        }
        return n;
    };
    return static_cast<double>(covered(sa, sb) + covered(sb, sa)) / static_cast<double>(sa.size() + sb.size());
}

/// ICC(2,1) via explicit two-way ANOVA in long double.
inline double icc21(const std::vector<std::vector<double>>& x) {
    const std::size_t n = x.size(), k = x[0].size();
    long double grand = 0;
    for (const auto& r : x)
        for (double v : r) grand += v;
    grand /= static_cast<long double>(n * k);
    long double ss_rows = 0, ss_cols = 0, ss_total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        long double m = 0;
        for (std::size_t j = 0; j < k; ++j) m += x[i][j];
        m /= k;
        ss_rows += k * (m - grand) * (m - grand);
    }
    for (std::size_t j = 0; j < k; ++j) {
        long double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += x[i][j];
        m /= n;
        ss_cols += n * (m - grand) * (m - grand);
    }
    for (const auto& r : x)
        for (double v : r) ss_total += (v - grand) * (v - grand);
    const long double ss_err = ss_total - ss_rows - ss_cols;
    const long double bms = ss_rows / (n - 1);
    const long double jms = ss_cols / (k - 1);
    const long double ems = ss_err / ((n - 1) * (k - 1));
    return static_cast<double>((bms - ems) / (bms + (k - 1) * ems + k * (jms - ems) / n));
}

/// Largest 26-connected component by repeated BFS; ties to the earliest seed.
inline MaskVolume largest_component(const MaskVolume& m) {
    const Dims3 d = m.dims();
    MaskVolume best(d, m.spacing);
    std::size_t best_n = 0;
    std::set<Voxel> done;
    for (const Voxel& seed : voxels(m)) {
        if (done.count(seed)) continue;
        std::vector<Voxel> comp{seed}, queue{seed};
        done.insert(seed);
        while (!queue.empty()) {
            const Voxel v = queue.back();
            queue.pop_back();
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const Voxel n{v.z + dz, v.y + dy, v.x + dx};
                        if (inside(m, n.z, n.y, n.x) && !done.count(n)) {
                            done.insert(n);
                            comp.push_back(n);
                            queue.push_back(n);
                        }
                    }
        }
        if (comp.size() > best_n) {
            best_n = comp.size();
            best = MaskVolume(d, m.spacing);
            for (const auto& v : comp) best.data.at(v.z, v.y, v.x) = 1;
        }
    }
    return best;
}

/// argmax over mask voxels of the distance to the nearest non-mask voxel,
/// where the ring of voxels just outside the grid counts as non-mask.
inline Voxel deepest(const MaskVolume& m) {
    const Dims3 d = m.dims();
    std::vector<Voxel> outside;
    for (int z = -1; z <= d.d; ++z)
        for (int y = -1; y <= d.h; ++y)
            for (int x = -1; x <= d.w; ++x)
                if (!inside(m, z, y, x)) outside.push_back({z, y, x});
    Voxel best{};
    double best_d = -1;
    for (const Voxel& v : voxels(m)) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& o : outside) nearest = std::min(nearest, dist2(v, o, {1, 1, 1}));
        if (nearest > best_d) {
            best_d = nearest;
            best = v;
        }
    }
    return best;
}

/// Random union of small boxes and balls, sometimes in several pieces.
inline MaskVolume random_blob(Dims3 d, std::mt19937_64& rng, int pieces = 3) {
    MaskVolume m(d);
    std::uniform_int_distribution<int> nz(0, d.d - 1), ny(0, d.h - 1), nx(0, d.w - 1), rad(1, 3), kind(0, 1);
    for (int p = 0; p < pieces; ++p) {
        const int cz = nz(rng), cy = ny(rng), cx = nx(rng), r = rad(rng);
        const bool ball = kind(rng) == 1;
        for (int z = 0; z < d.d; ++z)
            for (int y = 0; y < d.h; ++y)
                for (int x = 0; x < d.w; ++x) {
                    const int dz = z - cz, dy = y - cy, dx = x - cx;
                    const bool in = ball ? dz * dz + dy * dy + dx * dx <= r * r
                                         : std::abs(dz) <= r && std::abs(dy) <= r && std::abs(dx) <= r - 1;
                    if (in) m.data.at(z, y, x) = 1;
                }
    }
    return m;
}

inline MaskVolume random_mask(Dims3 d, std::mt19937_64& rng, double p) {
    MaskVolume m(d);
    std::bernoulli_distribution b(p);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = b(rng) ? 1 : 0;
    return m;
}

/// Direct "same" 3D convolution, weight laid out [(kz,ky,kx,cin), cout].
inline tags::ad::Tensor conv3d(const tags::ad::Tensor& x, Dims3 d, const tags::ad::Tensor& w,
                               const tags::ad::Tensor& b, int k) {
    const int cin = x.cols(), cout = w.cols(), r = k / 2;
    tags::ad::Tensor out({static_cast<int>(d.count()), cout});
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int xx = 0; xx < d.w; ++xx)
                for (int o = 0; o < cout; ++o) {
                    double acc = b.data[o];
                    for (int kz = 0; kz < k; ++kz)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int sz = z + kz - r, sy = y + ky - r, sx = xx + kx - r;
                                if (sz < 0 || sy < 0 || sx < 0 || sz >= d.d || sy >= d.h || sx >= d.w) continue;
                                for (int c = 0; c < cin; ++c) {
                                    const int row = ((kz * k + ky) * k + kx) * cin + c;
                                    acc += x(static_cast<int>(d.index(sz, sy, sx)), c) * w(row, o);
                                }
                            }
                    out(static_cast<int>(d.index(z, y, xx)), o) = acc;
                }
    return out;
}

/// Trilinear sample with half-voxel alignment and edge clamping.
inline double trilinear_at(const std::vector<double>& v, Dims3 from, Dims3 to, int z, int y, int x) {
    auto coord = [](int i, int n_from, int n_to) {
        double s = (i + 0.5) * n_from / n_to - 0.5;
        return std::clamp(s, 0.0, static_cast<double>(n_from - 1));
    };
    const double cz = coord(z, from.d, to.d), cy = coord(y, from.h, to.h), cx = coord(x, from.w, to.w);
    double acc = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
                const int iz = std::min(static_cast<int>(std::floor(cz)) + a, from.d - 1);
                const int iy = std::min(static_cast<int>(std::floor(cy)) + b, from.h - 1);
                const int ix = std::min(static_cast<int>(std::floor(cx)) + c, from.w - 1);
                const double wz = a ? cz - std::floor(cz) : 1 - (cz - std::floor(cz));
                const double wy = b ? cy - std::floor(cy) : 1 - (cy - std::floor(cy));
                const double wx = c ? cx - std::floor(cx) : 1 - (cx - std::floor(cx));
                acc += wz * wy * wx * v[from.index(iz, iy, ix)];
            }
    return acc;
}

/// Central finite-difference gradient of `f` with respect to the chosen
/// entries of `param`; returns (analytic, numeric) pairs.
struct GradSample {
    std::vector<double> analytic;
    std::vector<double> numeric;

    double relative_error() const {
        double diff = 0, na = 0, nn = 0;
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
            na += analytic[i] * analytic[i];
            nn += numeric[i] * numeric[i];
        }
        const double scale = std::max(std::sqrt(na), std::sqrt(nn));
        return scale == 0 ? 0 : std::sqrt(diff) / scale;
    }
};

inline GradSample check_grad(const tags::ad::Var& param, const std::vector<std::size_t>& entries,
                             const std::function<tags::ad::Var()>& loss, double h = 1e-5) {
    GradSample g;
    param->grad = tags::ad::Tensor();
    tags::ad::backward(loss());
    const auto analytic = param->grad;
    for (std::size_t e : entries) {
        g.analytic.push_back(analytic.data.empty() ? 0.0 : analytic.data[e]);
        const double keep = param->value.data[e];
        param->value.data[e] = keep + h;
        const double up = loss()->value.item();
        param->value.data[e] = keep - h;
        const double down = loss()->value.item();
        param->value.data[e] = keep;
        g.numeric.push_back((up - down) / (2 * h));
    }
    return g;
}

inline std::vector<std::size_t> sample_entries(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(std::min(n, k));
    return all;
}

inline tags::ad::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    tags::ad::Tensor t(std::move(shape), 0.0);
    std::normal_distribution<double> nd(0.0, scale);
    for (double& v : t.data) v = nd(rng);
    return t;
}

}  // namespace oracle
