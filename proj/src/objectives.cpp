#include "tags/objectives.hpp"

#include <cmath>
#include <memory>

#include "tags/error.hpp"

namespace tags {

namespace {

constexpr double kLogClamp = 1e-12;

void require_voxels(const ad::Var& x, const MaskVolume& y, const char* op) {
    if (static_cast<std::size_t>(x->value.rows()) != y.data.size()) {
        throw InvalidArgument(std::string(op) + ": prediction has " + std::to_string(x->value.rows()) +
                              " voxels, mask has " + std::to_string(y.data.size()));
    }
}

// Shares the value/backward plumbing of a loss node whose inputs are a single tensor.
ad::Var scalar_node(double value, const ad::Var& input, std::function<void(ad::Node&)> fn) {
    auto node = std::make_shared<ad::Node>();
    node->value = ad::Tensor({1}, {value});
    if (input->requires_grad) {
        node->requires_grad = true;
        node->inputs = {input};
        node->backward_fn = std::move(fn);
    }
    return node;
}

}  // namespace

void LossConfig::validate() const {
    if (focal_gamma < 0.0) throw InvalidArgument("focal gamma must be >= 0");
    if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0)) throw InvalidArgument("focal alpha must lie in [0,1]");
    if (!(dice_eps > 0.0)) throw InvalidArgument("dice epsilon must be > 0");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
}

ad::Var similarity_map(const ad::Var& adapter_out, const TextEmbeddingPair& text) {
    const int n = adapter_out->value.rows();
    const int c = adapter_out->value.cols();
    if (text.width() != c || static_cast<int>(text.bg.size()) != c) {
        throw InvalidArgument("similarity_map: feature width " + std::to_string(c) + " vs text width " +
                              std::to_string(text.width()));
    }
    auto unit = [](const std::vector<double>& v) {
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        std::vector<double> u = v;
        const double nn = std::sqrt(n2);
        for (double& x : u) x = nn > 0.0 ? x / nn : 0.0;
        return u;
    };
    auto cols = std::make_shared<std::array<std::vector<double>, 2>>(std::array{unit(text.fg), unit(text.bg)});
    auto norms = std::make_shared<std::vector<double>>(n);

    ad::Tensor out({n, 2});
    for (int i = 0; i < n; ++i) {
        const double* t = adapter_out->value.data.data() + static_cast<std::size_t>(i) * c;
        double n2 = 0.0;
        for (int k = 0; k < c; ++k) n2 += t[k] * t[k];
        const double tn = std::sqrt(n2);
        (*norms)[i] = tn;
        for (int j = 0; j < 2; ++j) {
            if (tn == 0.0) continue;
            double dot = 0.0;
            for (int k = 0; k < c; ++k) dot += t[k] * (*cols)[j][k];
            out(i, j) = dot / tn;
        }
    }

    auto node = std::make_shared<ad::Node>();
    node->value = std::move(out);
    if (adapter_out->requires_grad) {
        node->requires_grad = true;
        node->inputs = {adapter_out};
        node->backward_fn = [n, c, cols, norms](ad::Node& self) {
            const auto& a = self.inputs[0];
            for (int i = 0; i < n; ++i) {
                const double tn = (*norms)[i];
                if (tn == 0.0) continue;
                const double* t = a->value.data.data() + static_cast<std::size_t>(i) * c;
                double* g = a->grad.data.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < 2; ++j) {
                    const double go = self.grad(i, j);
                    if (go == 0.0) continue;
                    const double cosv = self.value(i, j);
                    // d cos / d t = u / |t| - cos * t / |t|^2
                    for (int k = 0; k < c; ++k) g[k] += go * ((*cols)[j][k] / tn - cosv * t[k] / (tn * tn));
                }
            }
        };
    }
    return node;
}

ad::Var dense_prediction(const ad::Var& similarity, Dims3 grid, Dims3 target, const LossConfig& cfg) {
    cfg.validate();
    if (target.d < grid.d || target.h < grid.h || target.w < grid.w) {
        throw InvalidArgument("dense_prediction: target " + target.str() + " smaller than grid " + grid.str());
    }
    ad::Var up = ad::resize_trilinear(similarity, grid, target);
    if (cfg.temperature != 1.0) up = ad::scale(up, 1.0 / cfg.temperature);
    return ad::softmax_rows(up);
}

ad::Var focal_loss(const ad::Var& probs, const MaskVolume& y, const LossConfig& cfg) {
    cfg.validate();
    require_voxels(probs, y, "focal_loss");
    if (probs->value.cols() != 2) throw InvalidArgument("focal_loss: expects (fg, bg) columns");
    const std::size_t n = y.data.size();
    const double gamma = cfg.focal_gamma, alpha = cfg.focal_alpha;
    double total = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const bool fg = y.data[v] != 0;
        const double pt = probs->value.data[2 * v + (fg ? 0 : 1)];
        const double at = fg ? alpha : 1.0 - alpha;
        total += -at * std::pow(1.0 - pt, gamma) * std::log(std::max(pt, kLogClamp));
    }
    const auto mask = std::make_shared<std::vector<std::uint8_t>>(y.data.values());
    return scalar_node(total / static_cast<double>(n), probs, [n, gamma, alpha, mask](ad::Node& self) {
        const auto& p = self.inputs[0];
        const double g = self.grad.data[0] / static_cast<double>(n);
        for (std::size_t v = 0; v < n; ++v) {
            const bool fg = (*mask)[v] != 0;
            const std::size_t col = fg ? 0 : 1;
            const double pt = p->value.data[2 * v + col];
            const double at = fg ? alpha : 1.0 - alpha;
            if (pt < kLogClamp) continue;  // clamped region: constant in p
            const double omp = 1.0 - pt;
            double d = std::pow(omp, gamma) / pt;
            if (gamma != 0.0 && omp > 0.0) d -= gamma * std::pow(omp, gamma - 1.0) * std::log(pt);
            p->grad.data[2 * v + col] += g * (-at) * d;
        }
    });
}

ad::Var dice_loss(const ad::Var& fg_prob, const MaskVolume& y, const LossConfig& cfg) {
    cfg.validate();
    require_voxels(fg_prob, y, "dice_loss");
    if (fg_prob->value.cols() != 1) throw InvalidArgument("dice_loss: expects a single probability column");
    const std::size_t n = y.data.size();
    double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const double p = fg_prob->value.data[v];
        const double t = y.data[v] ? 1.0 : 0.0;
        inter += p * t;
        sum_p += p;
        sum_y += t;
    }
    const double eps = cfg.dice_eps;
    const double num = 2.0 * inter + eps;
    const double den = sum_p + sum_y + eps;
    const auto mask = std::make_shared<std::vector<std::uint8_t>>(y.data.values());
    return scalar_node(1.0 - num / den, fg_prob, [n, num, den, mask](ad::Node& self) {
        const double g = self.grad.data[0];
        auto& dp = self.inputs[0]->grad.data;
        for (std::size_t v = 0; v < n; ++v) {
            const double t = (*mask)[v] ? 1.0 : 0.0;
            dp[v] += g * -(2.0 * t * den - num) / (den * den);
        }
    });
}

AlignmentLoss alignment_loss(const std::vector<ad::Var>& adapter_outputs, Dims3 grid, const TextEmbeddingPair& text,
                             const MaskVolume& y, const LossConfig& cfg) {
    if (adapter_outputs.empty()) throw InvalidArgument("alignment_loss: no adapter outputs");
    AlignmentLoss out;
    for (const auto& a : adapter_outputs) {
        const ad::Var probs = dense_prediction(similarity_map(a, text), grid, y.dims(), cfg);
        const ad::Var focal = focal_loss(probs, y, cfg);
        const ad::Var dice = dice_loss(ad::slice_cols(probs, 0, 1), y, cfg);
        const ad::Var stage = ad::add(ad::scale(focal, 0.5), ad::scale(dice, 0.5));
        out.per_stage.push_back(stage->value.item());
        out.total = out.total ? ad::add(out.total, stage) : stage;
    }
    return out;
}

TotalLoss total_loss(const ad::Var& y_hat, const MaskVolume& y, const ad::Var& alignment, const LossConfig& cfg) {
    TotalLoss out;
    const ad::Var dice = dice_loss(y_hat, y, cfg);
    out.dice = dice->value.item();
    out.alignment = alignment->value.item();
    out.total = ad::add(dice, alignment);
    return out;
}

}  // namespace tags
