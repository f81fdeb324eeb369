#include "tags/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "tags/error.hpp"

namespace tags {

using nlohmann::json;

namespace {

void require_same(const MaskVolume& a, const MaskVolume& b, const char* op) {
    if (!(a.dims() == b.dims())) {
        throw InvalidArgument(std::string(op) + ": shape " + a.dims().str() + " vs " + b.dims().str());
    }
}

// Surface voxels of `from` lying within the tolerance of `to`'s surface.
std::size_t within(const Grid3<std::uint8_t>& from, const Grid3<double>& dist_to, double tol2) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < from.size(); ++i)
        if (from[i] && dist_to[i] <= tol2) ++n;
    return n;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

json points_json(const std::vector<PointPrompt>& points) {
    json out = json::array();
    for (const auto& p : points) out.push_back({p.coord.z, p.coord.y, p.coord.x, label_name(p.label)});
    return out;
}

}  // namespace

double dice(const MaskVolume& pred, const MaskVolume& gt) {
    require_same(pred, gt, "dice");
    std::size_t inter = 0, sp = 0, sg = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
        inter += p && g;
        sp += p;
        sg += g;
    }
    if (sp + sg == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

Grid3<std::uint8_t> surface(const MaskVolume& mask) {
    Grid3<std::uint8_t> out(mask.dims(), 0);
    for (const Voxel& v : boundary_voxels(mask)) out.at(v.z, v.y, v.x) = 1;
    return out;
}

double nsd(const MaskVolume& pred, const MaskVolume& gt, double tolerance_mm, const Spacing& spacing) {
    require_same(pred, gt, "nsd");
    if (!(tolerance_mm >= 0.0)) throw InvalidArgument("nsd: tolerance must be >= 0");
    const bool pe = pred.empty(), ge = gt.empty();
    if (pe && ge) return 1.0;
    if (pe || ge) return 0.0;
    const auto sp = surface(pred), sg = surface(gt);
    const double tol2 = tolerance_mm * tolerance_mm * (1.0 + 1e-12);
    const std::size_t a = within(sp, squared_distance_to(sg, spacing), tol2);
    const std::size_t b = within(sg, squared_distance_to(sp, spacing), tol2);
    std::size_t np = 0, ng = 0;
    for (std::size_t i = 0; i < sp.size(); ++i) {
        np += sp[i];
        ng += sg[i];
    }
    return static_cast<double>(a + b) / static_cast<double>(np + ng);
}

double nsd(const MaskVolume& pred, const MaskVolume& gt, double tolerance_mm) {
    return nsd(pred, gt, tolerance_mm, gt.spacing);
}

double icc(const std::vector<std::vector<double>>& m) {
    const std::size_t n = m.size();
    if (n < 2) throw InvalidArgument("icc needs at least 2 cases");
    const std::size_t k = m[0].size();
    if (k < 2) throw InvalidArgument("icc needs at least 2 strategies");
    for (const auto& row : m) {
        if (row.size() != k) throw InvalidArgument("icc: ragged measurement matrix");
        for (double v : row)
            if (!std::isfinite(v)) throw InvalidArgument("icc: non-finite measurement");
    }
    bool constant = true;
    for (const auto& row : m)
        for (double v : row) constant = constant && v == m[0][0];
    if (constant) return 1.0;

    double grand = 0.0;
    std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            row_mean[i] += m[i][j] / k;
            col_mean[j] += m[i][j] / n;
            grand += m[i][j];
        }
    grand /= static_cast<double>(n * k);
    double ssr = 0.0, ssc = 0.0, sst = 0.0;
    for (double r : row_mean) ssr += (r - grand) * (r - grand);
    for (double c : col_mean) ssc += (c - grand) * (c - grand);
    ssr *= k;
    ssc *= n;
    for (const auto& row : m)
        for (double v : row) sst += (v - grand) * (v - grand);
    const double sse = sst - ssr - ssc;
    const double msr = ssr / (n - 1.0);
    const double msc = ssc / (k - 1.0);
    const double mse = sse / ((n - 1.0) * (k - 1.0));
    const double kd = static_cast<double>(k), nd = static_cast<double>(n);
    return (msr - mse) / (msr + (kd - 1.0) * mse + kd * (msc - mse) / nd);
}

MaskVolume aligned_feature_predict(const ad::Var& adapter_out, const TextEmbeddingPair& text, Dims3 grid, Dims3 target,
                                   const LossConfig& loss) {
    const ad::Var probs = dense_prediction(similarity_map(adapter_out, text), grid, target, loss);
    MaskVolume out(target);
    for (std::size_t v = 0; v < target.count(); ++v) out.data[v] = probs->value.data[2 * v] >= kMaskThreshold ? 1 : 0;
    return out;
}

std::vector<double> aligned_feature_dice(const TagsModel& model, const ModelInput& input, const MaskVolume& tumor,
                                         const TextEmbeddingPair& text, const std::vector<PointPrompt>& points) {
    const Dims3 size = model.config().encoder.input_size;
    const CropResult c = crop_around_points(input, points, size);
    const MaskVolume gt = crop(tumor, c.offset, size);
    const EncoderOutput enc = encoder_forward(c.patch, model.config().encoder, model.params());
    std::vector<double> out;
    for (const auto& a : enc.adapter_outputs) out.push_back(dice(aligned_feature_predict(a, text, enc.grid, size), gt));
    return out;
}

std::uint64_t eval_seed(std::uint64_t base, std::size_t case_index, std::size_t strategy_index) {
    const std::uint64_t parts[3] = {base, case_index, strategy_index};
    return fnv1a64(parts, sizeof parts);
}

MetricReport evaluate(const TagsModel& model, const std::vector<PreparedCase>& cases, const EvalConfig& cfg) {
    if (cfg.strategies.empty()) throw InvalidArgument("evaluate: no strategies");
    if (!(cfg.tolerance_mm >= 0.0)) throw InvalidArgument("evaluate: tolerance must be >= 0");
    for (const auto& s : cfg.strategies) s.validate();
    MetricReport report;
    report.tolerance_mm = cfg.tolerance_mm;
    const std::size_t k = cfg.strategies.size();
    std::vector<std::vector<double>> dice_m, nsd_m;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const auto& c = cases[ci];
        if (c.tumor.empty()) {
            report.errors.push_back({c.id, NoLesionError().what()});
            continue;
        }
        std::vector<double> drow, nrow;
        for (std::size_t si = 0; si < k; ++si) {
            Rng rng(eval_seed(cfg.seed, ci, si));
            const InferResult r = infer_with_strategy(model, c.input, c.tumor, cfg.strategies[si], rng);
            CaseMetrics m;
            m.case_id = c.id;
            m.strategy = cfg.strategies[si].label();
            m.dice = dice(r.mask, c.tumor);
            m.nsd = nsd(r.mask, c.tumor, cfg.tolerance_mm, c.input.spacing);
            m.points = r.points;
            m.crop_offset = r.offset;
            drow.push_back(m.dice);
            nrow.push_back(m.nsd);
            report.cases.push_back(std::move(m));
        }
        dice_m.push_back(std::move(drow));
        nsd_m.push_back(std::move(nrow));
    }
    for (std::size_t si = 0; si < k; ++si) {
        StrategySummary s;
        s.strategy = cfg.strategies[si].label();
        s.cases = static_cast<int>(dice_m.size());
        for (std::size_t ci = 0; ci < dice_m.size(); ++ci) {
            s.mean_dice += dice_m[ci][si];
            s.mean_nsd += nsd_m[ci][si];
        }
        if (s.cases > 0) {
            s.mean_dice /= s.cases;
            s.mean_nsd /= s.cases;
        }
        report.rows.push_back(s);
    }
    if (dice_m.size() >= 2 && k >= 2) {
        report.icc_dice = icc(dice_m);
        report.icc_nsd = icc(nsd_m);
    }
    return report;
}

MetricReport evaluate(const Checkpoint& ckpt, const std::filesystem::path& manifest_path, const EvalConfig& cfg) {
    const TagsModel model = ckpt.model();
    const io::DatasetManifest manifest = io::read_manifest(manifest_path);
    std::vector<PreparedCase> cases;
    std::vector<CaseError> errors;
    for (const auto& rec : manifest.cases) {
        try {
            if (!rec.tumor) throw InvalidArgument("no tumor mask in manifest");
            cases.push_back(load_case(rec, ckpt.preprocess));
        } catch (const std::exception& e) {
            errors.push_back({rec.id, e.what()});
        }
    }
    MetricReport report = evaluate(model, cases, cfg);
    report.errors.insert(report.errors.begin(), errors.begin(), errors.end());
    return report;
}

std::string MetricReport::table() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-20s %10s %10s\n", "Selection Strategy", "Dice (%)", "NSD (%)");
    os << line << std::string(42, '-') << '\n';
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-20s %10s %10s\n", r.strategy.c_str(), pct(r.mean_dice).c_str(),
                      pct(r.mean_nsd).c_str());
        os << line;
    }
    os << std::string(42, '-') << '\n';
    std::snprintf(line, sizeof line, "%-20s %10s %10s\n", "ICC (%)", icc_dice ? pct(*icc_dice).c_str() : "n/a",
                  icc_nsd ? pct(*icc_nsd).c_str() : "n/a");
    os << line;
    const int n = rows.empty() ? 0 : rows.front().cases;
    std::snprintf(line, sizeof line, "cases: %d, NSD tolerance: %g mm\n", n, tolerance_mm);
    os << line;
    for (const auto& e : errors) os << "error [" << e.case_id << "]: " << e.message << '\n';
    return os.str();
}

std::string MetricReport::jsonl() const {
    std::ostringstream os;
    for (const auto& c : cases) {
        os << json{{"case", c.case_id},
                   {"strategy", c.strategy},
                   {"dice", c.dice},
                   {"nsd", c.nsd},
                   {"points", points_json(c.points)},
                   {"crop_offset", {c.crop_offset.z, c.crop_offset.y, c.crop_offset.x}}}
                  .dump()
           << '\n';
    }
    json rows_j = json::array();
    for (const auto& r : rows) {
        rows_j.push_back({{"strategy", r.strategy}, {"dice", r.mean_dice}, {"nsd", r.mean_nsd}, {"cases", r.cases}});
    }
    json errs = json::array();
    for (const auto& e : errors) errs.push_back({{"case", e.case_id}, {"error", e.message}});
    json summary{{"summary", rows_j}, {"tolerance_mm", tolerance_mm}, {"errors", errs}};
    summary["icc"] = {{"dice", icc_dice ? json(*icc_dice) : json(nullptr)},
                      {"nsd", icc_nsd ? json(*icc_nsd) : json(nullptr)}};
    os << summary.dump() << '\n';
    return os.str();
}

}  // namespace tags
