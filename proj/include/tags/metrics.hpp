#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tags/pipeline.hpp"

namespace tags {

/// 2|P and G| / (|P| + |G|); 1 when both are empty.
double dice(const MaskVolume& pred, const MaskVolume& gt);

/// Voxels of `mask` with at least one 6-neighbour outside it (grid border
/// counts as outside).
Grid3<std::uint8_t> surface(const MaskVolume& mask);

/// Normalized surface dice at tolerance `tolerance_mm`; distances between
/// voxel centres in millimetres. 1 when both masks are empty, 0 when only one is.
double nsd(const MaskVolume& pred, const MaskVolume& gt, double tolerance_mm, const Spacing& spacing);
double nsd(const MaskVolume& pred, const MaskVolume& gt, double tolerance_mm);

/// ICC(2,1): two-way random effects, absolute agreement, single measurement.
/// `m[i][j]` is case i under rater/strategy j. Zero total variance gives 1.
double icc(const std::vector<std::vector<double>>& m);

/// Decoder-free prediction from one stage's alignment-adapter output:
/// fg probability of the dense similarity softmax, thresholded at 0.5.
MaskVolume aligned_feature_predict(const ad::Var& adapter_out, const TextEmbeddingPair& text, Dims3 grid,
                                   Dims3 target, const LossConfig& loss = {});

/// Dice of the aligned-feature prediction per stage, on a patch cropped
/// around the given points.
std::vector<double> aligned_feature_dice(const TagsModel& model, const ModelInput& input, const MaskVolume& tumor,
                                         const TextEmbeddingPair& text, const std::vector<PointPrompt>& points);

struct EvalConfig {
    std::vector<SelectionStrategy> strategies = robustness_strategies();
    double tolerance_mm = 2.0;
    std::uint64_t seed = 0;
};

struct CaseMetrics {
    std::string case_id;
    std::string strategy;
    double dice = 0.0;
    double nsd = 0.0;
    std::vector<PointPrompt> points;
    Voxel crop_offset;
};

struct StrategySummary {
    std::string strategy;
    double mean_dice = 0.0;
    double mean_nsd = 0.0;
    int cases = 0;
};

struct CaseError {
    std::string case_id;
    std::string message;
};

struct MetricReport {
    std::vector<StrategySummary> rows;
    std::vector<CaseMetrics> cases;
    std::vector<CaseError> errors;
    /// Present when at least two cases and two strategies were evaluated.
    std::optional<double> icc_dice;
    std::optional<double> icc_nsd;
    double tolerance_mm = 2.0;

    /// Fixed-width table: one row per strategy (Dice %, NSD %), then the ICC row.
    std::string table() const;
    /// One JSON record per case and strategy, then a summary record.
    std::string jsonl() const;
};

/// Seed used for (case index, strategy index); independent of evaluation order.
std::uint64_t eval_seed(std::uint64_t base, std::size_t case_index, std::size_t strategy_index);

MetricReport evaluate(const TagsModel& model, const std::vector<PreparedCase>& cases, const EvalConfig& cfg);
/// Loads each case from the manifest; cases that fail to load are reported in
/// `errors` and skipped.
MetricReport evaluate(const Checkpoint& ckpt, const std::filesystem::path& manifest, const EvalConfig& cfg);

}  // namespace tags
