#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tags/checkpoint.hpp"
#include "tags/objectives.hpp"
#include "tags/volume_io.hpp"

namespace tags {

struct TextEncoderConfig {
    std::string kind = "hash";  ///< "hash" or "http"
    std::uint64_t seed = 0;
    std::string url;            ///< http only
    std::string path = "/embed";

    std::unique_ptr<TextEncoder> make(int width) const;
};

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 1;
    int epochs = 200;
    /// Iterations per epoch; 0 means one per dataset case.
    int steps_per_epoch = 0;
    std::uint64_t seed = 0;
    int n_points = 10;
    LossConfig loss;
    ModelConfig model = ModelConfig::tiny();
    /// fg:bg patch ratio; the patch extent is the encoder input size.
    int patch_fg = 2;
    int patch_bg = 1;
    AugmentPolicy augment;
    PreprocessConfig preprocess;
    std::optional<std::filesystem::path> prompt_bank;
    TextEncoderConfig text_encoder;
    std::filesystem::path dataset;
    std::filesystem::path output = "tags.ckpt";
    std::optional<std::filesystem::path> log;

    void validate() const;
    PatchSpec patch() const { return {model.encoder.input_size, patch_fg, patch_bg}; }

    /// Relative paths inside the file resolve against the file's directory.
    static TrainConfig load(const std::filesystem::path& path);
    static TrainConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
    nlohmann::json to_json() const;
};

/// Decoupled weight decay Adam over the trainable parameters of a store.
class AdamW {
public:
    AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
    /// Applies one update from the gradients currently held by the store.
    void step(ParameterStore& params);
    long steps() const { return t_; }

private:
    double lr_, b1_, b2_, eps_, wd_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// A case after preprocessing: resampled, clipped, normalized, organ channel injected.
struct PreparedCase {
    std::string id;
    std::string organ_name = "kidney";
    ModelInput input;
    MaskVolume tumor;
    /// Source grid, to map predictions back.
    Dims3 source_dims;
    Spacing source_spacing{1.0, 1.0, 1.0};
};

PreparedCase prepare_case(const Volume& image, const MaskVolume& organ, const std::optional<MaskVolume>& tumor,
                          const PreprocessConfig& pre);
PreparedCase load_case(const io::CaseRecord& record, const PreprocessConfig& pre);

struct StepRecord {
    long step = 0;
    int epoch = 0;
    std::vector<double> alignment_per_stage;
    double alignment = 0.0;
    double dice = 0.0;
    double total = 0.0;

    nlohmann::json to_json() const;
};

/// One training run. `step()` executes a single optimizer iteration so that
/// tests can inspect the model between steps.
class Trainer {
public:
    Trainer(TrainConfig cfg, std::vector<PreparedCase> cases);

    StepRecord step();
    long steps_done() const { return step_; }
    long total_steps() const;

    TagsModel& model() { return model_; }
    const TagsModel& model() const { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::map<std::string, TextEmbeddingPair>& text_features() const { return text_; }

    Checkpoint checkpoint() const;

private:
    TrainConfig cfg_;
    std::vector<PreparedCase> cases_;
    Rng rng_;
    TagsModel model_;
    AdamW opt_;
    std::map<std::string, TextEmbeddingPair> text_;
    long step_ = 0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepRecord> log;
};

/// Full run over a list of prepared cases; `on_step` sees every record.
TrainResult train(const TrainConfig& cfg, std::vector<PreparedCase> cases,
                  const std::function<void(const StepRecord&)>& on_step = {});
/// Loads `cfg.dataset`, trains, writes the checkpoint and the JSONL log.
TrainResult train(const TrainConfig& cfg);

// -- inference ------------------------------------------------------------------

struct CropResult {
    ModelInput patch;
    std::vector<PointPrompt> points;  ///< in patch coordinates
    Voxel offset;                     ///< source voxel of patch (0,0,0)
};

/// Patch of `size` centred on the rounded centroid of the points
/// (offset = centroid - size/2), zero-padded at the borders. Points that
/// fall outside the patch are dropped.
CropResult crop_around_points(const ModelInput& input, const std::vector<PointPrompt>& points, Dims3 size);

/// Writes a patch back into a zero grid of `full` extents.
template <class T>
Grid3<T> paste_back(const Grid3<T>& patch, Voxel offset, Dims3 full);

struct InferResult {
    MaskVolume mask;            ///< same grid as the input
    Grid3<double> probability;  ///< preprocessed grid; 0 outside the crop
    Voxel offset;
    std::vector<PointPrompt> points;
    double prob_min = 0.0;
    double prob_max = 0.0;
    double prob_mean = 0.0;  ///< over the crop
};

constexpr double kMaskThreshold = 0.5;

/// Crop, forward, threshold at 0.5 and paste back. Never reads ground truth.
InferResult infer(const TagsModel& model, const ModelInput& input, const std::vector<PointPrompt>& points);

/// Evaluation-only pathway: points chosen from the ground-truth tumor.
InferResult infer_with_strategy(const TagsModel& model, const ModelInput& input, const MaskVolume& tumor,
                                const SelectionStrategy& strategy, Rng& rng);

/// Raw volume in, mask on the source grid out. Point coordinates refer to the
/// source grid.
InferResult infer_volume(const TagsModel& model, const PreprocessConfig& pre, const Volume& image,
                         const MaskVolume& organ, const std::vector<PointPrompt>& points);

/// Maps a voxel from a grid with spacing `from` onto the resampled grid.
Voxel map_voxel(Voxel v, const Spacing& from, const Spacing& to, Dims3 target);

}  // namespace tags
