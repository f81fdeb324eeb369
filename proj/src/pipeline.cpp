#include "tags/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tags/error.hpp"

namespace tags {

using nlohmann::json;

namespace {

json augment_json(const AugmentPolicy& a) {
    return {{"p_flip", a.p_flip},
            {"p_rotate", a.p_rotate},
            {"p_intensity", a.p_intensity},
            {"p_zoom", a.p_zoom},
            {"rotation_planes", a.rotation_planes},
            {"intensity_shift", a.intensity_shift},
            {"zoom_range", {a.zoom_min, a.zoom_max}}};
}

AugmentPolicy augment_from(const json& j) {
    if (j.is_string()) {
        if (j == "none") return AugmentPolicy::none();
        if (j == "default") return AugmentPolicy{};
        throw InvalidArgument("augment must be an object, 'default' or 'none'");
    }
    AugmentPolicy a;
    a.p_flip = j.value("p_flip", a.p_flip);
    a.p_rotate = j.value("p_rotate", a.p_rotate);
    a.p_intensity = j.value("p_intensity", a.p_intensity);
    a.p_zoom = j.value("p_zoom", a.p_zoom);
    if (j.contains("rotation_planes")) a.rotation_planes = j["rotation_planes"].get<std::vector<int>>();
    a.intensity_shift = j.value("intensity_shift", a.intensity_shift);
    if (j.contains("zoom_range")) {
        const auto z = j["zoom_range"].get<std::vector<double>>();
        if (z.size() != 2) throw InvalidArgument("zoom_range must be [min, max]");
        a.zoom_min = z[0];
        a.zoom_max = z[1];
    }
    a.validate();
    return a;
}

json loss_json(const LossConfig& l) {
    return {{"focal_gamma", l.focal_gamma},
            {"focal_alpha", l.focal_alpha},
            {"dice_eps", l.dice_eps},
            {"temperature", l.temperature}};
}

LossConfig loss_from(const json& j) {
    LossConfig l;
    l.focal_gamma = j.value("focal_gamma", l.focal_gamma);
    l.focal_alpha = j.value("focal_alpha", l.focal_alpha);
    l.dice_eps = j.value("dice_eps", l.dice_eps);
    l.temperature = j.value("temperature", l.temperature);
    l.validate();
    return l;
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void require_finite(double v, const char* what, long step) {
    if (!std::isfinite(v)) {
        throw NumericalError(std::string("training diverged: ") + what + " is not finite at step " +
                             std::to_string(step));
    }
}

}  // namespace

// -- config ---------------------------------------------------------------------

std::unique_ptr<TextEncoder> TextEncoderConfig::make(int width) const {
    if (kind == "hash") return std::make_unique<HashTextEncoder>(width, seed);
    if (kind == "http") {
        if (url.empty()) throw InvalidArgument("http text encoder needs a url");
        return std::make_unique<HttpTextEncoder>(url, width, path);
    }
    throw InvalidArgument("unknown text encoder kind '" + kind + "'");
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw InvalidArgument("lr must be > 0");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (steps_per_epoch < 0) throw InvalidArgument("steps_per_epoch must be >= 0");
    if (weight_decay < 0.0) throw InvalidArgument("weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("betas must lie in [0,1)");
    if (n_points < 1) throw InvalidArgument("n_points must be >= 1");
    loss.validate();
    model.validate();
    patch().validate();
    augment.validate();
    preprocess.validate();
}

json TrainConfig::to_json() const {
    json j{{"lr", lr},
           {"weight_decay", weight_decay},
           {"betas", {beta1, beta2}},
           {"adam_eps", adam_eps},
           {"batch_size", batch_size},
           {"epochs", epochs},
           {"steps_per_epoch", steps_per_epoch},
           {"seed", seed},
           {"n_points", n_points},
           {"loss", loss_json(loss)},
           {"model", model.to_json()},
           {"patch_ratio", {patch_fg, patch_bg}},
           {"augment", augment_json(augment)},
           {"preprocess", preprocess.to_json()},
           {"text_encoder", {{"kind", text_encoder.kind}, {"seed", text_encoder.seed}}},
           {"dataset", dataset.string()},
           {"output", output.string()}};
    if (text_encoder.kind == "http") {
        j["text_encoder"]["url"] = text_encoder.url;
        j["text_encoder"]["path"] = text_encoder.path;
    }
    if (prompt_bank) j["prompt_bank"] = prompt_bank->string();
    if (log) j["log"] = log->string();
    return j;
}

TrainConfig TrainConfig::from_json(const json& j, const std::filesystem::path& base) {
    static const char* known[] = {"lr",       "weight_decay", "betas",      "adam_eps",   "batch_size",
                                  "epochs",   "steps_per_epoch", "seed",    "n_points",   "loss",
                                  "model",    "patch_ratio",  "augment",    "preprocess", "text_encoder",
                                  "dataset",  "output",       "log",        "prompt_bank"};
    for (const auto& [k, v] : j.items()) {
        if (std::find_if(std::begin(known), std::end(known), [&](const char* s) { return k == s; }) ==
            std::end(known)) {
            throw InvalidArgument("train config: unknown key '" + k + "'");
        }
    }
    TrainConfig c;
    try {
        c.lr = j.value("lr", c.lr);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        if (j.contains("betas")) {
            const auto b = j["betas"].get<std::vector<double>>();
            if (b.size() != 2) throw InvalidArgument("betas must be [beta1, beta2]");
            c.beta1 = b[0];
            c.beta2 = b[1];
        }
        c.adam_eps = j.value("adam_eps", c.adam_eps);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
        c.seed = j.value("seed", c.seed);
        c.n_points = j.value("n_points", c.n_points);
        if (j.contains("loss")) c.loss = loss_from(j["loss"]);
        if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
        if (j.contains("patch_ratio")) {
            const auto r = j["patch_ratio"].get<std::vector<int>>();
            if (r.size() != 2) throw InvalidArgument("patch_ratio must be [fg, bg]");
            c.patch_fg = r[0];
            c.patch_bg = r[1];
        }
        if (j.contains("augment")) c.augment = augment_from(j["augment"]);
        if (j.contains("preprocess")) c.preprocess = PreprocessConfig::from_json(j["preprocess"]);
        if (j.contains("text_encoder")) {
            const json& t = j["text_encoder"];
            c.text_encoder.kind = t.value("kind", c.text_encoder.kind);
            c.text_encoder.seed = t.value("seed", c.text_encoder.seed);
            c.text_encoder.url = t.value("url", c.text_encoder.url);
            c.text_encoder.path = t.value("path", c.text_encoder.path);
        }
        if (j.contains("dataset")) c.dataset = resolve(j["dataset"].get<std::string>(), base);
        if (j.contains("output")) c.output = resolve(j["output"].get<std::string>(), base);
        if (j.contains("log")) c.log = resolve(j["log"].get<std::string>(), base);
        if (j.contains("prompt_bank")) c.prompt_bank = resolve(j["prompt_bank"].get<std::string>(), base);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidArgument("config " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

// -- optimizer ------------------------------------------------------------------

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

void AdamW::step(ParameterStore& params) {
    const auto& vars = params.vars();
    const auto& specs = params.specs();
    if (m_.empty()) {
        m_.resize(vars.size());
        v_.resize(vars.size());
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < vars.size(); ++i) {
        if (!specs[i].trainable()) continue;
        auto& p = vars[i]->value.data;
        const auto& g = vars[i]->grad.data;
        if (g.size() != p.size()) continue;  // no gradient reached this parameter
        auto& m = m_[i];
        auto& v = v_[i];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
            v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
            p[k] -= lr_ * wd_ * p[k];
            p[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

// -- data -----------------------------------------------------------------------

PreparedCase prepare_case(const Volume& image, const MaskVolume& organ, const std::optional<MaskVolume>& tumor,
                          const PreprocessConfig& pre) {
    pre.validate();
    if (!(image.dims() == organ.dims())) {
        throw InvalidArgument("organ mask " + organ.dims().str() + " does not match image " + image.dims().str());
    }
    if (tumor && !(tumor->dims() == image.dims())) {
        throw InvalidArgument("tumor mask " + tumor->dims().str() + " does not match image " + image.dims().str());
    }
    PreparedCase c;
    c.source_dims = image.dims();
    c.source_spacing = image.spacing;
    MaskVolume o = organ;
    o.spacing = image.spacing;
    const Volume img = clip_normalize(resample(image, pre.spacing), pre.clip_lo, pre.clip_hi);
    c.input = inject_organ_channel(img, resample(o, pre.spacing));
    if (tumor) {
        MaskVolume t = *tumor;
        t.spacing = image.spacing;
        c.tumor = resample(t, pre.spacing);
    } else {
        c.tumor = MaskVolume(img.dims(), pre.spacing);
    }
    return c;
}

PreparedCase load_case(const io::CaseRecord& record, const PreprocessConfig& pre) {
    const Volume image = io::read_volume(record.image);
    const MaskVolume organ = io::read_mask(record.organ);
    std::optional<MaskVolume> tumor;
    if (record.tumor) tumor = io::read_mask(*record.tumor);
    PreparedCase c = prepare_case(image, organ, tumor, pre);
    c.id = record.id;
    c.organ_name = record.organ_name;
    return c;
}

// -- training -------------------------------------------------------------------

json StepRecord::to_json() const {
    return {{"step", step},
            {"epoch", epoch},
            {"l_a", alignment_per_stage},
            {"l_a_total", alignment},
            {"dice", dice},
            {"L", total}};
}

Trainer::Trainer(TrainConfig cfg, std::vector<PreparedCase> cases)
    : cfg_((cfg.validate(), std::move(cfg))),
      cases_(std::move(cases)),
      rng_(cfg_.seed),
      model_(cfg_.model, rng_),
      opt_(cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay) {
    if (cases_.empty()) throw InvalidArgument("training dataset is empty");
    const auto encoder = cfg_.text_encoder.make(cfg_.model.encoder.embed_width);
    for (const auto& c : cases_) {
        if (text_.count(c.organ_name)) continue;
        const PromptBank bank =
            cfg_.prompt_bank ? PromptBank::load(*cfg_.prompt_bank, c.organ_name) : PromptBank::standard(c.organ_name);
        text_[c.organ_name] = tags::text_features(bank, *encoder);
    }
}

long Trainer::total_steps() const {
    const long per_epoch = cfg_.steps_per_epoch > 0 ? cfg_.steps_per_epoch : static_cast<long>(cases_.size());
    return per_epoch * cfg_.epochs;
}

StepRecord Trainer::step() {
    const long per_epoch = cfg_.steps_per_epoch > 0 ? cfg_.steps_per_epoch : static_cast<long>(cases_.size());
    StepRecord rec;
    rec.step = step_ + 1;
    rec.epoch = static_cast<int>(step_ / per_epoch);
    model_.params().zero_grad();
    const PatchSpec patch = cfg_.patch();
    const double inv_batch = 1.0 / cfg_.batch_size;
    for (int b = 0; b < cfg_.batch_size; ++b) {
        const auto& c = cases_[static_cast<std::size_t>((step_ * cfg_.batch_size + b) % cases_.size())];
        const PatchSample sample = sample_patch(c.input, c.tumor, patch, rng_);
        const AugmentedSample aug = augment(sample.input, sample.tumor, cfg_.augment, rng_);
        const auto points = sample_train_points(aug.tumor, cfg_.n_points, rng_);
        const ModelOutput out = model_.forward(aug.input, points);
        const AlignmentLoss la =
            alignment_loss(out.encoder.adapter_outputs, out.encoder.grid, text_.at(c.organ_name), aug.tumor, cfg_.loss);
        const TotalLoss loss = total_loss(out.mask.probs, aug.tumor, la.total, cfg_.loss);
        require_finite(loss.total->value.item(), "loss", rec.step);
        ad::backward(cfg_.batch_size == 1 ? loss.total : ad::scale(loss.total, inv_batch));

        rec.alignment_per_stage.resize(la.per_stage.size(), 0.0);
        for (std::size_t s = 0; s < la.per_stage.size(); ++s) rec.alignment_per_stage[s] += la.per_stage[s] * inv_batch;
        rec.alignment += loss.alignment * inv_batch;
        rec.dice += loss.dice * inv_batch;
        rec.total += loss.total->value.item() * inv_batch;
    }
    opt_.step(model_.params());
    for (const auto& v : model_.params().vars()) {
        if (!v->value.all_finite()) throw NumericalError("parameters became non-finite at step " + std::to_string(rec.step));
    }
    ++step_;
    return rec;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c = Checkpoint::capture(model_);
    const long per_epoch = cfg_.steps_per_epoch > 0 ? cfg_.steps_per_epoch : static_cast<long>(cases_.size());
    c.epoch = static_cast<int>(step_ / per_epoch);
    c.rng_state = rng_state(rng_);
    c.preprocess = cfg_.preprocess;
    c.text_features = text_;
    return c;
}

TrainResult train(const TrainConfig& cfg, std::vector<PreparedCase> cases,
                  const std::function<void(const StepRecord&)>& on_step) {
    Trainer trainer(cfg, std::move(cases));
    TrainResult result;
    const long total = trainer.total_steps();
    for (long i = 0; i < total; ++i) {
        result.log.push_back(trainer.step());
        if (on_step) on_step(result.log.back());
    }
    result.checkpoint = trainer.checkpoint();
    return result;
}

TrainResult train(const TrainConfig& cfg) {
    if (cfg.dataset.empty()) throw InvalidArgument("train config has no dataset manifest");
    const io::DatasetManifest manifest = io::read_manifest(cfg.dataset);
    std::vector<PreparedCase> cases;
    for (const auto& rec : manifest.cases) {
        if (!rec.tumor) throw InvalidArgument("training case '" + rec.id + "' has no tumor mask");
        cases.push_back(load_case(rec, cfg.preprocess));
    }
    std::ofstream log;
    if (cfg.log) {
        log.open(*cfg.log);
        if (!log) throw IoError("cannot write training log " + cfg.log->string());
    }
    TrainResult r = train(cfg, std::move(cases), [&](const StepRecord& s) {
        if (log) log << s.to_json().dump() << '\n' << std::flush;
    });
    save_checkpoint(r.checkpoint, cfg.output);
    return r;
}

// -- inference ------------------------------------------------------------------

CropResult crop_around_points(const ModelInput& input, const std::vector<PointPrompt>& points, Dims3 size) {
    if (points.empty()) throw InvalidArgument("crop_around_points: no points");
    double sum[3] = {0.0, 0.0, 0.0};
    for (const auto& p : points) {
        if (!input.dims().contains(p.coord.z, p.coord.y, p.coord.x)) {
            throw InvalidArgument("point (" + std::to_string(p.coord.z) + "," + std::to_string(p.coord.y) + "," +
                                  std::to_string(p.coord.x) + ") outside volume " + input.dims().str());
        }
        for (int a = 0; a < 3; ++a) sum[a] += p.coord[a];
    }
    const double n = static_cast<double>(points.size());
    Voxel centre{static_cast<int>(std::floor(sum[0] / n + 0.5)), static_cast<int>(std::floor(sum[1] / n + 0.5)),
                 static_cast<int>(std::floor(sum[2] / n + 0.5))};
    CropResult r;
    r.offset = {centre.z - size.d / 2, centre.y - size.h / 2, centre.x - size.w / 2};
    r.patch = crop(input, r.offset, size);
    for (const auto& p : points) {
        const Voxel local{p.coord.z - r.offset.z, p.coord.y - r.offset.y, p.coord.x - r.offset.x};
        if (size.contains(local.z, local.y, local.x)) r.points.push_back({local, p.label});
    }
    return r;
}

template <class T>
Grid3<T> paste_back(const Grid3<T>& patch, Voxel offset, Dims3 full) {
    Grid3<T> out(full, T{});
    const Dims3 p = patch.dims();
    for (int z = 0; z < p.d; ++z) {
        const int sz = z + offset.z;
        if (sz < 0 || sz >= full.d) continue;
        for (int y = 0; y < p.h; ++y) {
            const int sy = y + offset.y;
            if (sy < 0 || sy >= full.h) continue;
            for (int x = 0; x < p.w; ++x) {
                const int sx = x + offset.x;
                if (sx >= 0 && sx < full.w) out.at(sz, sy, sx) = patch.at(z, y, x);
            }
        }
    }
    return out;
}

template Grid3<double> paste_back(const Grid3<double>&, Voxel, Dims3);
template Grid3<std::uint8_t> paste_back(const Grid3<std::uint8_t>&, Voxel, Dims3);

InferResult infer(const TagsModel& model, const ModelInput& input, const std::vector<PointPrompt>& points) {
    const Dims3 size = model.config().encoder.input_size;
    const CropResult crop = crop_around_points(input, points, size);
    const ModelOutput out = model.forward(crop.patch, crop.points);

    Grid3<double> prob(size, 0.0);
    Grid3<std::uint8_t> mask(size, 0);
    const auto& p = out.mask.probs->value.data;
    InferResult r;
    r.prob_min = p.empty() ? 0.0 : p[0];
    r.prob_max = r.prob_min;
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        prob[i] = p[i];
        mask[i] = p[i] >= kMaskThreshold ? 1 : 0;
        r.prob_min = std::min(r.prob_min, p[i]);
        r.prob_max = std::max(r.prob_max, p[i]);
        sum += p[i];
    }
    r.prob_mean = p.empty() ? 0.0 : sum / static_cast<double>(p.size());
    r.probability = paste_back(prob, crop.offset, input.dims());
    r.mask = MaskVolume(input.dims(), input.spacing);
    r.mask.data = paste_back(mask, crop.offset, input.dims());
    r.offset = crop.offset;
    r.points = points;
    return r;
}

InferResult infer_with_strategy(const TagsModel& model, const ModelInput& input, const MaskVolume& tumor,
                                const SelectionStrategy& strategy, Rng& rng) {
    return infer(model, input, select_inference_points(tumor, strategy, rng));
}

Voxel map_voxel(Voxel v, const Spacing& from, const Spacing& to, Dims3 target) {
    int out[3];
    for (int a = 0; a < 3; ++a) {
        const double c = (v[a] + 0.5) * from[a] / to[a] - 0.5;
        out[a] = std::clamp(static_cast<int>(std::floor(c + 0.5)), 0, target[a] - 1);
    }
    return {out[0], out[1], out[2]};
}

InferResult infer_volume(const TagsModel& model, const PreprocessConfig& pre, const Volume& image,
                         const MaskVolume& organ, const std::vector<PointPrompt>& points) {
    for (const auto& p : points) {
        if (!image.dims().contains(p.coord.z, p.coord.y, p.coord.x)) {
            throw InvalidArgument("point (" + std::to_string(p.coord.z) + "," + std::to_string(p.coord.y) + "," +
                                  std::to_string(p.coord.x) + ") outside volume " + image.dims().str());
        }
    }
    const PreparedCase c = prepare_case(image, organ, std::nullopt, pre);
    std::vector<PointPrompt> mapped;
    for (const auto& p : points) mapped.push_back({map_voxel(p.coord, image.spacing, pre.spacing, c.input.dims()), p.label});
    InferResult r = infer(model, c.input, mapped);
    if (!(c.input.dims() == image.dims())) {
        r.mask = resample_to(r.mask, image.dims(), image.spacing);
    }
    r.mask.spacing = image.spacing;
    r.mask.origin = image.origin;
    r.points = points;
    return r;
}

}  // namespace tags
