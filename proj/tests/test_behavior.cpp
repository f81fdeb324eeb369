#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "tags/metrics.hpp"
#include "tags/service.hpp"

using namespace tags;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = TAGS_FIXTURE_DIR;

const Checkpoint& desk() {
    static const Checkpoint ck = load_checkpoint(kFixture / "desk.ckpt");
    return ck;
}

const io::CaseRecord& record() {
    static const io::DatasetManifest m = io::read_manifest(kFixture / "data" / "manifest.json");
    return m.cases.at(0);
}

const PreparedCase& training_case() {
    static const PreparedCase c = load_case(record(), desk().preprocess);
    return c;
}

}  // namespace

TEST_CASE("foreground point in the lesion segments it") {
    const PreparedCase& c = training_case();
    const TagsModel model = desk().model();
    const Voxel centre = oracle::deepest(c.tumor);
    const InferResult r = infer(model, c.input, {{centre, PointLabel::Foreground}});
    CHECK_FALSE(r.mask.empty());
    CHECK(r.probability.at(centre.z, centre.y, centre.x) >= 0.5);
    CHECK(dice(r.mask, c.tumor) > 0.8);
    MESSAGE("central-point dice " << dice(r.mask, c.tumor));

    // Three points work as well as one.
    Rng rng(3);
    const InferResult three =
        infer_with_strategy(model, c.input, c.tumor, {StrategyKind::Edge, 3}, rng);
    CHECK(three.points.size() == 3);
    CHECK(dice(three.mask, c.tumor) > 0.5);
}

TEST_CASE("background-only points give a valid mask") {
    const PreparedCase& c = training_case();
    const TagsModel model = desk().model();
    const Dims3 d = c.input.dims();
    const InferResult r = infer(model, c.input, {{{2, 2, 2}, PointLabel::Background},
                                                 {{d.d - 3, d.h - 3, d.w - 3}, PointLabel::Background}});
    CHECK(r.mask.dims() == d);
    for (auto v : r.mask.data.values()) CHECK((v == 0 || v == 1));
    for (double p : r.probability.values()) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("central-point dice is stable across selection seeds") {
    const PreparedCase& c = training_case();
    const TagsModel model = desk().model();
    const double reference = dice(infer(model, c.input, {{oracle::deepest(c.tumor), PointLabel::Foreground}}).mask, c.tumor);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const InferResult r = infer_with_strategy(model, c.input, c.tumor, {StrategyKind::Central, 1}, rng);
        CHECK(std::abs(dice(r.mask, c.tumor) - reference) <= 0.02);
    }
}

TEST_CASE("evaluation is reproducible for a seed") {
    EvalConfig cfg;
    cfg.seed = 9;
    const TagsModel model = desk().model();
    const MetricReport a = evaluate(model, {training_case()}, cfg);
    const MetricReport b = evaluate(model, {training_case()}, cfg);
    CHECK(a.jsonl() == b.jsonl());
    CHECK(a.table() == b.table());
}

TEST_CASE("service returns the same non-empty mask for repeated requests") {
    SegmentationService svc(desk());
    const Volume image = io::read_volume(record().image);
    const MaskVolume organ = io::read_mask(record().organ);
    const MaskVolume tumor = io::read_mask(*record().tumor);
    const std::string id = svc.add_volume(image, organ, tumor);
    const std::vector<PointPrompt> pts{{oracle::deepest(tumor), PointLabel::Foreground}};
    const nlohmann::json first = svc.segment(id, pts);
    const nlohmann::json second = svc.segment(id, pts);
    CHECK(first["voxels"].get<std::size_t>() > 0);
    CHECK(first["mask"] == second["mask"]);
    CHECK(first["dice"].get<double>() > 0.8);
}

TEST_CASE("training loss goes down on one phantom") {
    // Per-step loss is noisy (random patches, augmentation, points), so the
    // comparison is between the first and last ten steps.
    Rng prng(7);
    const Phantom ph = synth_phantom(PhantomSpec{}, prng);
    PreparedCase c = prepare_case(ph.image, ph.organ, ph.tumor, PreprocessConfig{});
    c.id = "overfit";
    int decreasing = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TrainConfig cfg;
        cfg.lr = 2e-3;
        cfg.epochs = 50;
        cfg.steps_per_epoch = 1;
        cfg.seed = seed;
        Trainer t(cfg, {c});
        std::vector<double> loss;
        for (int i = 0; i < 50; ++i) loss.push_back(t.step().total);
        const double head = std::accumulate(loss.begin(), loss.begin() + 10, 0.0) / 10;
        const double tail = std::accumulate(loss.end() - 10, loss.end(), 0.0) / 10;
        MESSAGE("seed " << seed << ": " << head << " -> " << tail);
        decreasing += tail < head ? 1 : 0;
    }
    CHECK(decreasing >= 9);
}
