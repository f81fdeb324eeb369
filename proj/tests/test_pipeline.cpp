#include <cmath>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "tags/pipeline.hpp"

using namespace tags;
namespace fs = std::filesystem;

namespace {

PreparedCase phantom_case(std::uint64_t seed) {
    Rng rng(seed);
    const Phantom ph = synth_phantom(PhantomSpec{}, rng);
    PreparedCase c = prepare_case(ph.image, ph.organ, ph.tumor, PreprocessConfig{});
    c.id = "p" + std::to_string(seed);
    return c;
}

}  // namespace

TEST_CASE("training defaults") {
    const TrainConfig c;
    CHECK(c.lr == 1e-4);
    CHECK(c.batch_size == 1);
    CHECK(c.epochs == 200);
    CHECK(c.n_points == 10);
    CHECK(c.patch_fg == 2);
    CHECK(c.patch_bg == 1);
    CHECK(c.patch().size == Dims3{32, 32, 32});
}

TEST_CASE("train config json") {
    const nlohmann::json j = {{"lr", 0.002},
                              {"betas", {0.8, 0.99}},
                              {"epochs", 3},
                              {"patch_ratio", {3, 1}},
                              {"augment", "none"},
                              {"model", {{"preset", "tiny"}}},
                              {"dataset", "data/manifest.json"},
                              {"output", "/abs/out.ckpt"}};
    const TrainConfig c = TrainConfig::from_json(j, "/cfg");
    CHECK(c.lr == 0.002);
    CHECK(c.beta1 == 0.8);
    CHECK(c.patch_fg == 3);
    CHECK(c.augment.p_flip == 0.0);
    CHECK(c.dataset == fs::path("/cfg/data/manifest.json"));
    CHECK(c.output == fs::path("/abs/out.ckpt"));

    const TrainConfig back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());

    CHECK_THROWS_AS(TrainConfig::from_json({{"learning_rate", 1}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr", 0}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"epochs", "many"}}), InvalidArgument);
    CHECK_THROWS_AS(TrainConfig::from_json({{"augment", "heavy"}}), InvalidArgument);

    const auto path = fs::temp_directory_path() / "tags_cfg_test.json";
    std::ofstream(path) << j.dump();
    CHECK(TrainConfig::load(path).dataset == fs::temp_directory_path() / "data/manifest.json");
    fs::remove(path);
    CHECK_THROWS_AS(TrainConfig::load(path), IoError);
}

TEST_CASE("AdamW first step and frozen parameters") {
    const std::vector<ParamSpec> layout{{"w", {3}, ParamGroup::Decoder, Init::Zeros},
                                        {"frozen", {2}, ParamGroup::Attention, Init::Zeros}};
    ParameterStore store(layout, {ad::Tensor({3}, {1.0, -2.0, 0.5}), ad::Tensor({2}, {3.0, 4.0})});
    store.get("w")->grad = ad::Tensor({3}, {0.1, -4.0, 0.0});
    AdamW opt(0.01, 0.9, 0.999, 1e-8, 0.1);
    opt.step(store);
    // After one step m_hat = g and v_hat = g^2.
    const double g[3] = {0.1, -4.0, 0.0}, p0[3] = {1.0, -2.0, 0.5};
    for (int i = 0; i < 3; ++i) {
        const double decayed = p0[i] - 0.01 * 0.1 * p0[i];
        const double want = decayed - 0.01 * g[i] / (std::abs(g[i]) + 1e-8);
        CHECK(store.get("w")->value.data[i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(store.get("frozen")->value.data == std::vector<double>{3.0, 4.0});

    // lr = 0 leaves everything bitwise unchanged.
    ParameterStore still(layout, {ad::Tensor({3}, {1.0, -2.0, 0.5}), ad::Tensor({2}, {3.0, 4.0})});
    still.get("w")->grad = ad::Tensor({3}, {0.1, -4.0, 0.3});
    AdamW zero(0.0, 0.9, 0.999, 1e-8, 0.1);
    zero.step(still);
    CHECK(still.get("w")->value.data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("case preparation") {
    Rng rng(1);
    Phantom ph = synth_phantom(PhantomSpec{}, rng);
    ph.image.spacing = ph.organ.spacing = ph.tumor.spacing = {2.0, 1.0, 1.0};
    const PreparedCase c = prepare_case(ph.image, ph.organ, ph.tumor, PreprocessConfig{});
    CHECK(c.input.dims() == Dims3{96, 48, 48});
    CHECK(c.tumor.dims() == c.input.dims());
    CHECK(c.source_dims == Dims3{48, 48, 48});
    for (double v : c.input.channels[0].values()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(c.tumor.count() == 2 * ph.tumor.count());

    const PreparedCase none = prepare_case(ph.image, ph.organ, std::nullopt, PreprocessConfig{});
    CHECK(none.tumor.empty());
    CHECK_THROWS_AS(prepare_case(ph.image, MaskVolume({4, 4, 4}), std::nullopt, PreprocessConfig{}), InvalidArgument);
}

TEST_CASE("crop around points") {
    ModelInput in;
    for (auto& c : in.channels) c = Grid3<double>({40, 40, 40}, 1.0);
    const auto r = crop_around_points(in, {{{10, 20, 30}, PointLabel::Foreground}, {{13, 21, 35}, PointLabel::Background}},
                                      {16, 16, 16});
    // centroid (11.5, 20.5, 32.5) rounds half up to (12, 21, 33).
    CHECK(r.offset == Voxel{4, 13, 25});
    REQUIRE(r.points.size() == 2);
    CHECK(r.points[0].coord == Voxel{6, 7, 5});
    CHECK(r.points[1].label == PointLabel::Background);
    // Voxels beyond x = 39 are zero padding.
    CHECK(r.patch.channels[0].at(0, 0, 14) == 1.0);
    CHECK(r.patch.channels[0].at(0, 0, 15) == 0.0);

    // A far-away point falls outside the crop and is dropped.
    const auto far = crop_around_points(in, {{{0, 0, 0}, PointLabel::Foreground}, {{39, 39, 39}, PointLabel::Foreground}},
                                        {16, 16, 16});
    CHECK(far.points.empty());
    CHECK_THROWS_AS(crop_around_points(in, {}, {16, 16, 16}), InvalidArgument);
    CHECK_THROWS_AS(crop_around_points(in, {{{40, 0, 0}, PointLabel::Foreground}}, {16, 16, 16}), InvalidArgument);
}

TEST_CASE("paste back inverts crop inside the volume") {
    std::mt19937_64 rng(2);
    const MaskVolume m = oracle::random_mask({20, 18, 16}, rng, 0.5);
    for (const Voxel off : {Voxel{-3, 2, 5}, Voxel{4, 4, 4}, Voxel{10, -5, 9}}) {
        const MaskVolume c = crop(m, off, {12, 12, 12});
        const Grid3<std::uint8_t> back = paste_back(c.data, off, m.dims());
        for (int z = 0; z < 20; ++z)
            for (int y = 0; y < 18; ++y)
                for (int x = 0; x < 16; ++x) {
                    const bool covered = z >= off.z && z < off.z + 12 && y >= off.y && y < off.y + 12 && x >= off.x &&
                                         x < off.x + 12;
                    CHECK(back.at(z, y, x) == (covered ? m.data.at(z, y, x) : 0));
                }
    }
}

TEST_CASE("map_voxel") {
    CHECK(map_voxel({3, 4, 5}, {1, 1, 1}, {1, 1, 1}, {10, 10, 10}) == Voxel{3, 4, 5});
    CHECK(map_voxel({3, 4, 5}, {2, 1, 0.5}, {1, 1, 1}, {20, 10, 5}) == Voxel{7, 4, 2});
    CHECK(map_voxel({9, 0, 0}, {2, 1, 1}, {1, 1, 1}, {18, 10, 10}) == Voxel{17, 0, 0});
}

TEST_CASE("inference thresholds at 0.5 and stays inside the crop") {
    Rng rng(3);
    const TagsModel model(ModelConfig::tiny(), rng);
    const PreparedCase c = phantom_case(4);
    const std::vector<PointPrompt> pts{{{24, 24, 24}, PointLabel::Foreground}};
    const InferResult r = infer(model, c.input, pts);
    CHECK(r.mask.dims() == c.input.dims());
    CHECK(r.offset == Voxel{8, 8, 8});
    for (int z = 0; z < 48; ++z)
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                const double p = r.probability.at(z, y, x);
                CHECK(r.mask.data.at(z, y, x) == (p >= 0.5 ? 1 : 0));
                const bool inside = z >= 8 && z < 40 && y >= 8 && y < 40 && x >= 8 && x < 40;
                if (!inside) CHECK(p == 0.0);
            }
    CHECK(r.prob_min <= r.prob_mean);
    CHECK(r.prob_mean <= r.prob_max);
    const InferResult again = infer(model, c.input, pts);
    CHECK(again.probability == r.probability);
}

TEST_CASE("trainer is deterministic for a seed") {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.epochs = 3;
    cfg.seed = 11;
    Trainer a(cfg, {phantom_case(1)}), b(cfg, {phantom_case(1)});
    CHECK(a.total_steps() == 3);
    for (int i = 0; i < 3; ++i) {
        const StepRecord ra = a.step(), rb = b.step();
        CHECK(ra.total == rb.total);
        CHECK(ra.alignment_per_stage.size() == 2);
        CHECK(ra.total == doctest::Approx(ra.dice + ra.alignment).epsilon(1e-12));
        CHECK(ra.step == i + 1);
    }
    const auto ja = a.checkpoint(), jb = b.checkpoint();
    for (std::size_t i = 0; i < ja.params.size(); ++i) CHECK(ja.params[i].data == jb.params[i].data);
    CHECK(ja.epoch == 3);
    CHECK(ja.text_features.count("kidney") == 1);

    const nlohmann::json rec = a.step().to_json();
    for (const char* k : {"step", "epoch", "l_a", "l_a_total", "dice", "L"}) CHECK(rec.contains(k));
}

TEST_CASE("non-finite values stop training") {
    TrainConfig cfg;
    cfg.epochs = 1;
    Trainer t(cfg, {phantom_case(2)});
    t.model().params().get("encoder.pos_embed")->value.data[0] = std::nan("");
    CHECK_THROWS_AS(t.step(), NumericalError);
    CHECK_THROWS_AS(Trainer(cfg, {}), InvalidArgument);
}
