#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "tags/encoder.hpp"

using namespace tags;

namespace {

EncoderConfig micro() {
    EncoderConfig cfg;
    cfg.num_stages = 2;
    cfg.blocks_per_stage = 1;
    cfg.embed_width = 8;
    cfg.num_heads = 2;
    cfg.patch_size = 4;
    cfg.input_size = {8, 8, 8};
    cfg.adapter_width = 4;
    return cfg;
}

ModelInput random_input(Dims3 d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ModelInput in;
    for (auto& c : in.channels) {
        c = Grid3<double>(d);
        for (double& v : c.values()) v = u(rng);
    }
    return in;
}

}  // namespace

TEST_CASE("defaults") {
    const EncoderConfig full;
    CHECK(full.lambda == 0.2);
    CHECK(full.embed_width == 768);
    CHECK(full.num_heads == 12);
    CHECK(full.patch_size == 16);
    CHECK(full.input_size == Dims3{128, 128, 128});
    CHECK(full.grid() == Dims3{8, 8, 8});
    CHECK(EncoderConfig::tiny().grid() == Dims3{4, 4, 4});
}

TEST_CASE("config validation") {
    EncoderConfig cfg = micro();
    cfg.lambda = 1.5;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = micro();
    cfg.num_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
    cfg = micro();
    cfg.input_size = {8, 8, 10};
    CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("patch extraction layout") {
    const ModelInput in = random_input({4, 4, 8}, 1);
    const ad::Tensor t = extract_patches(in, 2);
    CHECK(t.shape == std::vector<int>{2 * 2 * 4, 24});
    // token (1, 0, 3), channel 2, offset (1, 0, 1)
    const int token = (1 * 2 + 0) * 4 + 3;
    const int col = ((2 * 2 + 1) * 2 + 0) * 2 + 1;
    CHECK(t(token, col) == in.channels[2].at(3, 0, 7));
    CHECK_THROWS_AS(extract_patches(in, 3), InvalidArgument);
}

TEST_CASE("forward shapes and determinism") {
    const EncoderConfig cfg = EncoderConfig::tiny();
    Rng rng(1);
    const ParameterStore params(encoder_layout(cfg), rng);
    const ModelInput in = random_input(cfg.input_size, 2);
    const EncoderOutput a = encoder_forward(in, cfg, params);
    const EncoderOutput b = encoder_forward(in, cfg, params);
    REQUIRE(a.stage_outputs.size() == 2);
    REQUIRE(a.adapter_outputs.size() == 2);
    CHECK(a.grid == Dims3{4, 4, 4});
    for (int s = 0; s < 2; ++s) {
        CHECK(a.stage_outputs[s]->value.shape == std::vector<int>{64, 32});
        CHECK(a.adapter_outputs[s]->value.shape == std::vector<int>{64, 32});
        CHECK(a.stage_outputs[s]->value.data == b.stage_outputs[s]->value.data);
    }
    CHECK_THROWS_AS(encoder_forward(random_input({16, 16, 16}, 3), cfg, params), InvalidArgument);
}

TEST_CASE("alignment adapter and lambda residual") {
    std::mt19937_64 rng(4);
    const auto f = ad::constant(oracle::random_tensor({6, 5}, rng));
    const auto w = ad::constant(oracle::random_tensor({5, 5}, rng));
    const auto a = apply_alignment_adapter(f, w);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 5; ++c) {
            double z = 0;
            for (int k = 0; k < 5; ++k) z += f->value(r, k) * w->value(k, c);
            CHECK(a->value(r, c) == doctest::Approx(0.5 * z * (1 + std::erf(z / std::sqrt(2.0)))).epsilon(1e-12));
        }
    CHECK(apply_alignment_adapter(f, w, Activation::Identity)->value.data == ad::matmul(f, w)->value.data);

    // lambda = 0 keeps the features, lambda = 1 is the adapter output; both bitwise.
    CHECK(stage_residual(f, a, 0.0)->value.data == f->value.data);
    CHECK(stage_residual(f, a, 1.0)->value.data == a->value.data);
    const auto mid = stage_residual(f, a, 0.2);
    for (std::size_t i = 0; i < mid->value.numel(); ++i) {
        CHECK(mid->value.data[i] == doctest::Approx(0.2 * a->value.data[i] + 0.8 * f->value.data[i]).epsilon(1e-14));
    }
    CHECK_THROWS_AS(stage_residual(f, a, -0.1), InvalidArgument);
    CHECK_THROWS_AS(apply_alignment_adapter(f, ad::constant(oracle::random_tensor({4, 5}, rng))), InvalidArgument);
}

TEST_CASE("lambda = 0 makes stage outputs independent of the alignment weights") {
    EncoderConfig cfg = micro();
    cfg.lambda = 0.0;
    Rng rng(5);
    const auto layout = encoder_layout(cfg);
    ParameterStore params(layout, rng);
    const ModelInput in = random_input(cfg.input_size, 6);
    const auto before = encoder_forward(in, cfg, params);
    for (double& v : params.get("encoder.align.0.weight")->value.data) v *= -3.0;
    const auto after = encoder_forward(in, cfg, params);
    CHECK(before.stage_outputs[1]->value.data == after.stage_outputs[1]->value.data);
    CHECK(before.adapter_outputs[0]->value.data != after.adapter_outputs[0]->value.data);
}

TEST_CASE("parameter partition") {
    const EncoderConfig full;
    const ParameterPartition p = partition(encoder_layout(full));
    // Frozen: attention (qkv + proj) and MLP of 12 blocks.
    const std::size_t c = 768, per_block = (c * 3 * c + 3 * c) + (c * c + c) + (c * 4 * c + 4 * c) + (4 * c * c + c);
    CHECK(p.frozen_count == 12 * per_block);
    for (const auto& name : p.frozen) {
        const bool attn_or_mlp = name.find(".attn.") != std::string::npos || name.find(".mlp.") != std::string::npos;
        CHECK(attn_or_mlp);
    }
    for (const auto& name : p.trainable) {
        CHECK(name.find(".attn.") == std::string::npos);
        CHECK(name.find(".mlp.") == std::string::npos);
    }
    CHECK(std::find(p.trainable.begin(), p.trainable.end(), "encoder.align.3.weight") != p.trainable.end());
    CHECK(std::find(p.trainable.begin(), p.trainable.end(), "encoder.pos_embed") != p.trainable.end());
    CHECK(std::find(p.trainable.begin(), p.trainable.end(), "encoder.blocks.0.adapter.conv.weight") != p.trainable.end());
}

TEST_CASE("gradients reach trainable parameters only") {
    const EncoderConfig cfg = micro();
    Rng rng(7);
    ParameterStore params(encoder_layout(cfg), rng);
    const ModelInput in = random_input(cfg.input_size, 8);
    std::mt19937_64 prng(9);
    const auto coeff = ad::constant(oracle::random_tensor({8, 8}, prng));
    auto loss = [&] {
        const auto out = encoder_forward(in, cfg, params);
        return ad::sum(ad::mul(ad::add(out.stage_outputs[1], out.adapter_outputs[0]), coeff));
    };
    for (const char* name : {"encoder.align.0.weight", "encoder.align.1.weight", "encoder.pos_embed",
                             "encoder.blocks.1.adapter.conv.weight", "encoder.blocks.0.norm1.weight",
                             "encoder.patch_embed.weight"}) {
        const auto& p = params.get(name);
        const auto entries = oracle::sample_entries(p->value.numel(), 8, prng);
        const auto g = oracle::check_grad(p, entries, loss);
        INFO(std::string(name));
        CHECK(g.relative_error() < 1e-6);
    }
    params.zero_grad();
    ad::backward(loss());
    CHECK(params.get("encoder.blocks.0.attn.qkv.weight")->grad.data.empty());
    CHECK(params.get("encoder.blocks.0.mlp.fc1.weight")->grad.data.empty());
}

TEST_CASE("2D patch kernel inflation") {
    const int p = 4, c = 5;
    std::mt19937_64 rng(10);
    const ad::Tensor k2 = oracle::random_tensor({3 * p * p, c}, rng);
    const ad::Tensor k3 = inflate_patch_kernel(k2, p);
    CHECK(k3.shape == std::vector<int>{3 * p * p * p, c});
    // A depth-constant patch gives the 2D response.
    ModelInput in;
    std::uniform_real_distribution<double> u(-1, 1);
    for (int ch = 0; ch < 3; ++ch) {
        in.channels[ch] = Grid3<double>({p, p, p});
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < p; ++x) {
                const double v = u(rng);
                for (int z = 0; z < p; ++z) in.channels[ch].at(z, y, x) = v;
            }
    }
    const ad::Tensor patch = extract_patches(in, p);
    for (int j = 0; j < c; ++j) {
        double want = 0, got = 0;
        for (int ch = 0; ch < 3; ++ch)
            for (int y = 0; y < p; ++y)
                for (int x = 0; x < p; ++x) want += in.channels[ch].at(0, y, x) * k2((ch * p + y) * p + x, j);
        for (int r = 0; r < 3 * p * p * p; ++r) got += patch(0, r) * k3(r, j);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK_THROWS_AS(inflate_patch_kernel(k2, 3), InvalidArgument);
}

TEST_CASE("2D positional inflation") {
    std::mt19937_64 rng(11);
    const Dims3 grid{3, 2, 4};
    const ad::Tensor pos2 = oracle::random_tensor({8, 6}, rng);
    const ad::Tensor depth = oracle::random_tensor({3, 6}, rng);
    const ad::Tensor pos3 = inflate_positional(pos2, depth, grid);
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 4; ++x)
                for (int j = 0; j < 6; ++j) {
                    CHECK(pos3(static_cast<int>(grid.index(z, y, x)), j) == pos2(y * 4 + x, j) + depth(z, j));
                }
    CHECK_THROWS_AS(inflate_positional(pos2, oracle::random_tensor({2, 6}, rng), grid), InvalidArgument);
}
