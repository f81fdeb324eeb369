#include <fstream>
#include <iostream>
#include <regex>

#include "CLI11.hpp"
#include "tags/error.hpp"
#include "tags/metrics.hpp"
#include "tags/service.hpp"

using namespace tags;

namespace {

PointPrompt parse_point(const std::string& s) {
    static const std::regex re(R"(^\s*(-?\d+),(-?\d+),(-?\d+)(?::(\w+))?\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw InvalidArgument("point '" + s + "' is not z,y,x[:fg|bg]");
    PointPrompt p;
    p.coord = {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3])};
    p.label = m[4].matched ? parse_label(m[4]) : PointLabel::Foreground;
    return p;
}

int run_train(const std::string& config) {
    const TrainConfig cfg = TrainConfig::load(config);
    const TrainResult r = train(cfg);
    const auto& last = r.log.back();
    std::cout << "trained " << r.log.size() << " steps, final L=" << last.total << " dice=" << last.dice
              << "\ncheckpoint: " << cfg.output.string() << "\n";
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& volume, const std::string& organ,
              const std::vector<std::string>& point_args, const std::string& out) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    const TagsModel model = ckpt.model();
    std::vector<PointPrompt> points;
    for (const auto& p : point_args) points.push_back(parse_point(p));
    const Volume image = io::read_volume(volume);
    MaskVolume org = io::read_mask(organ);
    const InferResult r = infer_volume(model, ckpt.preprocess, image, org, points);
    io::write_mask(r.mask, out);
    std::cout << "mask voxels: " << r.mask.count() << "  crop offset: (" << r.offset.z << "," << r.offset.y << ","
              << r.offset.x << ")  prob max: " << r.prob_max << "\nwrote " << out << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& manifest, const std::string& strategy, int npoints,
             double tolerance, std::uint64_t seed, const std::string& jsonl) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    EvalConfig cfg;
    cfg.tolerance_mm = tolerance;
    cfg.seed = seed;
    if (!strategy.empty()) {
        SelectionStrategy s{SelectionStrategy::parse_kind(strategy), npoints};
        s.validate();
        cfg.strategies = {s};
    }
    const MetricReport report = evaluate(ckpt, manifest, cfg);
    std::cout << report.table();
    if (!jsonl.empty()) {
        std::ofstream f(jsonl);
        if (!f) throw IoError("cannot write " + jsonl);
        f << report.jsonl();
    }
    return 0;
}

int run_phantom(const std::string& out, int count, std::uint64_t seed, int size, double tumor_radius) {
    std::filesystem::create_directories(out);
    io::DatasetManifest manifest;
    for (int i = 0; i < count; ++i) {
        Rng rng(seed + static_cast<std::uint64_t>(i));
        PhantomSpec spec;
        spec.dims = {size, size, size};
        const double scale = size / 48.0;
        for (auto& r : spec.organ_radii) r *= scale;
        spec.tumor_radii = {tumor_radius, tumor_radius, tumor_radius};
        const Phantom ph = synth_phantom(spec, rng);
        const std::string id = "phantom_" + std::to_string(i);
        io::CaseRecord rec;
        rec.id = id;
        rec.image = id + "_image.nii.gz";
        rec.organ = id + "_organ.nii.gz";
        rec.tumor = id + "_tumor.nii.gz";
        rec.organ_name = "kidney";
        io::write_volume(ph.image, std::filesystem::path(out) / rec.image);
        io::write_mask(ph.organ, std::filesystem::path(out) / rec.organ);
        io::write_mask(ph.tumor, std::filesystem::path(out) / *rec.tumor);
        manifest.cases.push_back(rec);
        std::cout << id << ": " << spec.dims.str() << ", tumor voxels " << ph.tumor.count() << "\n";
    }
    io::write_manifest(manifest, std::filesystem::path(out) / "manifest.json");
    std::cout << "wrote " << (std::filesystem::path(out) / "manifest.json").string() << "\n";
    return 0;
}

int run_serve(const std::string& ckpt_path, const std::string& host, int port) {
    std::optional<Checkpoint> ckpt;
    if (!ckpt_path.empty()) ckpt = load_checkpoint(ckpt_path);
    SegmentationService service(std::move(ckpt));
    std::cout << "listening on " << host << ":" << port << std::endl;
    serve(service, host, port);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TAGS volumetric tumor segmentation toolkit"};
    app.require_subcommand(1);

    std::string config;
    auto* train_cmd = app.add_subcommand("train", "train a model from a JSON config");
    train_cmd->add_option("--config", config, "training config (JSON)")->required()->check(CLI::ExistingFile);

    std::string ckpt, volume, organ, out;
    std::vector<std::string> points;
    auto* infer_cmd = app.add_subcommand("infer", "segment a volume from point prompts");
    infer_cmd->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--volume", volume, "image volume (.nii, .nii.gz, .json)")->required();
    infer_cmd->add_option("--organ", organ, "organ mask")->required();
    infer_cmd->add_option("--points", points, "points as z,y,x:fg or z,y,x:bg")->required();
    infer_cmd->add_option("--out", out, "output mask path")->required();

    std::string manifest, strategy, jsonl;
    int npoints = 1;
    double tolerance = 2.0;
    std::uint64_t seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "point-robustness evaluation (Dice, NSD, ICC)");
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--manifest", manifest, "dataset manifest")->required();
    eval_cmd->add_option("--strategy", strategy, "random, edge or central (default: all four table rows)")
        ->check(CLI::IsMember({"random", "edge", "central"}));
    eval_cmd->add_option("--points", npoints, "points per case for --strategy")->check(CLI::Range(1, 10));
    eval_cmd->add_option("--tolerance", tolerance, "NSD tolerance in mm")->check(CLI::NonNegativeNumber);
    eval_cmd->add_option("--seed", seed, "selection seed");
    eval_cmd->add_option("--jsonl", jsonl, "write per-case records here");

    std::string phantom_out;
    int count = 1, size = 48;
    double radius = 6.0;
    std::uint64_t phantom_seed = 7;
    auto* phantom_cmd = app.add_subcommand("phantom", "write synthetic phantoms and a manifest");
    phantom_cmd->add_option("--out", phantom_out, "output directory")->required();
    phantom_cmd->add_option("--count", count, "number of cases")->check(CLI::PositiveNumber);
    phantom_cmd->add_option("--seed", phantom_seed, "seed of the first case");
    phantom_cmd->add_option("--size", size, "cubic extent in voxels")->check(CLI::Range(16, 512));
    phantom_cmd->add_option("--tumor-radius", radius, "tumor radius in voxels")->check(CLI::NonNegativeNumber);

    std::string host = "127.0.0.1";
    int port = 8080;
    std::string serve_ckpt;
    auto* serve_cmd = app.add_subcommand("serve", "run the segmentation HTTP service");
    serve_cmd->add_option("--ckpt", serve_ckpt, "checkpoint (segment answers 409 without one)")
        ->check(CLI::ExistingFile);
    serve_cmd->add_option("--host", host, "bind address");
    serve_cmd->add_option("--port", port, "port")->check(CLI::Range(1, 65535));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) return run_train(config);
        if (*infer_cmd) return run_infer(ckpt, volume, organ, points, out);
        if (*eval_cmd) return run_eval(ckpt, manifest, strategy, npoints, tolerance, seed, jsonl);
        if (*phantom_cmd) return run_phantom(phantom_out, count, phantom_seed, size, radius);
        if (*serve_cmd) return run_serve(serve_ckpt, host, port);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
