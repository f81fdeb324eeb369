#include <cstdlib>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "oracles.hpp"
#include "tags/volume_io.hpp"

using namespace tags;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("tags_io_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

template <class T>
void put(std::vector<std::uint8_t>& b, std::size_t at, T v) {
    std::memcpy(b.data() + at, &v, sizeof(T));
}

template <class T>
T get(const std::vector<std::uint8_t>& b, std::size_t at) {
    T v;
    std::memcpy(&v, b.data() + at, sizeof(T));
    return v;
}

Volume random_volume(Dims3 d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-500.0f, 500.0f);
    Volume v{Grid3<double>(d), {0.8, 1.25, 2.0}, {-10.5, 3.0, 7.25}};
    for (double& x : v.data.values()) x = u(rng);  // float-representable
    return v;
}

}  // namespace

TEST_CASE("NIfTI header layout") {
    const Volume v = random_volume({3, 4, 5}, 1);
    const auto b = io::encode_nifti(v);
    CHECK(get<std::int32_t>(b, 0) == 348);
    CHECK(get<std::int16_t>(b, 40) == 3);
    // dim[1..3] are (x, y, z).
    CHECK(get<std::int16_t>(b, 42) == 5);
    CHECK(get<std::int16_t>(b, 44) == 4);
    CHECK(get<std::int16_t>(b, 46) == 3);
    CHECK(get<std::int16_t>(b, 70) == 16);
    CHECK(get<float>(b, 80) == doctest::Approx(2.0));
    CHECK(get<float>(b, 88) == doctest::Approx(0.8));
    CHECK(std::memcmp(b.data() + 344, "n+1", 4) == 0);
    CHECK(b.size() == 352 + 60 * 4);
    // Voxel (z=1, y=2, x=3) sits at x-fastest offset.
    CHECK(get<float>(b, 352 + 4 * (1 * 20 + 2 * 5 + 3)) == static_cast<float>(v.data.at(1, 2, 3)));
}

TEST_CASE("NIfTI round trip, plain and gzip") {
    TempDir tmp;
    const Volume v = random_volume({6, 5, 4}, 2);
    for (const char* name : {"v.nii", "v.nii.gz"}) {
        io::write_volume(v, tmp.path / name);
        const Volume r = io::read_volume(tmp.path / name);
        CHECK(r.dims() == v.dims());
        CHECK(r.data == v.data);
        for (int a = 0; a < 3; ++a) {
            CHECK(r.spacing[a] == doctest::Approx(v.spacing[a]).epsilon(1e-6));
            CHECK(r.origin[a] == doctest::Approx(v.origin[a]).epsilon(1e-6));
        }
    }
    const auto raw = io::read_file(tmp.path / "v.nii.gz");
    CHECK(raw[0] == 0x1f);
    CHECK(raw[1] == 0x8b);

    std::mt19937_64 rng(3);
    MaskVolume m = oracle::random_mask({5, 5, 5}, rng, 0.3);
    m.spacing = {1.5, 1.5, 3.0};
    io::write_mask(m, tmp.path / "m.nii.gz");
    const MaskVolume rm = io::read_mask(tmp.path / "m.nii.gz");
    CHECK(rm == m);
    CHECK(rm.spacing[2] == doctest::Approx(3.0));
}

TEST_CASE("hand-built int16 NIfTI with scaling") {
    std::vector<std::uint8_t> b(352 + 4 * 2, 0);
    put<std::int32_t>(b, 0, 348);
    const std::int16_t dim[8] = {3, 2, 1, 2, 1, 1, 1, 1};  // x=2, y=1, z=2
    for (int i = 0; i < 8; ++i) put<std::int16_t>(b, 40 + 2 * i, dim[i]);
    put<std::int16_t>(b, 70, 4);
    put<std::int16_t>(b, 72, 16);
    const float pix[8] = {1, 0.5f, 0.75f, 3.0f, 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * i, pix[i]);
    put<float>(b, 108, 352.0f);
    put<float>(b, 112, 2.0f);
    put<float>(b, 116, -1000.0f);
    std::memcpy(b.data() + 344, "n+1", 4);
    const std::int16_t vals[4] = {0, 10, -20, 500};
    for (int i = 0; i < 4; ++i) put<std::int16_t>(b, 352 + 2 * i, vals[i]);

    const Volume v = io::decode_nifti(b);
    CHECK(v.dims() == Dims3{2, 1, 2});
    CHECK(v.spacing == Spacing{3.0, 0.75, 0.5});
    CHECK(v.data.values() == std::vector<double>{-1000, -980, -1040, 0});
    CHECK(io::decode_nifti(io::gzip_compress(b)).data == v.data);

    auto bad = b;
    put<std::int32_t>(bad, 0, 540);
    CHECK_THROWS_AS(io::decode_nifti(bad), IoError);
    bad = b;
    bad.resize(358);
    CHECK_THROWS_AS(io::decode_nifti(bad), IoError);
    bad = b;
    put<std::int16_t>(bad, 40, 4);
    put<std::int16_t>(bad, 48, 2);  // 4D
    CHECK_THROWS_AS(io::decode_nifti(bad), IoError);
}

TEST_CASE("gzip") {
    std::vector<std::uint8_t> data(10000);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<std::uint8_t>(i * 31 % 7);
    const auto z = io::gzip_compress(data);
    CHECK(z.size() < data.size());
    CHECK(io::gzip_decompress(z) == data);
    auto cut = z;
    cut.resize(z.size() / 2);
    CHECK_THROWS_AS(io::gzip_decompress(cut), IoError);
}

TEST_CASE("raw JSON volumes") {
    TempDir tmp;
    const Volume v = random_volume({3, 3, 2}, 4);
    io::write_volume(v, tmp.path / "img.json");
    CHECK(fs::exists(tmp.path / "img.raw"));
    const Volume r = io::read_volume(tmp.path / "img.json");
    CHECK(r.data == v.data);
    CHECK(r.spacing == v.spacing);
    CHECK(r.origin == v.origin);

    std::ofstream(tmp.path / "broken.json") << "{\"dims\": [1, 2]}";
    CHECK_THROWS_AS(io::read_volume(tmp.path / "broken.json"), IoError);
    CHECK_THROWS_AS(io::read_volume(tmp.path / "missing.nii"), IoError);
}

TEST_CASE("manifest paths") {
    TempDir tmp;
    io::DatasetManifest m;
    m.cases.push_back({"a", "a_img.nii.gz", "a_org.nii.gz", fs::path("a_tum.nii.gz"), "liver"});
    m.cases.push_back({"b", "/abs/b.nii", "b_org.nii", std::nullopt, "kidney"});
    io::write_manifest(m, tmp.path / "manifest.json");

    ::unsetenv("TAGS_DATA_ROOT");
    auto r = io::read_manifest(tmp.path / "manifest.json");
    REQUIRE(r.cases.size() == 2);
    CHECK(r.cases[0].image == tmp.path / "a_img.nii.gz");
    CHECK(r.cases[0].organ_name == "liver");
    CHECK(r.cases[0].tumor == tmp.path / "a_tum.nii.gz");
    CHECK(r.cases[1].image == fs::path("/abs/b.nii"));
    CHECK_FALSE(r.cases[1].tumor.has_value());

    ::setenv("TAGS_DATA_ROOT", "/data/root", 1);
    r = io::read_manifest(tmp.path / "manifest.json");
    CHECK(r.cases[0].image == fs::path("/data/root/a_img.nii.gz"));
    CHECK(r.cases[1].image == fs::path("/abs/b.nii"));
    ::unsetenv("TAGS_DATA_ROOT");

    std::ofstream(tmp.path / "bad.json") << "{\"cases\": [{\"id\": 1}]}";
    CHECK_THROWS_AS(io::read_manifest(tmp.path / "bad.json"), IoError);
}
