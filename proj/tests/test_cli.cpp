#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "tags/volume_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kFixture = TAGS_FIXTURE_DIR;

struct Run {
    int status;
    std::string out;
};

Run run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "tags_cli_test.out";
    const std::string cmd = std::string(TAGS_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    std::ifstream f(log);
    std::stringstream ss;
    ss << f.rdbuf();
    fs::remove(log);
    return {rc, ss.str()};
}

}  // namespace

TEST_CASE("eval prints the robustness table") {
    const Run r = run("eval --ckpt " + (kFixture / "desk.ckpt").string() + " --manifest " +
                      (kFixture / "data" / "manifest.json").string());
    INFO(r.out);
    CHECK(r.status == 0);
    for (const char* row : {"random (1pts)", "edge (1pts)", "edge (3pts)", "central (1pts)", "ICC (%)"})
        CHECK(r.out.find(row) != std::string::npos);

    const Run one = run("eval --ckpt " + (kFixture / "desk.ckpt").string() + " --manifest " +
                        (kFixture / "data" / "manifest.json").string() + " --strategy edge --points 3");
    CHECK(one.status == 0);
    CHECK(one.out.find("edge (3pts)") != std::string::npos);
    CHECK(one.out.find("random (1pts)") == std::string::npos);
}

TEST_CASE("infer writes a mask") {
    const fs::path out = fs::temp_directory_path() / "tags_cli_mask.nii.gz";
    const fs::path data = kFixture / "data";
    const tags::MaskVolume tumor = tags::io::read_mask(data / "phantom_0_tumor.nii.gz");
    const Run r = run("infer --ckpt " + (kFixture / "desk.ckpt").string() + " --volume " +
                      (data / "phantom_0_image.nii.gz").string() + " --organ " +
                      (data / "phantom_0_organ.nii.gz").string() + " --points 24,24,24:bg --out " + out.string());
    INFO(r.out);
    CHECK(r.status == 0);
    REQUIRE(fs::exists(out));
    CHECK(tags::io::read_mask(out).dims() == tumor.dims());
    fs::remove(out);

    CHECK(run("infer --ckpt " + (kFixture / "desk.ckpt").string() + " --volume " +
              (data / "phantom_0_image.nii.gz").string() + " --organ " + (data / "phantom_0_organ.nii.gz").string() +
              " --points 1,2:fg --out " + out.string())
              .status != 0);
    CHECK(run("bogus").status != 0);
}
