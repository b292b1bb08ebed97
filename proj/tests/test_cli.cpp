#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

#include "doctest.h"
#include "test_support.hpp"

#include "mindreg/io.hpp"

using namespace mindreg;
using namespace mindreg::testing;
namespace fs = std::filesystem;

namespace {

struct Workdir {
    fs::path path = fs::temp_directory_path() / "mindreg_cli_test";
    Workdir() {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~Workdir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }

    // Runs the CLI with stdout sent to `stdout_file` inside the directory; returns the exit code.
    int run(const std::string& args, const std::string& stdout_file = "stdout.txt") const {
        const std::string cmd = "\"" MINDREG_CLI "\" " + args + " > \"" + (*this / stdout_file) + "\" 2> \"" +
                                (*this / "stderr.txt") + "\"";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    std::string text(const std::string& name) const {
        std::ifstream in(*this / name);
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    }
};

// float32-exact values so written files read back unchanged.
ScalarVolume float_phantom(const GridGeometry& g, std::uint64_t seed) {
    ScalarVolume v = smooth_phantom(g, seed);
    for (auto& x : v.data) x = double(float(x));
    return v;
}

} // namespace

TEST_CASE("usage errors and help") {
    Workdir w;
    CHECK(w.run("") == 1);
    CHECK(w.run("frobnicate") == 1);
    CHECK(w.run("warp --image a.nii") == 1);
    CHECK(w.run("invert --field f.nii --out g.nii --max-iter nope") == 1);
    CHECK(w.run("mind --image a.nii --out b.nii --offsets 1,2") == 1);

    CHECK(w.run("--help") == 0);
    for (const char* sub : {"mind", "register", "warp", "invert", "compose", "metrics", "synth", "ensemble"})
        CHECK(w.text("stdout.txt").find(sub) != std::string::npos);
    CHECK(w.run("invert --help") == 0);
    CHECK(w.text("stdout.txt").find("50") != std::string::npos);
    CHECK(w.run("register --help") == 0);
    CHECK(w.text("stdout.txt").find("mind") != std::string::npos);
}

TEST_CASE("data and numerical errors") {
    Workdir w;
    CHECK(w.run("warp --image " + (w / "missing.nii") + " --field " + (w / "missing.nii") + " --out " +
                (w / "o.nii")) == 2);
    {
        std::ofstream junk(w / "junk.nii", std::ios::binary);
        junk << "not a volume";
    }
    CHECK(w.run("mind --image " + (w / "junk.nii") + " --out " + (w / "o.nii")) == 2);
    {
        std::ofstream cfg(w / "bad.json");
        cfg << R"({"levels": 3, "learning_rat": 0.1})";
    }
    write_volume(float_phantom(cube(16), 1), w / "a.nii");
    CHECK(w.run("register --fixed " + (w / "a.nii") + " --moving " + (w / "a.nii") + " --config " + (w / "bad.json")) ==
          2);

    const GridGeometry g = cube(16);
    write_volume(bspline_to_dense(random_bspline(g, 4, 0.9, 2)), w / "f.nii");
    CHECK(w.run("invert --field " + (w / "f.nii") + " --out " + (w / "g.nii") + " --max-iter 1") == 3);
    CHECK(w.run("invert --field " + (w / "f.nii") + " --out " + (w / "g.nii")) == 0);
    const VectorField inv = std::get<VectorField>(read_volume(w / "g.nii"));
    CHECK(inv.geometry == g);
}

TEST_CASE("field tools") {
    Workdir w;
    const GridGeometry g = cube(12);
    const ScalarVolume img = float_phantom(g, 3);
    write_volume(img, w / "img.nii");
    write_volume(VectorField(g), w / "zero.nii");
    VectorField f = bspline_to_dense(random_bspline(g, 4, 0.8, 4));
    for (auto& x : f.data.reshaped()) x = double(float(x));
    write_volume(f, w / "f.nii");

    REQUIRE(w.run("warp --image " + (w / "img.nii") + " --field " + (w / "zero.nii") + " --out " + (w / "w.nii")) == 0);
    CHECK((read_scalar(w / "w.nii").data == img.data).all());

    REQUIRE(w.run("compose --first " + (w / "zero.nii") + " --second " + (w / "f.nii") + " --out " + (w / "c.nii")) ==
            0);
    const VectorField c = std::get<VectorField>(read_volume(w / "c.nii"));
    CHECK((c.data - f.data).cwiseAbs().maxCoeff() < 1e-6);

    REQUIRE(w.run("mind --image " + (w / "img.nii") + " --out " + (w / "m.nii")) == 0);
    CHECK(read_channels(w / "m.nii").size() == 6);
    REQUIRE(w.run("mind --image " + (w / "img.nii") + " --out " + (w / "m2.nii") + " --offsets '1,0,0;0,2,0'") == 0);
    CHECK(read_channels(w / "m2.nii").size() == 2);
}

TEST_CASE("metrics of a perfect match") {
    Workdir w;
    const GridGeometry g = cube(12);
    LabelVolume labels(g);
    for (int i = 2; i < 6; ++i)
        for (int j = 2; j < 9; ++j)
            for (int k = 3; k < 8; ++k) labels(i, j, k) = i < 4 ? 1 : 2;
    write_volume(labels, w / "l.nii");
    write_volume(VectorField(g), w / "zero.nii");
    LandmarkSet lm;
    lm.points = {{2.5, 3.0, 4.0}, {5.0, 5.0, 5.0}};
    lm.identifiers = {"p", "q"};
    write_json(to_json(lm), w / "lm.json");

    REQUIRE(w.run("metrics --labels-a " + (w / "l.nii") + " --labels-b " + (w / "l.nii") + " --field " +
                  (w / "zero.nii") + " --landmarks-a " + (w / "lm.json") + " --landmarks-b " + (w / "lm.json")) == 0);
    const Json m = Json::parse(w.text("stdout.txt"));
    CHECK(m["dice"]["mean"].get<double>() == 1.0);
    CHECK(m["hd95"]["mean"].get<double>() == 0.0);
    CHECK(m["tre"]["mean"].get<double>() == 0.0);
    CHECK(m["ndv"].get<double>() == 0.0);
    CHECK(m["dice"]["per_label"].size() == 2);
}

TEST_CASE("synth, register and metrics end to end") {
    Workdir w;
    {
        std::ofstream spec(w / "spec.json");
        spec << R"({"shape": [32, 32, 32], "contrast": {"mode": "inverted"}})";
        std::ofstream cfg(w / "config.json");
        cfg << R"({"iterations_per_level": 60, "final_phase_iterations": 20})";
    }
    REQUIRE(w.run("synth --spec " + (w / "spec.json") + " --out-dir " + (w / "case") + " --seed 3") == 0);
    for (const char* f : {"fixed.nii", "moving.nii", "labels_fixed.nii", "labels_moving.nii", "gt_field.nii",
                          "gt_forward.nii", "gt.json", "landmarks_fixed.json", "landmarks_moving.json", "case.json"})
        CHECK(fs::exists(w.path / "case" / f));

    REQUIRE(w.run("register --fixed " + (w / "case/fixed.nii") + " --moving " + (w / "case/moving.nii") +
                  " --config " + (w / "config.json") + " --out-field " + (w / "fwd.nii") + " --out-result " +
                  (w / "r.json")) == 0);
    const Json summary = Json::parse(w.text("stdout.txt"));
    CHECK(summary["ndv_forward"].get<double>() == 0.0);
    CHECK(summary["inverse_consistency"].get<double>() < 0.05);

    const std::string lm = " --landmarks-a " + (w / "case/landmarks_fixed.json") + " --landmarks-b " +
                           (w / "case/landmarks_moving.json");
    const std::string labels = " --labels-a " + (w / "case/labels_fixed.nii") + " --labels-b " +
                               (w / "case/labels_moving.nii");
    REQUIRE(w.run("metrics" + labels + lm) == 0);
    const Json before = Json::parse(w.text("stdout.txt"));
    REQUIRE(w.run("metrics" + labels + lm + " --field " + (w / "fwd.nii")) == 0);
    const Json after = Json::parse(w.text("stdout.txt"));
    MESSAGE("TRE " << before["tre"]["mean"] << " -> " << after["tre"]["mean"]);
    CHECK(after["tre"]["mean"].get<double>() < 1.0);
    CHECK(after["dice"]["mean"].get<double>() > before["dice"]["mean"].get<double>());

    // The ground-truth forward field recovers the landmarks almost exactly.
    REQUIRE(w.run("metrics" + labels + lm + " --field " + (w / "case/gt_forward.nii")) == 0);
    CHECK(Json::parse(w.text("stdout.txt"))["tre"]["mean"].get<double>() < 0.05);
}
