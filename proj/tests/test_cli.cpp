#include "doctest.h"
#include "support.h"

#include "mmreg/cli.h"
#include "mmreg/eval.h"
#include "mmreg/mha_io.h"

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace mmreg;

namespace {

struct Run
{
    int code = -1;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args)
{
    args.insert(args.begin(), "mmreg");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    std::ostringstream out, err;
    Run r;
    r.code = cli_main(static_cast<int>(args.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int count_lines(const std::string& s)
{
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

/// Writes a 24^3 phantom pair into the temp dir once.
const std::string& phantom_dir()
{
    static const std::string dir = [] {
        const std::string d = test::temp_path("cli_phantom");
        const Run r = run({"phantom", "--spec", "dims=24x24x24 blobs=16 deformation=sinusoidal(2,16) remap=inverted_bands(4)",
                           "--out-dir", d, "--manifest", test::temp_path("phantom.manifest")});
        REQUIRE(r.code == 0);
        return d;
    }();
    return dir;
}

} // namespace

TEST_CASE("help output matches the snapshots")
{
    const bool update = std::getenv("MMREG_UPDATE_SNAPSHOTS") != nullptr;
    for (std::string sub : {"", "register", "rigid", "warp", "dice", "volumes", "mind", "similarity", "stitch", "phantom",
                            "gridsearch"}) {
        CAPTURE(sub);
        const Run r = sub.empty() ? run({"--help"}) : run({sub, "--help"});
        CHECK(r.code == 0);
        const std::string path = std::string(MMREG_SNAPSHOT_DIR) + "/help_" + (sub.empty() ? "main" : sub) + ".txt";
        if (update) {
            std::ofstream(path, std::ios::binary) << r.out;
            continue;
        }
        CHECK(r.out == slurp(path));
    }
}

TEST_CASE("every register flag shows its default")
{
    const Run r = run({"register", "--help"});
    for (const char* flag : {"--beta FLOAT [0.8]", "--scale TEXT [grad]", "--measure TEXT [nmi]", "--levels INT [3]",
                             "--max-iters INT [100]"}) {
        CAPTURE(flag);
        CHECK(r.out.find(flag) != std::string::npos);
    }
}

TEST_CASE("version and exit codes")
{
    CHECK(run({"--version"}).out.find(tool_version) != std::string::npos);
    CHECK(run({}).code == 1);
    const Run unknown = run({"dice", "--a", "x", "--b", "y", "--frobnicate"});
    CHECK(unknown.code == 1);
    CHECK(unknown.err.find("--frobnicate") != std::string::npos);
    CHECK(run({"register", "--fixed", "a.mha"}).code == 1); // missing --moving
    CHECK(run({"register", "--fixed", "a", "--moving", "b", "--measure", "mattes"}).code == 1);
    CHECK(run({"register", "--fixed", "a", "--moving", "b", "--scale", "sideways"}).code == 1);
    CHECK(run({"stitch", "--input", "a", "--out", "b", "--tile", "16x16"}).code == 1);
    const Run missing = run({"dice", "--a", "/nonexistent/a.mha", "--b", "/nonexistent/b.mha"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("dice: error:") != std::string::npos);
}

TEST_CASE("dice of a label map with itself")
{
    const std::string labels = phantom_dir() + "/labels_a.mha";
    const Run r = run({"dice", "--a", labels, "--b", labels, "--manifest", test::temp_path("dice.manifest")});
    CHECK(r.code == 0);
    CHECK(r.out.find("mean Dice 1.000") != std::string::npos);
}

TEST_CASE("phantom writes its outputs")
{
    const std::string d = phantom_dir();
    for (const char* f : {"volume_a.mha", "volume_b.mha", "labels_a.mha", "labels_b.mha", "truth_field.mha", "spec.txt"}) {
        CAPTURE(f);
        CHECK(std::filesystem::exists(d + "/" + f));
    }
    CHECK(slurp(d + "/spec.txt").find("remap=inverted_bands(4)") != std::string::npos);
    CHECK(load_mha_volume(d + "/volume_a.mha").dims == Dims{24, 24, 24});
}

TEST_CASE("register reports scale and cost traces, and warp applies the field")
{
    const std::string d = phantom_dir();
    const std::string field = test::temp_path("cli_field.mha"), warped = test::temp_path("cli_labels_warped.mha");
    const Run r = run({"register", "--fixed", d + "/volume_b.mha", "--moving", d + "/volume_a.mha", "--measure", "nmi+mind",
                       "--beta", "0.8", "--scale", "grad", "--lambda", "1e-5", "--spacing", "4", "--levels", "2",
                       "--max-iters", "15", "--out-field", field, "--manifest", test::temp_path("register.manifest")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("measure=nmi+mind") != std::string::npos);
    CHECK(r.out.find("scale_strategy=initial_gradient") != std::string::npos);
    CHECK(r.out.find("level.0.scale=") != std::string::npos);
    CHECK(r.out.find("level.1.cost_trace=") != std::string::npos);

    const Run w = run({"warp", "--moving", d + "/labels_a.mha", "--field", field, "--out", warped, "--nearest",
                       "--manifest", test::temp_path("warp.manifest")});
    REQUIRE(w.code == 0);
    const double before = dice(load_mha_labels(d + "/labels_b.mha"), load_mha_labels(d + "/labels_a.mha")).mean;
    const double after = dice(load_mha_labels(d + "/labels_b.mha"), load_mha_labels(warped)).mean;
    CHECK(after > before);
}

TEST_CASE("a manifest reproduces its run bit-exactly")
{
    const std::string d = phantom_dir();
    const std::string manifest = test::temp_path("repro.manifest"), f1 = test::temp_path("repro_field.mha");
    const Run first = run({"register", "--fixed", d + "/volume_b.mha", "--moving", d + "/volume_a.mha", "--measure", "lncc",
                           "--lambda", "1e-5", "--spacing", "4", "--levels", "2", "--max-iters", "10", "--out-field", f1,
                           "--manifest", manifest});
    REQUIRE(first.code == 0);
    const std::string bytes = slurp(f1);
    const std::string text = slurp(manifest);
    CHECK(text.find("[register]") != std::string::npos);
    CHECK(text.find("lambda=") != std::string::npos);
    std::filesystem::remove(f1);

    const Run again = run({"--config", manifest, "--manifest", test::temp_path("repro2.manifest")});
    REQUIRE(again.code == 0);
    CHECK(slurp(f1) == bytes);
}

TEST_CASE("similarity, mind and stitch subcommands")
{
    const std::string d = phantom_dir();
    const Run s = run({"similarity", "--fixed", d + "/volume_a.mha", "--moving", d + "/volume_a.mha", "--measure", "nmi",
                       "--manifest", test::temp_path("sim.manifest")});
    REQUIRE(s.code == 0);
    CHECK(s.out.find("value=-2") != std::string::npos);

    const Run m = run({"mind", "--input", d + "/volume_a.mha", "--out", test::temp_path("cli_mind.mha"), "--manifest",
                       test::temp_path("mind.manifest")});
    REQUIRE(m.code == 0);
    CHECK(read_mha(test::temp_path("cli_mind.mha")).channels == 6);

    const std::string out = test::temp_path("cli_stitched.mha");
    const Run st = run({"stitch", "--input", d + "/volume_a.mha", "--out", out, "--tile", "16x16x12", "--stride", "4x4x4",
                        "--mapper", "affine:1,10", "--manifest", test::temp_path("stitch.manifest")});
    REQUIRE(st.code == 0);
    CHECK(st.out.find("tiles=") != std::string::npos);
    const Volume a = load_mha_volume(d + "/volume_a.mha"), b = load_mha_volume(out);
    CHECK(b.data[100] == doctest::Approx(a.data[100] + 10).epsilon(1e-6));
}

TEST_CASE("gridsearch over the published lists writes 75 rows")
{
    const std::string d = phantom_dir();
    const std::string csv = test::temp_path("grid.csv");
    const Run r = run({"gridsearch", "--fixed", d + "/volume_b.mha", "--moving", d + "/volume_a.mha", "--measure", "nmi",
                       "--max-iters", "0", "--out", csv, "--manifest", test::temp_path("grid.manifest")});
    REQUIRE(r.code == 0);
    CHECK(count_lines(slurp(csv)) == 76); // header + 75 cells
}
