#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <Eigen/Dense>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "stainkit/dataio.hpp"
#include "stainkit/image.hpp"
#include "synthetic.hpp"

// End-to-end tests against the installed binary (path injected by the
// build as STAINKIT_CLI).

#ifndef STAINKIT_CLI
#error "STAINKIT_CLI must point at the built binary"
#endif

using namespace stainkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("stainkit_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter++));
        fs::create_directories(path);
    }
    TempDir(TempDir&& other) noexcept : path(std::move(other.path)) { other.path.clear(); }
    TempDir(const TempDir&) = delete;
    ~TempDir() {
        if (!path.empty()) fs::remove_all(path);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static inline int counter = 0;
};

struct Cmd {
    int exit_code;
    std::string out;  // stdout only
};

Cmd run(const std::string& args) {
    static int counter = 0;
    fs::path capture = fs::temp_directory_path() /
                       ("stainkit_stdout_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++) + ".txt");
    std::string full = std::string(STAINKIT_CLI) + " " + args + " > " + capture.string() +
                       " 2> /dev/null";
    int raw = std::system(full.c_str());
    int code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(capture);
    std::string out((std::istreambuf_iterator<char>(in)), {});
    fs::remove(capture);
    return {code, out};
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Relative name -> content for every regular file under root.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
        if (entry.is_regular_file())
            files[fs::relative(entry.path(), root).string()] = read_bytes(entry.path().string());
    return files;
}

RgbImage white_image(int w, int h) {
    RgbImage img(w, h);
    std::fill(img.data.begin(), img.data.end(), std::uint8_t{255});
    return img;
}

void write_manifest_csv(const std::string& path,
                        const std::vector<std::array<std::string, 4>>& rows) {
    std::ofstream out(path);
    out << "id,image_path,mask_path,scanner\n";
    for (const auto& r : rows) out << r[0] << "," << r[1] << "," << r[2] << "," << r[3] << "\n";
}

SegMask mask_with(int w, int h, const std::vector<int>& positives) {
    SegMask m(w, h);
    for (int i : positives) m.values[static_cast<std::size_t>(i)] = 1;
    return m;
}

std::vector<int> iota_range(int first, int last) {  // inclusive
    std::vector<int> v;
    for (int i = first; i <= last; ++i) v.push_back(i);
    return v;
}

}  // namespace

TEST_CASE("separate recovers a constructed basis and writes density maps") {
    TempDir dir;
    testutil::SyntheticPatch patch = testutil::make_patch(3);
    dataio::write_image(patch.rgb, dir.file("p.png"));

    Cmd res = run("--seed 5 --output " + dir.file("sep") + " separate " + dir.file("p.png") +
                  " --sparsity 0");
    CHECK(res.exit_code == 0);

    nlohmann::json j = nlohmann::json::parse(read_bytes(dir.file("sep/stains.json")));
    REQUIRE(j["r"] == 2);
    REQUIRE(j["m"] == 3);
    Eigen::MatrixXd w(3, 2);
    for (int col = 0; col < 2; ++col)
        for (int row = 0; row < 3; ++row) w(row, col) = j["columns"][col * 3 + row];
    CHECK(testutil::recovery_cosine(w, patch.w_true) >= 0.99);
    CHECK(j["density_scale"].size() == 2);
    CHECK(j.contains("iterations"));

    CHECK(fs::exists(dir.file("sep/density_0.png")));
    CHECK(fs::exists(dir.file("sep/density_1.png")));
    RgbImage d0 = dataio::read_image(dir.file("sep/density_0.png"));
    CHECK(d0.width == patch.rgb.width);
    CHECK(d0.height == patch.rgb.height);
}

TEST_CASE("separate error paths") {
    TempDir dir;
    dataio::write_image(white_image(16, 16), dir.file("blank.png"));
    CHECK(run("--output " + dir.file("o1") + " separate " + dir.file("blank.png")).exit_code == 2);
    CHECK(run("--output " + dir.file("o2") + " separate " + dir.file("nope.png")).exit_code == 1);
}

TEST_CASE("normalize to own profile is near identity") {
    TempDir dir;
    testutil::SyntheticPatch patch = testutil::make_patch(11);
    dataio::write_image(patch.rgb, dir.file("p.png"));
    REQUIRE(run("--output " + dir.file("sep") + " separate " + dir.file("p.png") +
                " --sparsity 0").exit_code == 0);

    Cmd res = run("--output " + dir.file("norm") + " normalize " + dir.file("p.png") +
                  " --target " + dir.file("sep/stains.json") + " --sparsity 0");
    CHECK(res.exit_code == 0);

    RgbImage out = dataio::read_image(dir.file("norm/p.png"));
    REQUIRE(out.width == patch.rgb.width);
    double sum_abs = 0.0;
    int max_abs = 0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        int d = std::abs(int(out.data[i]) - int(patch.rgb.data[i]));
        sum_abs += d;
        max_abs = std::max(max_abs, d);
    }
    CHECK(sum_abs / double(out.data.size()) <= 1.0);
    CHECK(max_abs <= 3);
}

TEST_CASE("normalize manifest handling and per-image failures") {
    TempDir dir;
    testutil::SyntheticPatch patch = testutil::make_patch(12);
    dataio::write_image(patch.rgb, dir.file("a.png"));
    dataio::write_image(testutil::make_patch(13).rgb, dir.file("b.png"));
    dataio::write_image(white_image(16, 16), dir.file("blank.png"));
    REQUIRE(run("--output " + dir.file("sep") + " separate " + dir.file("a.png") +
                " --sparsity 0").exit_code == 0);
    std::string target = " --target " + dir.file("sep/stains.json");

    write_manifest_csv(dir.file("empty.csv"), {});
    CHECK(run("--output " + dir.file("o1") + " normalize --manifest " + dir.file("empty.csv") +
              target).exit_code == 2);

    write_manifest_csv(dir.file("three.csv"), {{"a", "a.png", "", "s"},
                                               {"b", "b.png", "", "s"},
                                               {"blank", "blank.png", "", "s"}});
    Cmd res = run("--output " + dir.file("o2") + " normalize --manifest " + dir.file("three.csv") +
                  target);
    CHECK(res.exit_code == 0);
    CHECK(fs::exists(dir.file("o2/a.png")));
    CHECK(fs::exists(dir.file("o2/b.png")));
    CHECK_FALSE(fs::exists(dir.file("o2/blank.png")));

    nlohmann::json summary = nlohmann::json::parse(read_bytes(dir.file("o2/normalize_summary.json")));
    int failed = 0;
    for (const auto& row : summary)
        if (row["status"] == "failed") ++failed;
    CHECK(summary.size() == 3);
    CHECK(failed == 1);
}

TEST_CASE("augment identity policy copies inputs byte for byte") {
    TempDir dir;
    testutil::SyntheticPatch patch = testutil::make_patch(20);
    SegMask mask = mask_with(16, 16, iota_range(0, 30));
    dataio::write_image(patch.rgb, dir.file("a.png"));
    dataio::write_mask(mask, dir.file("a_mask.png"));
    write_manifest_csv(dir.file("m.csv"), {{"a", "a.png", "a_mask.png", "s"}});

    Cmd res = run("--seed 9 --output " + dir.file("out") + " augment --manifest " +
                  dir.file("m.csv") + " --policy 0 0 --n 1");
    CHECK(res.exit_code == 0);
    CHECK(read_bytes(dir.file("out/a_v0.png")) == read_bytes(dir.file("a.png")));
    CHECK(read_bytes(dir.file("out/a_v0_mask.png")) == read_bytes(dir.file("a_mask.png")));

    std::istringstream provenance(read_bytes(dir.file("out/provenance.csv")));
    std::string line;
    std::getline(provenance, line);
    CHECK(line == "id,variant,branch,seed");
    std::getline(provenance, line);
    CHECK(line.rfind("a,0,identity,", 0) == 0);
}

TEST_CASE("augment same seed gives byte-identical trees") {
    TempDir dir;
    dataio::write_image(testutil::make_patch(21).rgb, dir.file("a.png"));
    dataio::write_image(testutil::make_patch(22).rgb, dir.file("b.png"));
    write_manifest_csv(dir.file("m.csv"), {{"a", "a.png", "", "s"}, {"b", "b.png", "", "s"}});
    REQUIRE(run("--output " + dir.path.string() + " fit-prior --manifest " +
                dir.file("m.csv")).exit_code == 0);

    std::string args = " augment --manifest " + dir.file("m.csv") + " --prior " +
                       dir.file("prior.json") + " --policy 0.25 0.25 --n 3 --max-iters 40";
    CHECK(run("--seed 77 --output " + dir.file("t1") + args).exit_code == 0);
    CHECK(run("--seed 77 --output " + dir.file("t2") + args).exit_code == 0);
    CHECK(tree_bytes(dir.file("t1")) == tree_bytes(dir.file("t2")));
    CHECK(tree_bytes(dir.file("t1")).size() == 7);  // 6 images + provenance

    // prior is mandatory when the RandStainNA branch is reachable
    CHECK(run("--output " + dir.file("t3") + " augment --manifest " + dir.file("m.csv") +
              " --policy 0.25 0.25").exit_code == 2);
}

TEST_CASE("fit-prior on an identical corpus has zero spread") {
    TempDir dir;
    dataio::write_image(testutil::make_patch(30).rgb, dir.file("a.png"));
    dataio::write_image(testutil::make_patch(30).rgb, dir.file("b.png"));
    write_manifest_csv(dir.file("m.csv"), {{"a", "a.png", "", "s"}, {"b", "b.png", "", "s"}});
    REQUIRE(run("--output " + dir.path.string() + " fit-prior --manifest " +
                dir.file("m.csv")).exit_code == 0);

    nlohmann::json prior = nlohmann::json::parse(read_bytes(dir.file("prior.json")));
    CHECK(prior["n_images"] == 2);
    for (const char* ch : {"L", "a", "b"}) {
        CHECK(std::abs(prior[ch]["sigma_mean"].get<double>()) <= 1e-9);
        CHECK(std::abs(prior[ch]["sigma_std"].get<double>()) <= 1e-9);
    }
}

TEST_CASE("evaluate perfect predictions") {
    TempDir dir;
    SegMask mask = mask_with(8, 8, iota_range(0, 20));
    dataio::write_mask(mask, dir.file("m.png"));
    write_manifest_csv(dir.file("eval.csv"), {{"a", "m.png", "m.png", "s"}});
    Cmd res = run("--output " + dir.file("out") + " evaluate --manifest " + dir.file("eval.csv"));
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("cosas=1.000 dice=1.000 iou=1.000") != std::string::npos);
}

TEST_CASE("evaluate reproduces the headline aggregate") {
    // Two frozen pairs: (|P∩G|, |P|, |G|) = (9, 11, 11) and (144, 150, 151).
    // Mean dice 0.8875, mean iou 0.8048 -> printed 0.846 overall.
    TempDir dir;
    auto gt_a = mask_with(16, 16, iota_range(0, 10));
    auto pred_a = mask_with(16, 16, [] {
        std::vector<int> v = iota_range(0, 8);
        v.push_back(50);
        v.push_back(51);
        return v;
    }());
    auto gt_b = mask_with(16, 16, iota_range(0, 150));
    auto pred_b = mask_with(16, 16, [] {
        std::vector<int> v = iota_range(0, 143);
        for (int i = 200; i < 206; ++i) v.push_back(i);
        return v;
    }());
    dataio::write_mask(gt_a, dir.file("gt_a.png"));
    dataio::write_mask(pred_a, dir.file("pred_a.png"));
    dataio::write_mask(gt_b, dir.file("gt_b.png"));
    dataio::write_mask(pred_b, dir.file("pred_b.png"));
    write_manifest_csv(dir.file("eval.csv"), {{"a", "pred_a.png", "gt_a.png", "s"},
                                              {"b", "pred_b.png", "gt_b.png", "s"}});

    Cmd res = run("--output " + dir.file("out") + " evaluate --manifest " + dir.file("eval.csv"));
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("cosas=0.846 dice=0.887 iou=0.805") != std::string::npos);
}

TEST_CASE("evaluate scores valid pairs despite a broken one") {
    TempDir dir;
    SegMask good = mask_with(8, 8, iota_range(0, 20));
    SegMask small = mask_with(4, 4, {0, 1});
    dataio::write_mask(good, dir.file("g.png"));
    dataio::write_mask(small, dir.file("s.png"));
    write_manifest_csv(dir.file("eval.csv"), {{"ok", "g.png", "g.png", "s"},
                                              {"bad", "s.png", "g.png", "s"},
                                              {"gone", "missing.png", "g.png", "s"}});
    Cmd res = run("--output " + dir.file("out") + " evaluate --manifest " + dir.file("eval.csv"));
    CHECK(res.exit_code == 0);
    CHECK(res.out.find("cosas=1.000") != std::string::npos);

    nlohmann::json report = nlohmann::json::parse(read_bytes(dir.file("out/report.json")));
    int errors = 0;
    for (const auto& row : report["per_image"])
        if (row.contains("error")) ++errors;
    CHECK(errors == 2);
    CHECK(report["overall"]["count"] == 1);
    CHECK(fs::exists(dir.file("out/report.csv")));
}

namespace {

// image + mask manifest shared by the train-toy cases
TempDir make_train_fixture() {
    TempDir dir;
    testutil::SyntheticPatch patch = testutil::make_patch(40);
    SegMask mask(16, 16);
    for (int p = 0; p < 256; ++p)
        mask.values[static_cast<std::size_t>(p)] = patch.h_true(0, p) > 0.4 ? 1 : 0;
    dataio::write_image(patch.rgb, dir.file("a.png"));
    dataio::write_mask(mask, dir.file("a_mask.png"));
    write_manifest_csv(dir.file("m.csv"), {{"a", "a.png", "a_mask.png", "s"}});
    return dir;
}

std::vector<std::array<double, 4>> parse_trace(const std::string& path) {
    std::istringstream in(read_bytes(path));
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "step,recon,seg,total");
    std::vector<std::array<double, 4>> rows;
    while (std::getline(in, line)) {
        std::array<double, 4> row{};
        std::istringstream fields(line);
        std::string field;
        for (int i = 0; i < 4; ++i) {
            REQUIRE(std::getline(fields, field, ','));
            row[static_cast<std::size_t>(i)] = std::stod(field);
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("train-toy trace contracts") {
    TempDir dir = make_train_fixture();

    // lr = 0: flat trace
    REQUIRE(run("--output " + dir.file("frozen") + " train-toy --manifest " + dir.file("m.csv") +
                " --lr 0 --steps 10").exit_code == 0);
    auto frozen = parse_trace(dir.file("frozen/trace.csv"));
    REQUIRE(frozen.size() == 10);
    for (const auto& row : frozen) CHECK(row[3] == frozen[0][3]);

    // alpha = 0: total column equals seg column in every row
    REQUIRE(run("--output " + dir.file("segonly") + " train-toy --manifest " + dir.file("m.csv") +
                " --alpha 0 --lr 0.05 --steps 20").exit_code == 0);
    for (const auto& row : parse_trace(dir.file("segonly/trace.csv"))) CHECK(row[3] == row[2]);

    CHECK(fs::exists(dir.file("segonly/params.json")));
}

TEST_CASE("gradcheck passes at the default seed") {
    Cmd res = run("gradcheck");
    CHECK(res.exit_code == 0);
    REQUIRE(res.out.rfind("max_relative_error=", 0) == 0);
    CHECK(std::stod(res.out.substr(std::string("max_relative_error=").size())) < 1e-5);
}

TEST_CASE("split-folds balance, determinism and errors") {
    TempDir dir;
    std::vector<std::array<std::string, 4>> rows;
    for (int i = 0; i < 8; ++i)
        rows.push_back({"id" + std::to_string(i), "x.png", "", i < 4 ? "s1" : "s2"});
    write_manifest_csv(dir.file("m.csv"), rows);

    REQUIRE(run("--seed 3 --output " + dir.file("f1") + " split-folds --manifest " +
                dir.file("m.csv") + " --k 4").exit_code == 0);
    nlohmann::json folds = nlohmann::json::parse(read_bytes(dir.file("f1/folds.json")));
    CHECK(folds["k"] == 4);
    std::map<std::pair<std::string, int>, int> counts;
    for (int i = 0; i < 8; ++i) {
        std::string id = "id" + std::to_string(i);
        counts[{i < 4 ? "s1" : "s2", folds["assignments"][id].get<int>()}]++;
    }
    CHECK(counts.size() == 8);  // every (scanner, fold) cell hit exactly once

    REQUIRE(run("--seed 3 --output " + dir.file("f2") + " split-folds --manifest " +
                dir.file("m.csv") + " --k 4").exit_code == 0);
    CHECK(read_bytes(dir.file("f1/folds.json")) == read_bytes(dir.file("f2/folds.json")));

    CHECK(run("--output " + dir.file("f3") + " split-folds --manifest " + dir.file("m.csv") +
              " --k 1").exit_code == 2);
}
