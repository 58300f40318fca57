#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <doctest.h>
#include <json.hpp>
#include <sys/wait.h>

#include "bido/dex.hpp"
#include "bido/image.hpp"
#include "bido/io.hpp"
#include "bido/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
    const fs::path out = fs::temp_directory_path() / "bido_cli_stdout.txt";
    const std::string cmd = env + " " + BIDO_CLI_PATH + " " + args + " > " + out.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

fs::path workdir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "bido_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("gen-corpus smoke and deterministic rerun") {
        const fs::path a = workdir() / "ca", b = workdir() / "cb";
        Run r = run("gen-corpus --out " + q(a) + " --n 4 --seed 3");
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j["n"] == 4);
        CHECK(j["malicious"].get<int>() + j["benign"].get<int>() == 4);
        REQUIRE(run("gen-corpus --out " + q(b) + " --n 4", "BIDO_SEED=3").code == 0);
        CHECK(bido::read_bytes(a / "manifest.jsonl") == bido::read_bytes(b / "manifest.jsonl"));
        CHECK(bido::read_bytes(a / "img/s000001.dex.png") == bido::read_bytes(b / "img/s000001.dex.png"));
    }

    TEST_CASE("convert writes a decodable PNG matching the packer") {
        const fs::path dir = workdir() / "conv";
        fs::create_directories(dir);
        bido::synth::SampleSpec spec;
        spec.seed = 4;
        spec.counts = {300, 20, 10, 20, 30, 10, 2, 1};
        const auto raw = bido::synth::build_synthetic_dex(spec);
        bido::write_bytes(dir / "a.dex", raw);
        Run r = run("convert " + q(dir / "a.dex") + " --kind dex -o " + q(dir / "a.png") + " --width 32 --height 16");
        REQUIRE(r.code == 0);
        const auto img = bido::image::decode_image(bido::read_bytes(dir / "a.png"));
        const auto idx = bido::dex::extract_index_bytes(raw, bido::dex::parse_header(raw)).bytes;
        CHECK(img.geometry == bido::image::ImageGeometry(32, 16));
        CHECK(img.channels == bido::image::pack_rgb(idx, bido::image::ImageGeometry(32, 16)).channels);
        CHECK(json::parse(r.out)["truncated"] == true);
        CHECK(run("convert " + q(dir / "a.dex") + " --kind dex --format jpeg -o " + q(dir / "a.jpg")).code == 0);
        CHECK(fs::file_size(dir / "a.jpg") > 0);
    }

    TEST_CASE("convert exit codes") {
        const fs::path dir = workdir() / "conv";
        fs::create_directories(dir);
        bido::write_text(dir / "bad.dex", std::string(200, 'x'));
        CHECK(run("convert " + q(dir / "bad.dex") + " --kind dex -o " + q(dir / "x.png")).code == 2);
        CHECK(run("convert " + q(dir / "missing.dex") + " --kind dex").code == 3);
        CHECK(run("convert " + q(dir / "bad.dex") + " --kind apk").code == 2);
        bido::write_text(dir / "m.xml", "<manifest/>");
        CHECK(run("convert " + q(dir / "m.xml") + " --kind xml -o " + q(dir / "m.png")).code == 0);
    }

    TEST_CASE("inspect reports builder header fields as JSON") {
        const fs::path dir = workdir() / "insp";
        fs::create_directories(dir);
        bido::synth::SampleSpec spec;
        spec.seed = 8;
        spec.counts = {12, 6, 3, 5, 9, 2, 0, 0};
        bido::synth::BuildRecord rec;
        bido::write_bytes(dir / "x.dex", bido::synth::build_synthetic_dex(spec, &rec));
        const Run r = run("inspect " + q(dir / "x.dex") + " --json");
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j["header"]["file_size"] == rec.header.file_size);
        CHECK(j["header"]["sections"]["method_ids"]["size"] == 9);
        CHECK(j["header"]["sections"]["class_defs"]["off"] == rec.header.class_defs.off);
        CHECK(j["index_bytes"] == rec.index_bytes.size());
        CHECK(j["spectrum"].size() == 256);
        CHECK(j["checksum_ok"] == true);
        bido::write_text(dir / "y.txt", "hello, not a dex file at all, but long enough to pass the size check......"
                                        "..........................................................");
        CHECK(run("inspect " + q(dir / "y.txt")).code == 2);
    }

    TEST_CASE("train smoke, eval, and an empty eval set") {
        const fs::path c = workdir() / "tc";
        REQUIRE(run("gen-corpus --out " + q(c) + " --n 30 --seed 2").code == 0);
        const Run t = run("train --corpus " + q(c) + " --out " + q(workdir() / "m.ckpt") + " --epochs 1 --seed 1");
        REQUIRE(t.code == 0);
        const json tj = json::parse(t.out);
        CHECK(tj["epochs"] == 1);
        CHECK(fs::exists(workdir() / "m.ckpt.json"));
        CHECK(fs::exists(workdir() / "m.ckpt.history.jsonl"));
        const Run t2 = run("train --corpus " + q(c) + " --out " + q(workdir() / "m2.ckpt") + " --epochs 1 --seed 1");
        CHECK(json::parse(t2.out)["fingerprint"] == tj["fingerprint"]);

        const Run e = run("eval --model " + q(workdir() / "m.ckpt") + " --corpus " + q(c) + " --split all");
        REQUIRE(e.code == 0);
        CHECK(json::parse(e.out)["n"] == 30);
        const Run eo = run("eval --model " + q(workdir() / "m.ckpt") + " --corpus " + q(c) + " --obfuscate 5");
        CHECK(eo.code == 0);

        const fs::path empty = workdir() / "empty";
        fs::create_directories(empty);
        bido::write_text(empty / "manifest.jsonl", "");
        CHECK(run("eval --model " + q(workdir() / "m.ckpt") + " --corpus " + q(empty)).code == 2);
        CHECK(run("eval --model " + q(workdir() / "nope.ckpt") + " --corpus " + q(c)).code == 3);
        CHECK(run("train --corpus " + q(workdir() / "nowhere") + " --out " + q(workdir() / "z.ckpt")).code == 3);
    }

    TEST_CASE("divergence exits with 4") {
        const fs::path c = workdir() / "tc";
        REQUIRE(fs::exists(c / "manifest.jsonl"));
        const Run r = run("train --corpus " + q(c) + " --out " + q(workdir() / "d.ckpt") +
                          " --epochs 3 --set lr=1e6 --set divergence_limit=50");
        CHECK(r.code == 4);
    }

    TEST_CASE("config file with flag overrides") {
        const fs::path recipe = workdir() / "r.cfg";
        bido::write_text(recipe, "epochs = 5\nk = 8\n");
        const Run r = run("config --config " + q(recipe) + " --set k=4");
        REQUIRE(r.code == 0);
        CHECK(r.out.find("epochs = 5") != std::string::npos);
        CHECK(r.out.find("k = 4") != std::string::npos);
        CHECK(run("config --set nope=1").code == 2);
        CHECK(run("config --config " + q(workdir() / "absent.cfg")).code == 3);
        CHECK(run("frobnicate").code == 2);
    }

    TEST_CASE("k-sweep and fusion harness emit their report schema") {
        const fs::path c = workdir() / "tc";
        const Run k = run("k-sweep --corpus " + q(c) + " --ks 2,4 --epochs 1");
        REQUIRE(k.code == 0);
        const json kj = json::parse(k.out);
        REQUIRE(kj["rows"].size() == 2);
        CHECK(kj["rows"][1]["k"] == 4);
        CHECK(kj["rows"][0].contains("metrics"));
        const Run f = run("compare-fusion --corpus " + q(c) + " --seeds 1 --epochs 1");
        REQUIRE(f.code == 0);
        const json fj = json::parse(f.out);
        CHECK(fj["fusion"].contains("ops"));
        CHECK(fj["fusion"].contains("sum"));
        CHECK(fj["fusion"].contains("concat"));
    }
}
