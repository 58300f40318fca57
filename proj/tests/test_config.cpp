#include <filesystem>
#include <string>

#include <doctest.h>

#include "bido/config.hpp"
#include "bido/error.hpp"
#include "bido/io.hpp"

using namespace bido;

TEST_SUITE("config") {
    TEST_CASE("defaults mirror the library defaults") {
        const CliConfig c;
        CHECK(c.get("batch_size") == "8");
        CHECK(c.get("lr") == "0.001");
        CHECK(c.get("momentum") == "0.9");
        CHECK(c.get("alpha") == "1");
        CHECK(c.get("gamma") == "0.1");
        CHECK(c.get("k") == "32");
        CHECK(c.get("image.width") == "64");
        CHECK(c.get("corpus.n") == "1000");
        CHECK(c.get("fusion") == "ops");
        CHECK(c.get("backbone.stages") == "2x2x8,2x2x16,2x2x32");
    }

    TEST_CASE("every key survives dump and parse") {
        CliConfig c;
        c.set("epochs", "7");
        c.set("variant", "dex-only");
        c.set("fusion", "concat");
        c.set("dex_mlp_hidden", "16,8");
        c.set("backbone.stages", "4x4x4,2x2x8");
        c.set("corpus.transforms", "junk:0.25:3,realign:8");
        c.set("corpus.drift", "1.5");
        c.set("use_metric", "false");
        const CliConfig back = CliConfig::parse(c.dump());
        for (const std::string& k : CliConfig::keys()) CHECK(back.get(k) == c.get(k));
        CHECK(back.train.model.dex_mlp_hidden == std::vector<std::size_t>{16, 8});
        CHECK(back.corpus.transforms.size() == 2);
        CHECK_FALSE(back.train.model.use_metric);
    }

    TEST_CASE("geometry keys drive both the corpus and the backbone") {
        CliConfig c;
        c.set("image.width", "32");
        CHECK(c.train.model.backbone.input_width == 32);
        CHECK(c.corpus.dex_width == 32);
        CHECK(c.corpus.xml_width == 32);
    }

    TEST_CASE("comments, blanks and whitespace") {
        const CliConfig c = CliConfig::parse("# recipe\n\n  epochs = 3   # short\nseed=9\n");
        CHECK(c.train.epochs == 3);
        CHECK(c.train.seed == 9);
    }

    TEST_CASE("rejections") {
        auto code = [](const std::string& text) {
            try {
                CliConfig::parse(text);
            } catch (const Error& e) {
                return e.code();
            }
            return ErrorCode::TooShort;
        };
        CHECK(code("nonsense = 1") == ErrorCode::BadConfig);
        CHECK(code("epochs") == ErrorCode::BadConfig);
        CHECK(code("epochs = many") == ErrorCode::BadConfig);
        CHECK(code("epochs = -2") == ErrorCode::BadConfig);
        CHECK(code("lr = 0.1x") == ErrorCode::BadConfig);
        CHECK(code("variant = both") == ErrorCode::BadConfig);
        CHECK(code("use_metric = maybe") == ErrorCode::BadConfig);
        try {
            CliConfig::load("/nonexistent/recipe.cfg");
            FAIL("expected IoFailure");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::IoFailure);
        }
    }

    TEST_CASE("load reads a file") {
        const auto p = std::filesystem::temp_directory_path() / "bido_test_recipe.cfg";
        write_text(p, "epochs = 11\ncorpus.n = 50\n");
        const CliConfig c = CliConfig::load(p);
        CHECK(c.train.epochs == 11);
        CHECK(c.corpus.n == 50);
        std::filesystem::remove(p);
    }
}
