#include <doctest.h>

#include "fpvit/config.hpp"
#include "fpvit/error.hpp"

using namespace fpvit;

TEST_SUITE("config") {

TEST_CASE("parse sections, comments and overrides") {
    ConfigFile f = ConfigFile::parse_text(
        "# comment\n"
        "[model]\n"
        "patch_size = 16\n"
        "image_side=224\n"
        "\n"
        "[run]\n"
        "mode = vanilla\n");
    CHECK(f.get_int("model.patch_size", 0) == 16);
    CHECK(f.get_int("model.image_side", 0) == 224);
    CHECK(f.get_string("run.mode", "") == "vanilla");
    CHECK(f.get_int("model.missing", 7) == 7);

    f.set("model.patch_size", "8");  // flags win
    CHECK(f.get_int("model.patch_size", 0) == 8);
}

TEST_CASE("parse errors carry line numbers") {
    CHECK_THROWS_AS(ConfigFile::parse_text("[model\nkey = 1\n"), ParseError);
    CHECK_THROWS_AS(ConfigFile::parse_text("justtext\n"), ParseError);
    CHECK_THROWS_AS(ConfigFile::parse_text("= 3\n"), ParseError);
}

TEST_CASE("typed getter errors") {
    ConfigFile f = ConfigFile::parse_text("[a]\nx = hello\n");
    CHECK_THROWS_AS(f.get_int("a.x", 0), ConfigError);
    CHECK_THROWS_AS(f.get_double("a.x", 0.0), ConfigError);
}

TEST_CASE("echo round trip") {
    ConfigFile f = ConfigFile::parse_text("[b]\ny = 2\n[a]\nx = 1\n");
    ConfigFile back = ConfigFile::parse_text(f.echo());
    CHECK(back.get_int("a.x", 0) == 1);
    CHECK(back.get_int("b.y", 0) == 2);
}

TEST_CASE("run config applies file values and keeps defaults") {
    RunConfig rc;
    CHECK(rc.mode == "concat");
    CHECK(rc.image_side == 32);
    CHECK(rc.in_dim_per_token() == 8 * 8 * 3);

    ConfigFile f = ConfigFile::parse_text(
        "[run]\nmode = vanilla\nseed = 9\n"
        "[model]\nimage_side = 64\n"
        "[train]\nepochs = 3\n"
        "[protocol]\nfar_targets = 0.01,0.1\n");
    rc.apply(f);
    CHECK(rc.mode == "vanilla");
    CHECK(rc.seed == 9);
    CHECK(rc.image_side == 64);
    CHECK(rc.epochs == 3);
    CHECK(rc.patch_size == 8);  // untouched default
    REQUIRE(rc.far_targets.size() == 2);
    CHECK(rc.far_targets[0] == 0.01);
    CHECK(rc.in_dim_per_token() == 8 * 8 * 1);  // vanilla drops the map planes

    ConfigFile bad = ConfigFile::parse_text("[run]\nmode = both\n");
    RunConfig rc2;
    CHECK_THROWS_AS(rc2.apply(bad), ConfigError);
}

TEST_CASE("double list parsing") {
    auto v = parse_double_list("0.7,0.3");
    REQUIRE(v.size() == 2);
    CHECK(v[0] == 0.7);
    CHECK(v[1] == 0.3);
    CHECK_THROWS_AS(parse_double_list("a,b"), ConfigError);
    CHECK(parse_double_list("").empty());
}

TEST_CASE("run config echo parses back") {
    RunConfig rc;
    rc.mode = "vanilla";
    rc.epochs = 17;
    ConfigFile f = ConfigFile::parse_text(rc.echo());
    RunConfig back;
    back.apply(f);
    CHECK(back.mode == "vanilla");
    CHECK(back.epochs == 17);
    CHECK(back.far_targets == rc.far_targets);
}

}  // TEST_SUITE
