#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "fpvit/error.hpp"
#include "fpvit/image.hpp"
#include "fpvit/rng.hpp"

using namespace fpvit;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// Independent per-pixel bilinear formula (half-pixel centers, edge clamp).
double bilinear_ref(const Image& img, double sx, double sy) {
    auto clamp = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    double fx = sx - x0, fy = sy - y0;
    double v00 = img.at(clamp(y0, img.height - 1), clamp(x0, img.width - 1));
    double v01 = img.at(clamp(y0, img.height - 1), clamp(x0 + 1, img.width - 1));
    double v10 = img.at(clamp(y0 + 1, img.height - 1), clamp(x0, img.width - 1));
    double v11 = img.at(clamp(y0 + 1, img.height - 1), clamp(x0 + 1, img.width - 1));
    return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}

}  // namespace

TEST_SUITE("image") {

TEST_CASE("pgm round trip") {
    Image img(9, 5);
    Rng rng(1);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    std::string path = temp_path("fpvit_test_img.pgm");
    write_pgm(img, path);
    Image back = read_pgm(path);
    REQUIRE(back.width == 9);
    REQUIRE(back.height == 5);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(std::fabs(back.pixels[i] - img.pixels[i]) <= 0.5f / 255.0f + 1e-6f);
    std::remove(path.c_str());
}

TEST_CASE("pgm rejects bad magic and truncation") {
    std::string path = temp_path("fpvit_test_bad.pgm");
    {
        std::ofstream out(path, std::ios::binary);
        out << "P2\n2 2\n255\n0 0 0 0\n";
    }
    CHECK_THROWS_AS(read_pgm(path), FormatError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n4 4\n255\n";
        out.write("\x10\x10", 2);  // 2 of 16 bytes
    }
    CHECK_THROWS_AS(read_pgm(path), FormatError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_pgm(path), IoError);
}

TEST_CASE("same-size resize is identity") {
    Image img(7, 7);
    Rng rng(2);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    Image out = resize_bilinear(img, 7, 7);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(out.pixels[i] == img.pixels[i]);
}

TEST_CASE("resize of a constant image is constant") {
    Image img(448, 448, 128.0f / 255.0f);
    Image out = resize_bilinear(img, 224, 224);
    REQUIRE(out.width == 224);
    for (float v : out.pixels) CHECK(v == doctest::Approx(128.0f / 255.0f).epsilon(1e-6));
}

TEST_CASE("resize matches the brute-force bilinear oracle") {
    // checkerboard-ish content upscaled then downscaled
    Image img(2, 2);
    img.at(0, 0) = 1.0f;
    img.at(0, 1) = 0.0f;
    img.at(1, 0) = 0.0f;
    img.at(1, 1) = 1.0f;
    Image up = resize_bilinear(img, 16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            double sy = (y + 0.5) * (2.0 / 16.0) - 0.5;
            double sx = (x + 0.5) * (2.0 / 16.0) - 0.5;
            CHECK(std::fabs(up.at(y, x) - bilinear_ref(img, sx, sy)) <= 1e-6);
        }
    Image down = resize_bilinear(up, 3, 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 3; ++x) {
            double sy = (y + 0.5) * (16.0 / 5.0) - 0.5;
            double sx = (x + 0.5) * (16.0 / 3.0) - 0.5;
            CHECK(std::fabs(down.at(y, x) - bilinear_ref(up, sx, sy)) <= 1e-6);
        }

    Image random_img(13, 9);
    Rng rng(3);
    for (auto& p : random_img.pixels) p = static_cast<float>(rng.uniform());
    Image out = resize_bilinear(random_img, 6, 20);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 6; ++x) {
            double sy = (y + 0.5) * (9.0 / 20.0) - 0.5;
            double sx = (x + 0.5) * (13.0 / 6.0) - 0.5;
            CHECK(std::fabs(out.at(y, x) - bilinear_ref(random_img, sx, sy)) <= 1e-6);
        }
}

TEST_CASE("preprocess contracts") {
    Image constant(448, 448, 128.0f / 255.0f);
    Image out = preprocess(constant, 224);
    REQUIRE(out.width == 224);
    REQUIRE(out.height == 224);
    for (float v : out.pixels) CHECK(v == 0.5f);  // degenerate contrast maps to mid-gray

    Image img(64, 48);
    Rng rng(4);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    Image norm = preprocess(img, 32);
    float lo = 1e9f, hi = -1e9f;
    for (float v : norm.pixels) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo == doctest::Approx(0.0f));
    CHECK(hi == doctest::Approx(1.0f));

    Image empty;
    CHECK_THROWS_AS(preprocess(empty, 224), ValidationError);
}

}  // TEST_SUITE
