#include <doctest.h>

#include <cstring>

#include "fpvit/error.hpp"
#include "fpvit/rng.hpp"
#include "fpvit/tokenizer.hpp"

using namespace fpvit;

namespace {

Image random_image(Rng& rng, int w, int h) {
    Image img(w, h);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    return img;
}

MinutiaeMap random_map(Rng& rng, int side, int channels) {
    MinutiaeMap map(side, side, channels);
    for (auto& v : map.data) v = static_cast<float>(rng.uniform());
    return map;
}

}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("default geometry: 196 tokens of 768, image-only 256") {
    Rng rng(1);
    Image img = random_image(rng, 224, 224);
    MinutiaeMap map = random_map(rng, 224, 2);
    TokenSequence seq = tokenize(img, map, 16);
    CHECK(seq.num_tokens == 196);
    CHECK(seq.token_dim == 768);

    TokenSequence vanilla = tokenize(img, MinutiaeMap::none(224, 224), 16);
    CHECK(vanilla.num_tokens == 196);
    CHECK(vanilla.token_dim == 256);
}

TEST_CASE("all-zero input gives all-zero tokens") {
    Image img(32, 32);
    MinutiaeMap map(32, 32, 2);
    TokenSequence seq = tokenize(img, map, 8);
    for (float v : seq.data) CHECK(v == 0.0f);
}

TEST_CASE("index arithmetic brute-force oracle") {
    // Every pixel lands in token (y/n)*(side/n) + x/n at plane offset
    // (y%n)*n + x%n; checked for every pixel against unique pixel values.
    const int side = 224, n = 16, grid = side / n;
    Image img(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) img.at(y, x) = static_cast<float>(y * side + x);
    TokenSequence seq = tokenize(img, MinutiaeMap::none(side, side), n);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            int token = (y / n) * grid + (x / n);
            int offset = (y % n) * n + (x % n);
            CHECK(seq.at(token, offset) == static_cast<float>(y * side + x));
        }
    }
    // the spec's worked instance: pixel (row 17, col 3)
    CHECK(seq.at(14, 19) == static_cast<float>(17 * side + 3));
}

TEST_CASE("map planes follow the image plane per token") {
    Rng rng(2);
    const int side = 32, n = 8;
    Image img = random_image(rng, side, side);
    MinutiaeMap map = random_map(rng, side, 2);
    TokenSequence seq = tokenize(img, map, n);
    CHECK(seq.token_dim == n * n * 3);
    // token (1,2), intra-patch (3,5)
    int token = 1 * 4 + 2;
    int off = 3 * n + 5;
    CHECK(seq.at(token, off) == img.at(8 + 3, 16 + 5));
    CHECK(seq.at(token, n * n + off) == map.at(0, 8 + 3, 16 + 5));
    CHECK(seq.at(token, 2 * n * n + off) == map.at(1, 8 + 3, 16 + 5));
}

TEST_CASE("lossless de-tokenization of every plane") {
    Rng rng(3);
    const int side = 32, n = 8;
    Image img = random_image(rng, side, side);
    MinutiaeMap map = random_map(rng, side, 2);
    TokenSequence seq = tokenize(img, map, n);

    Image image_back = detokenize_plane(seq, -1);
    CHECK(std::memcmp(image_back.pixels.data(), img.pixels.data(),
                      img.size() * sizeof(float)) == 0);
    for (int ch = 0; ch < 2; ++ch) {
        Image plane = detokenize_plane(seq, ch);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) CHECK(plane.at(y, x) == map.at(ch, y, x));
    }
    CHECK_THROWS_AS(detokenize_plane(seq, 2), ShapeError);
}

TEST_CASE("token count and dim formulas across combinations") {
    Rng rng(4);
    for (int side : {32, 64}) {
        for (int n : {8, 16}) {
            for (int c : {0, 1, 2}) {
                Image img = random_image(rng, side, side);
                MinutiaeMap map = c == 0 ? MinutiaeMap::none(side, side)
                                         : random_map(rng, side, c);
                TokenSequence seq = tokenize(img, map, n);
                CHECK(seq.num_tokens == (side / n) * (side / n));
                CHECK(seq.token_dim == n * n * (1 + c));
            }
        }
    }
}

TEST_CASE("shape errors name the offending dimensions") {
    Rng rng(5);
    Image img = random_image(rng, 224, 224);
    MinutiaeMap small_map = random_map(rng, 112, 2);
    CHECK_THROWS_AS(tokenize(img, small_map, 16), ShapeError);
    CHECK_THROWS_AS(tokenize(img, MinutiaeMap::none(224, 224), 15), ShapeError);
    Image rect(20, 30);
    CHECK_THROWS_AS(tokenize(rect, MinutiaeMap::none(20, 30), 5), ShapeError);
}

TEST_CASE("determinism") {
    Rng rng(6);
    Image img = random_image(rng, 64, 64);
    MinutiaeMap map = random_map(rng, 64, 2);
    TokenSequence a = tokenize(img, map, 16);
    TokenSequence b = tokenize(img, map, 16);
    CHECK(a.data == b.data);
}

TEST_CASE("prepare_tokens wires preprocessing, scaling and mapping") {
    Rng rng(7);
    Image img = random_image(rng, 224, 224);
    MinutiaeSet set(224, 224);
    set.points.emplace_back(112.0, 112.0, 45.0);

    TokenSequence concat = prepare_tokens(img, set, 32, 8, 2, 1.5);
    CHECK(concat.num_tokens == 16);
    CHECK(concat.token_dim == 8 * 8 * 3);
    // the minutia lands at (16, 16) in the 32 frame: token (2,2), offset 0
    Image ch0 = detokenize_plane(concat, 0);
    CHECK(ch0.at(16, 16) == 1.0f);

    TokenSequence vanilla = prepare_tokens(img, set, 32, 8, 0, 1.5);
    CHECK(vanilla.token_dim == 64);
}

}  // TEST_SUITE
