#pragma once

#include <vector>

#include "fpvit/image.hpp"
#include "fpvit/minutiae.hpp"

namespace fpvit {

// Flattened patch tokens in raster order of the patch grid. Each token is
// the image patch followed by one flattened patch per map channel, all
// row-major within the patch:
//   num_tokens = (image_side / patch_size)^2
//   token_dim  = patch_size^2 * (1 + channels)
struct TokenSequence {
    int num_tokens = 0;
    int token_dim = 0;
    int patch_size = 0;
    int image_side = 0;
    int map_channels = 0;
    std::vector<float> data;  // num_tokens x token_dim

    float& at(int token, int element) {
        return data[static_cast<std::size_t>(token) * token_dim + element];
    }
    float at(int token, int element) const {
        return data[static_cast<std::size_t>(token) * token_dim + element];
    }
};

// map.channels == 0 (MinutiaeMap::none) produces image-only tokens of
// dimension patch_size^2 — the vanilla-model path.
TokenSequence tokenize(const Image& image, const MinutiaeMap& map, int patch_size);

// Inverse of the image part of tokenize; used by saliency rendering and the
// lossless-concatenation tests. channel -1 selects the image plane,
// 0..channels-1 a map plane.
Image detokenize_plane(const TokenSequence& tokens, int channel = -1);

// Capture-resolution image + minutiae to model-resolution tokens:
// preprocess the image onto image_side, rescale the minutiae onto the same
// frame, build the heatmap (skipped when map_channels == 0, the vanilla
// path), tokenize.
TokenSequence prepare_tokens(const Image& image, const MinutiaeSet& minutiae, int image_side,
                             int patch_size, int map_channels, double map_sigma);

}  // namespace fpvit
