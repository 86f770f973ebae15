#include "fpvit/tokenizer.hpp"

#include <string>

#include "fpvit/error.hpp"

namespace fpvit {

TokenSequence tokenize(const Image& image, const MinutiaeMap& map, int patch_size) {
    if (patch_size <= 0) throw ConfigError("patch_size must be positive");
    if (image.width != image.height)
        throw ShapeError("tokenize expects a square image, got " + std::to_string(image.width) +
                         "x" + std::to_string(image.height));
    if (map.channels > 0 && (map.width != image.width || map.height != image.height))
        throw ShapeError("image " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + " and minutiae map " +
                         std::to_string(map.width) + "x" + std::to_string(map.height) +
                         " differ in size");
    if (image.width % patch_size != 0)
        throw ShapeError("image side " + std::to_string(image.width) +
                         " not divisible by patch size " + std::to_string(patch_size));

    int side = image.width;
    int grid = side / patch_size;
    int per_plane = patch_size * patch_size;

    TokenSequence seq;
    seq.patch_size = patch_size;
    seq.image_side = side;
    seq.map_channels = map.channels;
    seq.num_tokens = grid * grid;
    seq.token_dim = per_plane * (1 + map.channels);
    seq.data.resize(static_cast<std::size_t>(seq.num_tokens) * seq.token_dim);

    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            int token = gy * grid + gx;
            float* dst = seq.data.data() + static_cast<std::size_t>(token) * seq.token_dim;
            for (int py = 0; py < patch_size; ++py) {
                const float* src = image.pixels.data() +
                                   static_cast<std::size_t>(gy * patch_size + py) * side +
                                   gx * patch_size;
                for (int px = 0; px < patch_size; ++px) dst[py * patch_size + px] = src[px];
            }
            for (int ch = 0; ch < map.channels; ++ch) {
                float* plane = dst + per_plane * (1 + ch);
                for (int py = 0; py < patch_size; ++py) {
                    const float* src =
                        map.data.data() +
                        (static_cast<std::size_t>(ch) * side + gy * patch_size + py) * side +
                        gx * patch_size;
                    for (int px = 0; px < patch_size; ++px) plane[py * patch_size + px] = src[px];
                }
            }
        }
    }
    return seq;
}

TokenSequence prepare_tokens(const Image& image, const MinutiaeSet& minutiae, int image_side,
                             int patch_size, int map_channels, double map_sigma) {
    Image prepared = preprocess(image, image_side);
    if (map_channels == 0) return tokenize(prepared, MinutiaeMap::none(image_side, image_side), patch_size);
    MinutiaeSet scaled = scale_minutiae(minutiae, image_side, image_side);
    MinutiaeMap map = build_minutiae_map(scaled, map_channels, map_sigma);
    return tokenize(prepared, map, patch_size);
}

Image detokenize_plane(const TokenSequence& tokens, int channel) {
    if (channel < -1 || channel >= tokens.map_channels)
        throw ShapeError("token sequence has no plane " + std::to_string(channel));
    int side = tokens.image_side;
    int patch = tokens.patch_size;
    int grid = side / patch;
    int per_plane = patch * patch;
    int base = (channel + 1) * per_plane;

    Image img(side, side);
    for (int gy = 0; gy < grid; ++gy) {
        for (int gx = 0; gx < grid; ++gx) {
            int token = gy * grid + gx;
            for (int py = 0; py < patch; ++py) {
                for (int px = 0; px < patch; ++px) {
                    img.at(gy * patch + py, gx * patch + px) =
                        tokens.at(token, base + py * patch + px);
                }
            }
        }
    }
    return img;
}

}  // namespace fpvit
