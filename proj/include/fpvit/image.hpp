#pragma once

#include <string>
#include <vector>

namespace fpvit {

// Grayscale raster, row-major, values in [0, 1]. Origin top-left,
// x = column, y = row.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int w, int h, float fill = 0.0f)
        : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
};

// Binary PGM (P5), 8-bit. Values are mapped to [0, 1] on read and quantized
// back to the 0..255 range on write.
Image read_pgm(const std::string& path);
void write_pgm(const Image& img, const std::string& path);

// Half-pixel-center bilinear resampling; same-size resize reproduces the
// input exactly.
Image resize_bilinear(const Image& img, int out_width, int out_height);

// Resize to side x side, per-image standardize (epsilon-guarded), then
// affine-map the result onto [0, 1] (min-max). A constant image comes out
// as constant 0.5. This is the normalization contract recorded in
// checkpoint headers as "resize-bilinear;standardize;minmax01".
Image preprocess(const Image& img, int side = 224);

inline constexpr const char* kInputNormContract = "resize-bilinear;standardize;minmax01";

}  // namespace fpvit
