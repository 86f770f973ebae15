#include "fpvit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include "fpvit/error.hpp"

namespace fpvit {

namespace {

// Consumes whitespace and '#' comment lines between PGM header fields.
int next_header_int(std::istream& in, const std::string& path) {
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw ParseError("truncated PGM header in " + path);
        if (std::isspace(c)) {
            in.get();
        } else if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) throw ParseError("malformed PGM header in " + path);
    return value;
}

}  // namespace

Image read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file: " + path);

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw FormatError("not a binary PGM (P5) file: " + path);

    int w = next_header_int(in, path);
    int h = next_header_int(in, path);
    int maxval = next_header_int(in, path);
    if (w <= 0 || h <= 0) throw FormatError("non-positive PGM dimensions in " + path);
    if (maxval <= 0 || maxval > 255) throw FormatError("unsupported PGM maxval in " + path);
    in.get();  // single whitespace byte after maxval

    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw FormatError("truncated PGM pixel data in " + path);

    Image img(w, h);
    float scale = 1.0f / static_cast<float>(maxval);
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] * scale;
    return img;
}

void write_pgm(const Image& img, const std::string& path) {
    if (img.width <= 0 || img.height <= 0) throw ValidationError("cannot write empty image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> raw(img.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        float v = std::clamp(img.pixels[i], 0.0f, 1.0f);
        raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("write failed: " + path);
}

Image resize_bilinear(const Image& img, int out_width, int out_height) {
    if (img.width <= 0 || img.height <= 0) throw ValidationError("resize of zero-area image");
    if (out_width <= 0 || out_height <= 0) throw ValidationError("resize to zero-area image");

    Image out(out_width, out_height);
    double sx = static_cast<double>(img.width) / out_width;
    double sy = static_cast<double>(img.height) / out_height;
    for (int y = 0; y < out_height; ++y) {
        double src_y = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(src_y));
        double fy = src_y - y0;
        int y0c = std::clamp(y0, 0, img.height - 1);
        int y1c = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_width; ++x) {
            double src_x = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(src_x));
            double fx = src_x - x0;
            int x0c = std::clamp(x0, 0, img.width - 1);
            int x1c = std::clamp(x0 + 1, 0, img.width - 1);
            double top = img.at(y0c, x0c) * (1.0 - fx) + img.at(y0c, x1c) * fx;
            double bot = img.at(y1c, x0c) * (1.0 - fx) + img.at(y1c, x1c) * fx;
            out.at(y, x) = static_cast<float>(top * (1.0 - fy) + bot * fy);
        }
    }
    return out;
}

Image preprocess(const Image& img, int side) {
    if (img.width <= 0 || img.height <= 0) throw ValidationError("preprocess of zero-area image");
    Image out = resize_bilinear(img, side, side);

    double mean = 0.0;
    for (float v : out.pixels) mean += v;
    mean /= static_cast<double>(out.size());
    double var = 0.0;
    for (float v : out.pixels) var += (v - mean) * (v - mean);
    var /= static_cast<double>(out.size());
    double inv_std = 1.0 / std::sqrt(var + 1e-12);

    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float& v : out.pixels) {
        v = static_cast<float>((v - mean) * inv_std);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-9f) {
        std::fill(out.pixels.begin(), out.pixels.end(), 0.5f);
    } else {
        float inv_range = 1.0f / (hi - lo);
        for (float& v : out.pixels) v = (v - lo) * inv_range;
    }
    return out;
}

}  // namespace fpvit
