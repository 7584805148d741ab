#include "glyphdiff/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace glyphdiff {

namespace {

uint8_t quantize(float v) {
    v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<uint8_t>(std::lround(v * 255.0f));
}

// reads one whitespace-delimited token, skipping '#' comments
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw IoError("write_ppm expects [3,H,W]");
    const int64_t H = image.dim(1), W = image.dim(2);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
    const float* p = image.data();
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c)
                row[static_cast<size_t>(x * 3 + c)] = quantize(p[(c * H + y) * W + x]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    if (next_token(f) != "P6") throw IoError("not a P6 ppm: " + path);
    const int64_t W = std::stoll(next_token(f));
    const int64_t H = std::stoll(next_token(f));
    const int64_t maxval = std::stoll(next_token(f));
    if (maxval != 255) throw IoError("unsupported maxval in: " + path);
    std::vector<uint8_t> raw(static_cast<size_t>(W * H * 3));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (f.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError("truncated pixel data: " + path);
    Tensor img = Tensor::zeros({3, H, W});
    float* p = img.data();
    constexpr float inv = 1.0f / 255.0f;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c)
                p[(c * H + y) * W + x] = static_cast<float>(raw[static_cast<size_t>((y * W + x) * 3 + c)]) * inv;
    return img;
}

void write_pgm(const std::string& path, const Tensor& image) {
    Tensor img = image;
    if (img.rank() == 3 && img.dim(0) == 1) {
        // accept [1,H,W]
    } else if (img.rank() != 2) {
        throw IoError("write_pgm expects [H,W] or [1,H,W]");
    }
    const int64_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P5\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(W));
    const float* p = img.data();
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) row[static_cast<size_t>(x)] = quantize(p[y * W + x]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace glyphdiff
