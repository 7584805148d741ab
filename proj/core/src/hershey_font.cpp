#include "hershey_font.hpp"

#include <array>
#include <stdexcept>

namespace glyphdiff {

namespace {

// Hershey simplex lowercase table: {nverts, width, x,y pairs...} with -1,-1
// as pen-up. Coordinates are font units, baseline at y=0.
const int kA[] = {17, 18, 15, 14, 15, 0, -1, -1, 15, 11, 13, 13, 11, 14, 8, 14, 6, 13, 4, 11,
                  3,  8,  3,  6,  4,  3, 6,  1,  8,  0,  11, 0,  13, 1,  15, 3};
const int kB[] = {17, 19, 4,  21, 4,  0, -1, -1, 4,  11, 6,  13, 8,  14, 11, 14, 13, 13, 15, 11,
                  16, 8,  16, 6,  15, 3, 13, 1,  11, 0,  8,  0,  6,  1,  4,  3};
const int kC[] = {14, 18, 15, 11, 13, 13, 11, 14, 8, 14, 6, 13, 4, 11, 3, 8,
                  3,  6,  4,  3,  6,  1,  8,  0,  11, 0, 13, 1, 15, 3};
const int kD[] = {17, 19, 15, 21, 15, 0, -1, -1, 15, 11, 13, 13, 11, 14, 8,  14, 6, 13, 4, 11,
                  3,  8,  3,  6,  4,  3, 6,  1,  8,  0,  11, 0,  13, 1,  15, 3};
const int kE[] = {17, 18, 3,  8, 15, 8, 15, 10, 14, 12, 13, 13, 11, 14, 8, 14, 6, 13,
                  4,  11, 3,  8, 3,  6, 4,  3,  6,  1,  8,  0,  11, 0,  13, 1, 15, 3};
const int kF[] = {8, 12, 10, 21, 8, 21, 6, 20, 5, 17, 5, 0, -1, -1, 2, 14, 9, 14};
const int kG[] = {22, 19, 15, 14, 15, -2, 14, -5, 13, -6, 11, -7, 8,  -7, 6,  -6, -1, -1,
                  15, 11, 13, 13, 11, 14, 8,  14, 6,  13, 4,  11, 3,  8,  3,  6,  4,  3,
                  6,  1,  8,  0,  11, 0,  13, 1,  15, 3};
const int kH[] = {10, 19, 4, 21, 4, 0, -1, -1, 4, 10, 7, 13, 9, 14, 12, 14, 14, 13, 15, 10, 15, 0};
const int kI[] = {8, 8, 3, 21, 4, 20, 5, 21, 4, 22, 3, 21, -1, -1, 4, 14, 4, 0};
const int kJ[] = {11, 10, 5, 21, 6, 20, 7, 21, 6, 22, 5, 21, -1, -1,
                  6,  14, 6, -3, 5, -6, 3, -7, 1, -7};
const int kK[] = {8, 17, 4, 21, 4, 0, -1, -1, 14, 14, 4, 4, -1, -1, 8, 8, 15, 0};
const int kL[] = {2, 8, 4, 21, 4, 0};
const int kM[] = {18, 30, 4,  14, 4,  0,  -1, -1, 4,  10, 7,  13, 9,  14, 12, 14, 14, 13,
                  15, 10, 15, 0,  -1, -1, 15, 10, 18, 13, 20, 14, 23, 14, 25, 13, 26, 10,
                  26, 0};
const int kN[] = {10, 19, 4, 14, 4, 0, -1, -1, 4, 10, 7, 13, 9, 14, 12, 14, 14, 13, 15, 10, 15, 0};
const int kO[] = {17, 19, 8,  14, 6,  13, 4,  11, 3,  8,  3,  6,  4,  3,  6, 1, 8, 0,
                  11, 0,  13, 1,  15, 3,  16, 6,  16, 8,  15, 11, 13, 13, 11, 14, 8, 14};
const int kP[] = {17, 19, 4,  14, 4,  -7, -1, -1, 4,  11, 6,  13, 8,  14, 11, 14, 13, 13, 15, 11,
                  16, 8,  16, 6,  15, 3,  13, 1,  11, 0,  8,  0,  6,  1,  4,  3};
const int kQ[] = {17, 19, 15, 14, 15, -7, -1, -1, 15, 11, 13, 13, 11, 14, 8,  14, 6, 13, 4, 11,
                  3,  8,  3,  6,  4,  3,  6,  1,  8,  0,  11, 0,  13, 1,  15, 3};
const int kR[] = {8, 13, 4, 14, 4, 0, -1, -1, 4, 8, 5, 11, 7, 13, 9, 14, 12, 14};
const int kS[] = {17, 17, 14, 11, 13, 13, 10, 14, 7,  14, 4, 13, 3, 11, 4, 9, 6, 8,
                  11, 7,  13, 6,  14, 4,  14, 3,  13, 1,  10, 0, 7, 0, 4, 1, 3, 3};
const int kT[] = {8, 12, 5, 21, 5, 4, 6, 1, 8, 0, 10, 0, -1, -1, 2, 14, 9, 14};
const int kU[] = {10, 19, 4, 14, 4, 4, 5, 1, 7, 0, 10, 0, 12, 1, 15, 4, -1, -1, 15, 14, 15, 0};
const int kV[] = {5, 16, 2, 14, 8, 0, -1, -1, 14, 14, 8, 0};
const int kW[] = {11, 22, 3,  14, 7,  0,  -1, -1, 11, 14, 7, 0, -1, -1,
                  11, 14, 15, 0,  -1, -1, 19, 14, 15, 0};
const int kX[] = {5, 17, 3, 14, 14, 0, -1, -1, 14, 14, 3, 0};
const int kY[] = {9, 16, 2, 14, 8, 0, -1, -1, 14, 14, 8, 0, 6, -4, 4, -6, 2, -7, 1, -7};
const int kZ[] = {8, 17, 14, 14, 3, 0, -1, -1, 3, 14, 14, 14, -1, -1, 3, 0, 14, 0};

const int* kTable[26] = {kA, kB, kC, kD, kE, kF, kG, kH, kI, kJ, kK, kL, kM,
                         kN, kO, kP, kQ, kR, kS, kT, kU, kV, kW, kX, kY, kZ};

GlyphStrokes decode(const int* raw) {
    GlyphStrokes g;
    const int nverts = raw[0];
    g.width = static_cast<float>(raw[1]);
    std::vector<std::pair<float, float>> current;
    for (int i = 0; i < nverts; ++i) {
        const int x = raw[2 + 2 * i], y = raw[3 + 2 * i];
        if (x == -1 && y == -1) {
            if (current.size() >= 2) g.polylines.push_back(current);
            current.clear();
        } else {
            current.emplace_back(static_cast<float>(x), static_cast<float>(y));
        }
    }
    if (current.size() >= 2) g.polylines.push_back(current);
    return g;
}

}  // namespace

const GlyphStrokes& glyph_strokes(char c) {
    static const auto glyphs = [] {
        std::array<GlyphStrokes, 26> out;
        for (int i = 0; i < 26; ++i) out[static_cast<size_t>(i)] = decode(kTable[i]);
        return out;
    }();
    if (c < 'a' || c > 'z') throw std::out_of_range("glyph_strokes: only a-z supported");
    return glyphs[static_cast<size_t>(c - 'a')];
}

}  // namespace glyphdiff
