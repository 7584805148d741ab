#pragma once

#include <utility>
#include <vector>

namespace glyphdiff {

// Single-stroke vector glyph: polylines in font units, baseline at y=0,
// y grows upward (x-height 14, ascenders to ~22, descenders to -7).
struct GlyphStrokes {
    float width = 0.0f;
    std::vector<std::vector<std::pair<float, float>>> polylines;
};

// Hershey simplex strokes for 'a'..'z'.
const GlyphStrokes& glyph_strokes(char c);

}  // namespace glyphdiff
