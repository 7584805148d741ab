#pragma once

#include <string>
#include <vector>

#include "glyphdiff/tensor.hpp"

namespace glyphdiff {

struct ContentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr int kGlyphH = 32;
inline constexpr int kGlyphW = 96;
inline constexpr int kMaxTextLen = 8;
inline constexpr const char* kAlphabet = "abcdefghijklmnopqrstuvwxyz";

// Ground-truth style parameters of one synthetic writer. Deterministic in
// (dataset seed, writer_id).
struct WriterStyle {
    int writer_id = 0;
    float slant = 0.0f;             // radians, [-0.45, 0.45]
    float stroke_width = 1.0f;      // px, one of {1.0, 1.5, 2.0, 2.5}
    float ink_rgb[3] = {0, 0, 0};   // [0,1]
    float baseline_wobble = 0.0f;   // px amplitude, [0,2]
    float letter_spacing = 1.0f;    // px, [1,4]
    float bg_tint[3] = {1, 1, 1};   // near white
    float bg_noise = 0.0f;          // gaussian std, [0, 0.08]
};

struct GlyphSample {
    Tensor image;  // [3,32,96] in [0,1]
    std::string text;
    int writer_id = 0;
};

struct ManifestEntry {
    std::string path;  // relative to the dataset directory
    std::string text;
    int writer_id = 0;
};

struct DatasetManifest {
    uint64_t dataset_seed = 0;
    int writer_count = 0;
    std::vector<WriterStyle> styles;
    std::vector<ManifestEntry> entries;
    std::vector<int> seen_writers, unseen_writers;
    std::vector<std::string> iv_words, oov_words;
    std::string dir;  // runtime context, not serialized as a field
};

struct TrainingBatch {
    Tensor ref_images;  // [n/2, 3, 32, 96]
    Tensor tar_images;  // [n/2, 3, 32, 96]
    std::vector<std::string> ref_texts, tar_texts;
    std::vector<int> writer_ids;  // one per pair, pairwise distinct
};

std::vector<WriterStyle> make_writers(int n, uint64_t seed);

// Pure function of (text, style, jitter_seed).
GlyphSample render(const std::string& text, const WriterStyle& style, uint64_t jitter_seed);

// Renders writers x words_per_writer samples into out_dir as P6 ppm files
// plus manifest.tsv / styles.tsv / splits.txt / meta.txt. Writers and words
// are partitioned into seen/unseen and in-/out-of-vocabulary.
DatasetManifest build_dataset(const std::vector<WriterStyle>& writers, int words_per_writer,
                              uint64_t lexicon_seed, const std::string& out_dir,
                              float seen_fraction = 0.75f, float iv_fraction = 0.75f);

DatasetManifest load_manifest(const std::string& dir);

// Pairing decision only: n/2 (reference, target) index pairs; within a pair
// the writer matches and the texts differ, across pairs writers are distinct.
// allow_writer_reuse lets small datasets fill large batches by cycling
// writers instead of erroring; distinctness then holds only up to the pool
// size.
struct BatchPlan {
    std::vector<std::pair<int, int>> pairs;  // (ref entry idx, tar entry idx)
    std::vector<int> writer_ids;
};
BatchPlan plan_batch(const DatasetManifest& m, uint64_t pairing_seed, int n,
                     bool allow_writer_reuse = false);

TrainingBatch load_batch(const DatasetManifest& m, uint64_t pairing_seed, int n);

// word helpers shared by trainer/eval
bool text_in_alphabet(const std::string& text);

}  // namespace glyphdiff
