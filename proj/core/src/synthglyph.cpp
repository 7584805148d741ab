#include "glyphdiff/synthglyph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "glyphdiff/image_io.hpp"
#include "hershey_font.hpp"

namespace fs = std::filesystem;

namespace glyphdiff {

namespace {

constexpr float kFontScale = 0.95f;   // font units -> px
constexpr float kBaselineRow = 23.0f; // image row of y=0
constexpr float kMarginX = 3.0f;

void check_text(const std::string& text) {
    if (text.empty() || text.size() > kMaxTextLen)
        throw ContentError("text length must be 1.." + std::to_string(kMaxTextLen) + ", got \"" +
                           text + "\"");
    for (char c : text)
        if (c < 'a' || c > 'z')
            throw ContentError(std::string("character '") + c + "' outside alphabet a-z");
}

float point_segment_dist(float px, float py, float ax, float ay, float bx, float by) {
    const float dx = bx - ax, dy = by - ay;
    const float len2 = dx * dx + dy * dy;
    float t = len2 > 0.0f ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0f;
    t = t < 0.0f ? 0.0f : (t > 1.0f ? 1.0f : t);
    const float cx = ax + t * dx, cy = ay + t * dy;
    return std::sqrt((px - cx) * (px - cx) + (py - cy) * (py - cy));
}

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::vector<std::string> split_ws(const std::string& line) {
    std::istringstream is(line);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t p = line.find('\t', start);
        if (p == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, p - start));
        start = p + 1;
    }
    return out;
}

}  // namespace

bool text_in_alphabet(const std::string& text) {
    for (char c : text)
        if (c < 'a' || c > 'z') return false;
    return !text.empty() && text.size() <= kMaxTextLen;
}

std::vector<WriterStyle> make_writers(int n, uint64_t seed) {
    if (n < 2) throw ConfigError("make_writers: need at least 2 writers for contrastive batches");
    std::vector<WriterStyle> out;
    out.reserve(static_cast<size_t>(n));
    static const float kWidths[4] = {1.0f, 1.5f, 2.0f, 2.5f};
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, "writer/" + std::to_string(i));
        WriterStyle w;
        w.writer_id = i;
        // keep |slant| away from zero so the slant-sign factor stays observable
        const float mag = 0.05f + 0.40f * rng.uniform();
        w.slant = rng.uniform() < 0.5f ? -mag : mag;
        w.stroke_width = kWidths[rng.next_below(4)];
        for (float& c : w.ink_rgb) c = 0.6f * rng.uniform();
        w.baseline_wobble = 2.0f * rng.uniform();
        w.letter_spacing = 1.0f + 3.0f * rng.uniform();
        for (float& c : w.bg_tint) c = 0.85f + 0.15f * rng.uniform();
        w.bg_noise = 0.08f * rng.uniform();
        out.push_back(w);
    }
    // slant is continuous-uniform so collisions do not happen in practice;
    // verify anyway since distinctness is a contract
    for (size_t i = 0; i < out.size(); ++i)
        for (size_t j = i + 1; j < out.size(); ++j)
            if (out[i].slant == out[j].slant && out[i].stroke_width == out[j].stroke_width &&
                out[i].ink_rgb[0] == out[j].ink_rgb[0])
                throw TrainingError("make_writers: duplicate style vector");
    return out;
}

GlyphSample render(const std::string& text, const WriterStyle& style, uint64_t jitter_seed) {
    check_text(text);
    RngStream jitter(jitter_seed, "render/jitter");
    RngStream noise(jitter_seed, "render/noise");

    // layout in px: (x right, y up from baseline), then shear, then fit
    struct Seg {
        float ax, ay, bx, by;
    };
    std::vector<Seg> segs;
    const float phase = jitter.uniform();
    const float shear = std::tan(style.slant);
    float pen = 0.0f;
    for (size_t k = 0; k < text.size(); ++k) {
        const GlyphStrokes& g = glyph_strokes(text[k]);
        const float dy = style.baseline_wobble *
                         std::sin(6.2831853f * (0.37f * static_cast<float>(k) + phase));
        for (const auto& line : g.polylines)
            for (size_t i = 0; i + 1 < line.size(); ++i) {
                const float ay = line[i].second * kFontScale + dy;
                const float by = line[i + 1].second * kFontScale + dy;
                segs.push_back({pen + line[i].first * kFontScale + shear * ay, ay,
                                pen + line[i + 1].first * kFontScale + shear * by, by});
            }
        pen += g.width * kFontScale + style.letter_spacing;
    }

    float xmin = 1e9f, xmax = -1e9f;
    for (const Seg& s : segs) {
        xmin = std::min({xmin, s.ax, s.bx});
        xmax = std::max({xmax, s.ax, s.bx});
    }
    if (segs.empty()) {
        xmin = 0.0f;
        xmax = 1.0f;
    }
    const float usable = static_cast<float>(kGlyphW) - 2.0f * kMarginX;
    const float fit = xmax - xmin > usable ? usable / (xmax - xmin) : 1.0f;

    // map to image coords (row down)
    for (Seg& s : segs) {
        s.ax = (s.ax - xmin) * fit + kMarginX;
        s.bx = (s.bx - xmin) * fit + kMarginX;
        s.ay = kBaselineRow - s.ay;
        s.by = kBaselineRow - s.by;
    }

    // coverage by distance to nearest stroke segment, max-blended
    std::vector<float> cov(static_cast<size_t>(kGlyphH * kGlyphW), 0.0f);
    const float half = 0.5f * style.stroke_width;
    const float reach = half + 1.0f;
    for (const Seg& s : segs) {
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.ay, s.by) - reach)));
        const int y1 = std::min(kGlyphH - 1, static_cast<int>(std::ceil(std::max(s.ay, s.by) + reach)));
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.ax, s.bx) - reach)));
        const int x1 = std::min(kGlyphW - 1, static_cast<int>(std::ceil(std::max(s.ax, s.bx) + reach)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const float d = point_segment_dist(static_cast<float>(x), static_cast<float>(y),
                                                   s.ax, s.ay, s.bx, s.by);
                const float c = std::clamp(half + 0.5f - d, 0.0f, 1.0f);
                float& dst = cov[static_cast<size_t>(y * kGlyphW + x)];
                dst = std::max(dst, c);
            }
    }

    Tensor img = Tensor::zeros({3, kGlyphH, kGlyphW});
    float* p = img.data();
    for (int y = 0; y < kGlyphH; ++y)
        for (int x = 0; x < kGlyphW; ++x) {
            const float c = cov[static_cast<size_t>(y * kGlyphW + x)];
            for (int ch = 0; ch < 3; ++ch) {
                float bg = style.bg_tint[ch];
                if (style.bg_noise > 0.0f) bg += style.bg_noise * noise.normal();
                float v = style.ink_rgb[ch] * c + bg * (1.0f - c);
                p[(ch * kGlyphH + y) * kGlyphW + x] = std::clamp(v, 0.0f, 1.0f);
            }
        }
    return {img, text, style.writer_id};
}

namespace {

std::vector<std::string> make_lexicon(int count, uint64_t lexicon_seed) {
    RngStream rng(lexicon_seed, "lexicon");
    std::set<std::string> seen;
    std::vector<std::string> words;
    while (static_cast<int>(words.size()) < count) {
        const int len = 2 + static_cast<int>(rng.next_below(static_cast<uint64_t>(kMaxTextLen - 1)));
        std::string w;
        for (int i = 0; i < len; ++i)
            w.push_back(static_cast<char>('a' + rng.next_below(26)));
        if (seen.insert(w).second) words.push_back(w);
    }
    return words;
}

}  // namespace

DatasetManifest build_dataset(const std::vector<WriterStyle>& writers, int words_per_writer,
                              uint64_t lexicon_seed, const std::string& out_dir,
                              float seen_fraction, float iv_fraction) {
    if (writers.empty() || words_per_writer < 2)
        throw ConfigError("build_dataset: need writers and at least 2 words per writer");

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::exists(out_dir)) throw IoError("build_dataset: cannot create directory " + out_dir);

    const int n_iv_per_writer =
        std::clamp(static_cast<int>(std::lround(iv_fraction * static_cast<float>(words_per_writer))),
                   1, words_per_writer);
    const int n_oov_per_writer = words_per_writer - n_iv_per_writer;

    // shared lexicon, partitioned into disjoint IV/OOV pools
    const int iv_pool = std::max(n_iv_per_writer + 4, 2 * n_iv_per_writer);
    const int oov_pool = std::max(n_oov_per_writer + 2, 2 * std::max(n_oov_per_writer, 2));
    std::vector<std::string> lex = make_lexicon(iv_pool + oov_pool, lexicon_seed);

    DatasetManifest m;
    m.dataset_seed = lexicon_seed;
    m.writer_count = static_cast<int>(writers.size());
    m.styles = writers;
    m.dir = out_dir;
    m.iv_words.assign(lex.begin(), lex.begin() + iv_pool);
    m.oov_words.assign(lex.begin() + iv_pool, lex.end());

    const int n_seen = std::clamp(
        static_cast<int>(std::lround(seen_fraction * static_cast<float>(writers.size()))), 1,
        static_cast<int>(writers.size()));
    for (int i = 0; i < static_cast<int>(writers.size()); ++i)
        (i < n_seen ? m.seen_writers : m.unseen_writers).push_back(i);

    for (const WriterStyle& w : writers) {
        RngStream pick(lexicon_seed, "pick/" + std::to_string(w.writer_id));
        // sample without replacement inside each pool
        auto sample_from = [&](const std::vector<std::string>& pool, int k) {
            std::vector<int> order(pool.size());
            for (size_t i = 0; i < pool.size(); ++i) order[i] = static_cast<int>(i);
            for (size_t i = 0; i < pool.size(); ++i)
                std::swap(order[i], order[i + pick.next_below(pool.size() - i)]);
            std::vector<std::string> out;
            for (int i = 0; i < k; ++i) out.push_back(pool[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            return out;
        };
        std::vector<std::string> words = sample_from(m.iv_words, n_iv_per_writer);
        for (auto& s : sample_from(m.oov_words, n_oov_per_writer)) words.push_back(s);

        for (size_t j = 0; j < words.size(); ++j) {
            const uint64_t jitter =
                RngStream(lexicon_seed, "jitter/" + std::to_string(w.writer_id) + "/" +
                                            std::to_string(j))
                    .next_u64();
            GlyphSample s = render(words[j], w, jitter);
            char name[64];
            std::snprintf(name, sizeof(name), "w%03d_%03zu.ppm", w.writer_id, j);
            write_ppm(out_dir + "/" + name, s.image);
            m.entries.push_back({name, words[j], w.writer_id});
        }
    }

    // manifest.tsv: path<TAB>text<TAB>writer_id
    {
        std::ofstream f(out_dir + "/manifest.tsv", std::ios::trunc);
        if (!f) throw IoError("cannot write manifest.tsv");
        for (const auto& e : m.entries) f << e.path << "\t" << e.text << "\t" << e.writer_id << "\n";
    }
    // styles.tsv: writer_id<TAB>slant<TAB>stroke_width<TAB>ink_r,g,b<TAB>wobble<TAB>spacing<TAB>bg_r,g,b<TAB>noise
    {
        std::ofstream f(out_dir + "/styles.tsv", std::ios::trunc);
        if (!f) throw IoError("cannot write styles.tsv");
        for (const auto& w : m.styles)
            f << w.writer_id << "\t" << format_float(w.slant) << "\t" << format_float(w.stroke_width)
              << "\t" << format_float(w.ink_rgb[0]) << "," << format_float(w.ink_rgb[1]) << ","
              << format_float(w.ink_rgb[2]) << "\t" << format_float(w.baseline_wobble) << "\t"
              << format_float(w.letter_spacing) << "\t" << format_float(w.bg_tint[0]) << ","
              << format_float(w.bg_tint[1]) << "," << format_float(w.bg_tint[2]) << "\t"
              << format_float(w.bg_noise) << "\n";
    }
    {
        std::ofstream f(out_dir + "/splits.txt", std::ios::trunc);
        if (!f) throw IoError("cannot write splits.txt");
        f << "seen_writers:";
        for (int i : m.seen_writers) f << " " << i;
        f << "\nunseen_writers:";
        for (int i : m.unseen_writers) f << " " << i;
        f << "\niv_words:";
        for (const auto& w : m.iv_words) f << " " << w;
        f << "\noov_words:";
        for (const auto& w : m.oov_words) f << " " << w;
        f << "\n";
    }
    {
        std::ofstream f(out_dir + "/meta.txt", std::ios::trunc);
        if (!f) throw IoError("cannot write meta.txt");
        f << "dataset_seed=" << m.dataset_seed << "\nwriter_count=" << m.writer_count << "\n";
    }
    return m;
}

DatasetManifest load_manifest(const std::string& dir) {
    DatasetManifest m;
    m.dir = dir;
    {
        std::ifstream f(dir + "/meta.txt");
        if (!f) throw IoError("cannot open " + dir + "/meta.txt");
        std::string line;
        while (std::getline(f, line)) {
            const size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "dataset_seed") m.dataset_seed = std::stoull(val);
            if (key == "writer_count") m.writer_count = std::stoi(val);
        }
    }
    {
        std::ifstream f(dir + "/manifest.tsv");
        if (!f) throw IoError("cannot open " + dir + "/manifest.tsv");
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 3) throw IoError("malformed manifest row: " + line);
            m.entries.push_back({cols[0], cols[1], std::stoi(cols[2])});
        }
    }
    {
        std::ifstream f(dir + "/styles.tsv");
        if (!f) throw IoError("cannot open " + dir + "/styles.tsv");
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            auto cols = split_tabs(line);
            if (cols.size() != 8) throw IoError("malformed styles row: " + line);
            WriterStyle w;
            w.writer_id = std::stoi(cols[0]);
            w.slant = std::stof(cols[1]);
            w.stroke_width = std::stof(cols[2]);
            auto rgb = [](const std::string& s, float* dst) {
                if (std::sscanf(s.c_str(), "%f,%f,%f", dst, dst + 1, dst + 2) != 3)
                    throw IoError("malformed rgb triple: " + s);
            };
            rgb(cols[3], w.ink_rgb);
            w.baseline_wobble = std::stof(cols[4]);
            w.letter_spacing = std::stof(cols[5]);
            rgb(cols[6], w.bg_tint);
            w.bg_noise = std::stof(cols[7]);
            m.styles.push_back(w);
        }
    }
    {
        std::ifstream f(dir + "/splits.txt");
        if (!f) throw IoError("cannot open " + dir + "/splits.txt");
        std::string line;
        while (std::getline(f, line)) {
            const size_t colon = line.find(':');
            if (colon == std::string::npos) continue;
            const std::string key = line.substr(0, colon);
            auto toks = split_ws(line.substr(colon + 1));
            if (key == "seen_writers")
                for (const auto& t : toks) m.seen_writers.push_back(std::stoi(t));
            else if (key == "unseen_writers")
                for (const auto& t : toks) m.unseen_writers.push_back(std::stoi(t));
            else if (key == "iv_words")
                m.iv_words = toks;
            else if (key == "oov_words")
                m.oov_words = toks;
        }
    }
    return m;
}

BatchPlan plan_batch(const DatasetManifest& m, uint64_t pairing_seed, int n,
                     bool allow_writer_reuse) {
    if (n < 2 || n % 2 != 0) throw ConfigError("batch size must be even and >= 2");
    const int pairs = n / 2;

    // writers usable for pairing: >= 2 entries with at least 2 distinct texts
    std::map<int, std::vector<int>> by_writer;
    for (size_t i = 0; i < m.entries.size(); ++i)
        by_writer[m.entries[i].writer_id].push_back(static_cast<int>(i));
    std::vector<int> eligible;
    for (const auto& [w, idxs] : by_writer) {
        std::set<std::string> texts;
        for (int i : idxs) texts.insert(m.entries[static_cast<size_t>(i)].text);
        if (texts.size() >= 2) eligible.push_back(w);
    }
    if (static_cast<int>(eligible.size()) < pairs && !allow_writer_reuse)
        throw ConfigError("need " + std::to_string(pairs) + " distinct writers, have " +
                          std::to_string(eligible.size()));
    if (eligible.empty()) throw ConfigError("no writer has two samples with distinct texts");

    RngStream rng(pairing_seed, "batch");
    for (size_t i = 0; i < eligible.size(); ++i)
        std::swap(eligible[i], eligible[i + rng.next_below(eligible.size() - i)]);

    BatchPlan plan;
    for (int p = 0; p < pairs; ++p) {
        const int w = eligible[static_cast<size_t>(p) % eligible.size()];
        const auto& idxs = by_writer[w];
        const int ref = idxs[rng.next_below(idxs.size())];
        std::vector<int> others;
        for (int i : idxs)
            if (m.entries[static_cast<size_t>(i)].text != m.entries[static_cast<size_t>(ref)].text)
                others.push_back(i);
        const int tar = others[rng.next_below(others.size())];
        plan.pairs.emplace_back(ref, tar);
        plan.writer_ids.push_back(w);
    }
    return plan;
}

TrainingBatch load_batch(const DatasetManifest& m, uint64_t pairing_seed, int n) {
    BatchPlan plan = plan_batch(m, pairing_seed, n);
    const int pairs = static_cast<int>(plan.pairs.size());
    TrainingBatch b;
    b.ref_images = Tensor::zeros({pairs, 3, kGlyphH, kGlyphW});
    b.tar_images = Tensor::zeros({pairs, 3, kGlyphH, kGlyphW});
    b.writer_ids = plan.writer_ids;
    const int64_t img_n = 3 * kGlyphH * kGlyphW;
    for (int p = 0; p < pairs; ++p) {
        const auto& [ri, ti] = plan.pairs[static_cast<size_t>(p)];
        Tensor ref = read_ppm(m.dir + "/" + m.entries[static_cast<size_t>(ri)].path);
        Tensor tar = read_ppm(m.dir + "/" + m.entries[static_cast<size_t>(ti)].path);
        std::copy(ref.data(), ref.data() + img_n, b.ref_images.data() + p * img_n);
        std::copy(tar.data(), tar.data() + img_n, b.tar_images.data() + p * img_n);
        b.ref_texts.push_back(m.entries[static_cast<size_t>(ri)].text);
        b.tar_texts.push_back(m.entries[static_cast<size_t>(ti)].text);
    }
    return b;
}

}  // namespace glyphdiff
