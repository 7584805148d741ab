#include "glyphdiff/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/Dense>
#include <json.hpp>

#include "glyphdiff/image_io.hpp"

namespace glyphdiff {

namespace {

Eigen::MatrixXd to_matrix(const std::vector<std::vector<float>>& rows) {
    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index d = n > 0 ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
    return m;
}

double l2sq(const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace

double frechet_distance(const std::vector<std::vector<float>>& a,
                        const std::vector<std::vector<float>>& b) {
    if (a.empty() || b.empty()) throw UsageError("frechet_distance: empty feature set");
    Eigen::MatrixXd xa = to_matrix(a), xb = to_matrix(b);
    const Eigen::Index d = xa.cols();
    if (xb.cols() != d) throw ShapeError("frechet_distance: dimension mismatch");

    Eigen::VectorXd mu1 = xa.colwise().mean(), mu2 = xb.colwise().mean();
    auto cov = [](const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
        if (x.rows() < 2) return Eigen::MatrixXd::Zero(x.cols(), x.cols()).eval();
        Eigen::MatrixXd c = x.rowwise() - mu.transpose();
        return Eigen::MatrixXd((c.transpose() * c) / static_cast<double>(x.rows() - 1));
    };
    Eigen::MatrixXd s1 = cov(xa, mu1), s2 = cov(xb, mu2);

    // tr((S1 S2)^{1/2}) via sqrt(S1) S2 sqrt(S1), which is symmetric PSD
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es1(s1);
    Eigen::VectorXd ev1 = es1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd s1h = es1.eigenvectors() * ev1.asDiagonal() * es1.eigenvectors().transpose();
    Eigen::MatrixXd inner = s1h * s2 * s1h;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(inner);
    const double tr_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    return (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
}

double silhouette_score(const std::vector<std::vector<float>>& feats,
                        const std::vector<int>& labels) {
    const size_t n = feats.size();
    if (n < 2) return 0.0;
    std::map<int, std::vector<size_t>> clusters;
    for (size_t i = 0; i < n; ++i) clusters[labels[i]].push_back(i);
    if (clusters.size() < 2) return 0.0;

    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const int li = labels[i];
        if (clusters[li].size() < 2) continue;  // singleton contributes 0
        double a = 0.0;
        for (size_t j : clusters[li])
            if (j != i) a += std::sqrt(l2sq(feats[i], feats[j]));
        a /= static_cast<double>(clusters[li].size() - 1);
        double b = 1e300;
        for (const auto& [lc, members] : clusters) {
            if (lc == li) continue;
            double m = 0.0;
            for (size_t j : members) m += std::sqrt(l2sq(feats[i], feats[j]));
            b = std::min(b, m / static_cast<double>(members.size()));
        }
        total += (b - a) / std::max(a, b);
    }
    return total / static_cast<double>(n);
}

double knn_accuracy(const std::vector<std::vector<float>>& ref_feats,
                    const std::vector<int>& ref_labels,
                    const std::vector<std::vector<float>>& query_feats,
                    const std::vector<int>& query_labels) {
    if (query_feats.empty() || ref_feats.empty()) return 0.0;
    int correct = 0;
    for (size_t q = 0; q < query_feats.size(); ++q) {
        double best = 1e300;
        int best_label = -1;
        for (size_t r = 0; r < ref_feats.size(); ++r) {
            const double d = l2sq(query_feats[q], ref_feats[r]);
            if (d < best) {
                best = d;
                best_label = ref_labels[r];
            }
        }
        if (best_label == query_labels[q]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(query_feats.size());
}

std::vector<double> ridge_probe_mae(const std::vector<std::vector<float>>& train_x,
                                    const std::vector<std::vector<float>>& train_y,
                                    const std::vector<std::vector<float>>& test_x,
                                    const std::vector<std::vector<float>>& test_y, double lambda) {
    Eigen::MatrixXd x = to_matrix(train_x), y = to_matrix(train_y);
    Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
    xb << x, Eigen::VectorXd::Ones(x.rows());
    Eigen::MatrixXd gram = xb.transpose() * xb +
                           lambda * Eigen::MatrixXd::Identity(xb.cols(), xb.cols());
    Eigen::MatrixXd w = gram.ldlt().solve(xb.transpose() * y);

    Eigen::MatrixXd tx = to_matrix(test_x), ty = to_matrix(test_y);
    Eigen::MatrixXd txb(tx.rows(), tx.cols() + 1);
    txb << tx, Eigen::VectorXd::Ones(tx.rows());
    Eigen::MatrixXd err = (txb * w - ty).cwiseAbs();
    std::vector<double> mae(static_cast<size_t>(ty.cols()));
    for (Eigen::Index j = 0; j < ty.cols(); ++j) mae[static_cast<size_t>(j)] = err.col(j).mean();
    return mae;
}

float estimate_slant(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("estimate_slant expects [3,H,W]");
    const int64_t h = image.dim(1), w = image.dim(2);
    const float* p = image.data();
    std::vector<float> gray(static_cast<size_t>(h * w));
    for (int64_t i = 0; i < h * w; ++i)
        gray[static_cast<size_t>(i)] =
            (p[i] + p[h * w + i] + p[2 * h * w + i]) / 3.0f;

    // adaptive ink mask: background sits at the median, deep ink near the 5th
    // percentile; threshold halfway keeps noisy background pixels out even
    // for light inks
    std::vector<float> sorted = gray;
    std::sort(sorted.begin(), sorted.end());
    const float med = sorted[sorted.size() / 2];
    const float deep = sorted[sorted.size() / 20];
    const float contrast = med - deep;
    if (contrast < 0.08f) return 0.0f;  // no legible strokes
    const float thr = med - 0.5f * contrast;
    auto weight = [&](int64_t y, int64_t x) {
        return std::max(0.0f, thr - gray[static_cast<size_t>(y * w + x)]);
    };

    // segment into characters at empty-column gaps, then regress x on height
    // with per-character centering: baseline wobble shifts whole characters
    // and cancels, while the within-character shear survives
    std::vector<double> colmass(static_cast<size_t>(w), 0.0);
    for (int64_t x = 0; x < w; ++x)
        for (int64_t y = 0; y < h; ++y) colmass[static_cast<size_t>(x)] += weight(y, x);

    double cov = 0.0, var = 0.0;
    int64_t x0 = 0;
    while (x0 < w) {
        while (x0 < w && colmass[static_cast<size_t>(x0)] <= 0.0) ++x0;
        int64_t x1 = x0;
        while (x1 < w && colmass[static_cast<size_t>(x1)] > 0.0) ++x1;
        if (x1 > x0) {
            double sw = 0.0, sx = 0.0, sy = 0.0;
            for (int64_t x = x0; x < x1; ++x)
                for (int64_t y = 0; y < h; ++y) {
                    const float wgt = weight(y, x);
                    if (wgt <= 0.0f) continue;
                    sw += wgt;
                    sx += wgt * static_cast<double>(x);
                    sy += wgt * static_cast<double>(y);
                }
            if (sw > 1.0) {
                const double mx = sx / sw, my = sy / sw;
                for (int64_t x = x0; x < x1; ++x)
                    for (int64_t y = 0; y < h; ++y) {
                        const float wgt = weight(y, x);
                        if (wgt <= 0.0f) continue;
                        const double dh = my - static_cast<double>(y);  // height grows upward
                        cov += wgt * (static_cast<double>(x) - mx) * dh;
                        var += wgt * dh * dh;
                    }
            }
        }
        x0 = x1;
    }
    if (var <= 0.0) return 0.0f;
    return std::atan(static_cast<float>(cov / var));
}

std::vector<std::vector<float>> latent_features(const LatentAutoencoder& ae,
                                                const std::vector<Tensor>& images) {
    NoGradGuard ng;
    std::vector<std::vector<float>> out;
    out.reserve(images.size());
    for (const Tensor& img : images) {
        Tensor x = img.rank() == 3 ? reshape(img, {1, 3, kGlyphH, kGlyphW}) : img;
        Tensor z = ae.encode(x);
        out.emplace_back(z.vec());
    }
    active_tape().clear();
    return out;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["codebook"] = {{"perplexity", codebook_perplexity}, {"usage_fraction", codebook_usage}};
    j["style_space"] = {{"writer_knn_accuracy", writer_knn_accuracy}, {"silhouette", silhouette}};
    j["probes"] = {{"slant_mae", slant_mae}, {"stroke_width_mae", stroke_mae}, {"ink_mae", ink_mae}};
    j["latent_frechet"] = {{"overall", frechet_overall}};
    for (const auto& [name, sm] : scenarios) {
        if (!sm.present) {
            j["latent_frechet"]["scenarios"][name] = nullptr;
            continue;
        }
        j["latent_frechet"]["scenarios"][name] = {{"count", sm.count}, {"frechet", sm.frechet}};
    }
    return j.dump(2);
}

EvalReport evaluate(GeneratorModel& model, const LatentAutoencoder& ae,
                    const DatasetManifest& manifest, const EvalOptions& opts) {
    NoGradGuard ng;
    EvalReport rep;
    const size_t n = manifest.entries.size();
    if (n == 0) throw UsageError("evaluate: empty manifest");

    std::set<int> seen(manifest.seen_writers.begin(), manifest.seen_writers.end());
    std::set<std::string> iv(manifest.iv_words.begin(), manifest.iv_words.end());

    // style features for every entry
    model.style.codebook().reset_usage();
    std::vector<std::vector<float>> feats(n);
    std::vector<Tensor> images(n);
    const int chunk = 16;
    for (size_t start = 0; start < n; start += chunk) {
        const size_t stop = std::min(n, start + chunk);
        Tensor batch = Tensor::zeros({static_cast<int64_t>(stop - start), 3, kGlyphH, kGlyphW});
        for (size_t i = start; i < stop; ++i) {
            images[i] = read_ppm(manifest.dir + "/" + manifest.entries[i].path);
            std::copy_n(images[i].data(), 3 * kGlyphH * kGlyphW,
                        batch.data() + static_cast<int64_t>(i - start) * 3 * kGlyphH * kGlyphW);
        }
        StyleFeatures sf = model.style.forward(batch);
        for (size_t i = start; i < stop; ++i) {
            const float* row = sf.global.data() + static_cast<int64_t>(i - start) * StyleExtractor::kFeatDim;
            feats[i].assign(row, row + StyleExtractor::kFeatDim);
        }
        active_tape().clear();
    }
    if (model.style.quantization_enabled()) {
        CodebookStats st = codebook_stats(model.style.codebook().usage);
        rep.codebook_perplexity = st.perplexity;
        rep.codebook_usage = st.usage_fraction;
    }

    // splits
    std::vector<size_t> train_idx, heldout_idx;
    for (size_t i = 0; i < n; ++i) {
        const auto& e = manifest.entries[i];
        if (seen.count(e.writer_id) && iv.count(e.text))
            train_idx.push_back(i);
        else
            heldout_idx.push_back(i);
    }

    // writer retrieval + silhouette on held-out features
    {
        std::vector<std::vector<float>> ref_f, q_f;
        std::vector<int> ref_l, q_l;
        for (size_t i : train_idx) {
            ref_f.push_back(feats[i]);
            ref_l.push_back(manifest.entries[i].writer_id);
        }
        for (size_t i : heldout_idx) {
            if (!seen.count(manifest.entries[i].writer_id)) continue;
            q_f.push_back(feats[i]);
            q_l.push_back(manifest.entries[i].writer_id);
        }
        rep.writer_knn_accuracy = knn_accuracy(ref_f, ref_l, q_f, q_l);

        std::vector<std::vector<float>> sil_f;
        std::vector<int> sil_l;
        for (size_t i : heldout_idx) {
            sil_f.push_back(feats[i]);
            sil_l.push_back(manifest.entries[i].writer_id);
        }
        rep.silhouette = silhouette_score(sil_f, sil_l);
    }

    // style-parameter probes
    if (!train_idx.empty() && !heldout_idx.empty()) {
        auto targets = [&](size_t i) {
            const WriterStyle& w = manifest.styles[static_cast<size_t>(manifest.entries[i].writer_id)];
            return std::vector<float>{w.slant, w.stroke_width, w.ink_rgb[0], w.ink_rgb[1],
                                      w.ink_rgb[2]};
        };
        std::vector<std::vector<float>> tx, ty, hx, hy;
        for (size_t i : train_idx) {
            tx.push_back(feats[i]);
            ty.push_back(targets(i));
        }
        for (size_t i : heldout_idx) {
            hx.push_back(feats[i]);
            hy.push_back(targets(i));
        }
        std::vector<double> mae = ridge_probe_mae(tx, ty, hx, hy);
        rep.slant_mae = mae[0];
        rep.stroke_mae = mae[1];
        rep.ink_mae = (mae[2] + mae[3] + mae[4]) / 3.0;
    }

    // per-scenario latent Fréchet (real vs generated)
    std::map<std::string, std::vector<size_t>> buckets;
    for (size_t i = 0; i < n; ++i) {
        const auto& e = manifest.entries[i];
        const std::string name = std::string(iv.count(e.text) ? "IV" : "OOV") + "-" +
                                 (seen.count(e.writer_id) ? "S" : "U");
        buckets[name].push_back(i);
    }
    std::map<int, std::vector<size_t>> by_writer;
    for (size_t i = 0; i < n; ++i) by_writer[manifest.entries[i].writer_id].push_back(i);

    RngStream pick(opts.seed, "eval/pick");
    std::vector<std::vector<float>> all_real, all_gen;
    for (const std::string name : {"IV-S", "OOV-S", "IV-U", "OOV-U"}) {
        ScenarioMetrics sm;
        auto it = buckets.find(name);
        if (it == buckets.end() || it->second.empty()) {
            rep.scenarios[name] = sm;  // absent
            continue;
        }
        std::vector<size_t> sel = it->second;
        for (size_t i = 0; i < sel.size(); ++i)
            std::swap(sel[i], sel[i + pick.next_below(sel.size() - i)]);
        if (static_cast<int>(sel.size()) > opts.samples_per_bucket)
            sel.resize(static_cast<size_t>(opts.samples_per_bucket));

        std::vector<Tensor> real_imgs, gen_imgs;
        for (size_t k = 0; k < sel.size(); ++k) {
            const size_t i = sel[k];
            const auto& e = manifest.entries[i];
            const auto& pool = by_writer[e.writer_id];
            size_t ref_i = pool[pick.next_below(pool.size())];
            if (pool.size() > 1)
                while (ref_i == i) ref_i = pool[pick.next_below(pool.size())];
            real_imgs.push_back(images[i]);
            gen_imgs.push_back(sample_image(model, ae, images[ref_i], e.text,
                                            opts.seed + 7919 * k, opts.sample_steps,
                                            opts.guidance));
        }
        auto rf = latent_features(ae, real_imgs);
        auto gf = latent_features(ae, gen_imgs);
        sm.count = static_cast<int>(sel.size());
        sm.frechet = frechet_distance(rf, gf);
        sm.present = true;
        rep.scenarios[name] = sm;
        all_real.insert(all_real.end(), rf.begin(), rf.end());
        all_gen.insert(all_gen.end(), gf.begin(), gf.end());
    }
    if (!all_real.empty()) rep.frechet_overall = frechet_distance(all_real, all_gen);
    active_tape().clear();
    return rep;
}

}  // namespace glyphdiff
