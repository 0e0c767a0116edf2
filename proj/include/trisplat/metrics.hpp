#pragma once

#include <span>

#include "trisplat/kdtree.hpp"
#include "trisplat/rng.hpp"
#include "trisplat/ssim.hpp"
#include "trisplat/synth.hpp"
#include "trisplat/triangle.hpp"

namespace ts {

struct EmptyPointSet : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Area-weighted uniform surface samples from a triangle soup.
inline std::vector<Vec3> sample_triangles(std::span<const TrianglePrimitive> tris, int count,
                                          Rng& rng) {
    std::vector<Vec3> out;
    if (tris.empty()) return out;
    std::vector<double> cum(tris.size());
    double total = 0;
    for (size_t i = 0; i < tris.size(); ++i) {
        total += tris[i].area();
        cum[i] = total;
    }
    if (total <= 0) return out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        double u = rng.uniform() * total;
        size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
        if (k >= tris.size()) k = tris.size() - 1;
        double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
        const auto& v = tris[k].vertices;
        out.push_back(v[0] * (1 - r1) + v[1] * (r1 * (1 - r2)) + v[2] * (r1 * r2));
    }
    return out;
}

inline std::vector<Vec3> sample_planes(std::span<const GtPlane> planes, int count, Rng& rng) {
    std::vector<Vec3> out;
    if (planes.empty()) return out;
    std::vector<double> cum(planes.size());
    double total = 0;
    for (size_t i = 0; i < planes.size(); ++i) {
        total += 4.0 * planes[i].half_u * planes[i].half_v;
        cum[i] = total;
    }
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        double u = rng.uniform() * total;
        size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
        if (k >= planes.size()) k = planes.size() - 1;
        const GtPlane& p = planes[k];
        out.push_back(p.center + p.axis_u * (p.half_u * rng.uniform(-1, 1)) +
                      p.axis_v * (p.half_v * rng.uniform(-1, 1)));
    }
    return out;
}

struct ChamferResult {
    double chamfer_cm;  // symmetric mean nearest-neighbor distance, cm
    double f_score;     // percent, at the given threshold
    double precision, recall;
};

inline ChamferResult chamfer_and_fscore(const std::vector<Vec3>& predicted,
                                        const std::vector<Vec3>& ground_truth,
                                        double tau = 0.05) {
    if (predicted.empty() || ground_truth.empty())
        throw EmptyPointSet("chamfer_and_fscore: empty point set");
    KdTree pred_tree(predicted);
    KdTree gt_tree(ground_truth);
    double sum_pg = 0;
    int within_pg = 0;
    for (const Vec3& p : predicted) {
        double d = std::sqrt(gt_tree.nearest_dist2(p));
        sum_pg += d;
        if (d <= tau) ++within_pg;
    }
    double sum_gp = 0;
    int within_gp = 0;
    for (const Vec3& g : ground_truth) {
        double d = std::sqrt(pred_tree.nearest_dist2(g));
        sum_gp += d;
        if (d <= tau) ++within_gp;
    }
    ChamferResult r;
    r.chamfer_cm = 100.0 * 0.5 * (sum_pg / predicted.size() + sum_gp / ground_truth.size());
    r.precision = 100.0 * within_pg / predicted.size();
    r.recall = 100.0 * within_gp / ground_truth.size();
    r.f_score = (r.precision + r.recall) > 0
                    ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                    : 0.0;
    return r;
}

// PSNR in dB; identical images return the +infinity sentinel.
inline double psnr(const ImageV3& a, const ImageV3& b) {
    if (!a.same_size(b.width(), b.height()))
        throw std::invalid_argument("psnr: image size mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        Vec3 d = a[i] - b[i];
        mse += dot(d, d);
    }
    mse /= 3.0 * a.size();
    if (mse <= 0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

struct MetricReport {
    double chamfer_cm = 0;
    double f_score = 0;
    double psnr_db = 0;
    double ssim = 0;
    int n_triangles = 0, n_gaussians = 0;
    double runtime_seconds = 0;
};

}  // namespace ts
