#pragma once

#include <queue>
#include <span>
#include <unordered_set>

#include "trisplat/transform.hpp"
#include "trisplat/triangle.hpp"
#include "trisplat/voxel_map.hpp"

namespace ts {

// Fitted plane with its supporting triangles and a hull for export.
struct PlanarPrimitive {
    Vec3 normal;  // unit
    Vec3 center;
    std::vector<std::int64_t> inlier_ids;
    std::vector<Vec3> hull;  // convex hull of inlier barycenters on the plane
    double rms_residual = 0;
    std::vector<VoxelKey> voxel_keys;  // voxels containing inlier barycenters
};

struct ExtractionLevel {
    double dist_tol;    // meters
    double angle_tol;   // degrees
    int min_inliers;
};

// Progressively finer residual peeling; levels must have decreasing dist_tol.
struct ExtractionSchedule {
    std::vector<ExtractionLevel> levels = {
        {0.05, 15.0, 100}, {0.02, 8.0, 40}, {0.01, 5.0, 15}};

    void validate() const {
        for (size_t i = 1; i < levels.size(); ++i)
            if (levels[i].dist_tol >= levels[i - 1].dist_tol)
                throw std::invalid_argument("ExtractionSchedule: dist_tol must decrease");
    }
};

namespace planar_detail {

struct TriInfo {
    Vec3 barycenter;
    Vec3 normal;  // unit, consistent hemisphere not guaranteed
    double area;
    std::int64_t id;
    std::int32_t index;
};

// Area-weighted total least squares plane through barycenters.
struct PlaneFit {
    Vec3 normal, center;
    bool valid = false;
};

inline PlaneFit fit_plane(const std::vector<const TriInfo*>& members) {
    PlaneFit f;
    double wsum = 0;
    Vec3 mean{0, 0, 0};
    for (const auto* m : members) {
        wsum += m->area;
        mean += m->barycenter * m->area;
    }
    if (wsum <= 0) return f;
    mean = mean / wsum;
    Mat3 cov = Mat3::zero();
    for (const auto* m : members) {
        Vec3 d = m->barycenter - mean;
        cov += Mat3::outer(d, d) * m->area;
    }
    double eval[3];
    Mat3 evec;
    sym_eigen3(cov, eval, evec);
    f.normal = normalized(evec.col(0));  // smallest-variance direction
    f.center = mean;
    f.valid = true;
    return f;
}

// With fewer than 3 members the covariance is rank-deficient; fall back to
// the area-weighted mean triangle normal.
inline PlaneFit fit_plane_robust(const std::vector<const TriInfo*>& members) {
    if (members.size() >= 3) {
        PlaneFit f = fit_plane(members);
        // guard against collinear barycenters: align with member normals
        Vec3 ref = members[0]->normal;
        if (std::fabs(dot(f.normal, ref)) > 0.5) {
            if (dot(f.normal, ref) < 0) f.normal = -f.normal;
            return f;
        }
    }
    PlaneFit f;
    Vec3 n{0, 0, 0};
    double wsum = 0;
    Vec3 mean{0, 0, 0};
    Vec3 ref = members[0]->normal;
    for (const auto* m : members) {
        n += (dot(m->normal, ref) < 0 ? -m->normal : m->normal) * m->area;
        mean += m->barycenter * m->area;
        wsum += m->area;
    }
    f.normal = normalized(n);
    f.center = mean / wsum;
    f.valid = true;
    return f;
}

inline double angle_deg(const Vec3& a, const Vec3& b) {
    double c = std::clamp(std::fabs(dot(a, b)), 0.0, 1.0);  // hemisphere agnostic
    return std::acos(c) * 180.0 / M_PI;
}

// Andrew's monotone chain in the plane's 2D chart.
inline std::vector<Vec3> convex_hull_on_plane(const std::vector<Vec3>& pts, const Vec3& n,
                                              const Vec3& c) {
    Vec3 a = std::fabs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 t1 = normalized(cross(n, a));
    Vec3 t2 = cross(n, t1);
    std::vector<Vec2> uv;
    uv.reserve(pts.size());
    for (const Vec3& p : pts) uv.push_back({dot(t1, p - c), dot(t2, p - c)});
    std::sort(uv.begin(), uv.end(), [](const Vec2& x, const Vec2& y) {
        return x.u < y.u || (x.u == y.u && x.v < y.v);
    });
    uv.erase(std::unique(uv.begin(), uv.end(),
                         [](const Vec2& x, const Vec2& y) { return x.u == y.u && x.v == y.v; }),
             uv.end());
    auto cross2 = [](const Vec2& o, const Vec2& p, const Vec2& q) {
        return (p.u - o.u) * (q.v - o.v) - (p.v - o.v) * (q.u - o.u);
    };
    std::vector<Vec2> hull;
    if (uv.size() >= 3) {
        std::vector<Vec2> h(2 * uv.size());
        size_t k = 0;
        for (size_t i = 0; i < uv.size(); ++i) {
            while (k >= 2 && cross2(h[k - 2], h[k - 1], uv[i]) <= 0) --k;
            h[k++] = uv[i];
        }
        size_t lower = k + 1;
        for (size_t i = uv.size() - 1; i-- > 0;) {
            while (k >= lower && cross2(h[k - 2], h[k - 1], uv[i]) <= 0) --k;
            h[k++] = uv[i];
        }
        h.resize(k - 1);
        hull = std::move(h);
    } else {
        hull = uv;
    }
    std::vector<Vec3> out;
    out.reserve(hull.size());
    for (const Vec2& p : hull) out.push_back(c + t1 * p.u + t2 * p.v);
    return out;
}

}  // namespace planar_detail

// Region growing over voxel adjacency from one seed; returns the accepted
// plane or an empty optional-like flag through `found`.
namespace planar_detail {

struct GrowResult {
    bool accepted = false;
    PlanarPrimitive plane;
    std::vector<std::int32_t> member_indices;
};

inline GrowResult grow_region(const TriInfo& seed, const std::vector<TriInfo>& infos,
                              const VoxelMap& voxels,
                              const std::unordered_map<std::int64_t, std::int32_t>& index_of,
                              const std::vector<char>& assigned, const ExtractionLevel& level) {
    GrowResult out;
    std::vector<const TriInfo*> members = {&seed};
    std::vector<std::int32_t> member_idx = {seed.index};
    std::unordered_set<std::int32_t> in_region = {seed.index};
    PlaneFit plane{seed.normal, seed.barycenter, true};

    std::vector<std::int32_t> frontier = {seed.index};
    while (!frontier.empty()) {
        std::vector<std::int32_t> batch;
        std::unordered_set<std::int32_t> batch_seen;
        for (std::int32_t fi : frontier) {
            voxels.for_each_neighbor_voxel(voxels.key_of(infos[fi].barycenter),
                                           [&](std::int64_t nid) {
                auto it = index_of.find(nid);
                if (it == index_of.end()) return;
                std::int32_t ni = it->second;
                if (assigned[ni] || in_region.count(ni) || batch_seen.count(ni)) return;
                const TriInfo& cand = infos[ni];
                if (std::fabs(dot(plane.normal, cand.barycenter - plane.center)) >=
                    level.dist_tol)
                    return;
                if (angle_deg(plane.normal, cand.normal) >= level.angle_tol) return;
                batch_seen.insert(ni);
                batch.push_back(ni);
            });
        }
        if (batch.empty()) break;
        std::sort(batch.begin(), batch.end());
        for (std::int32_t ni : batch) {
            in_region.insert(ni);
            members.push_back(&infos[ni]);
            member_idx.push_back(ni);
        }
        plane = fit_plane_robust(members);
        frontier = std::move(batch);
    }

    if (static_cast<int>(members.size()) < level.min_inliers) return out;
    out.accepted = true;
    out.member_indices = std::move(member_idx);
    PlanarPrimitive& p = out.plane;
    p.normal = plane.normal;
    p.center = plane.center;
    double ss = 0;
    std::vector<Vec3> barys;
    std::unordered_set<std::uint64_t> seen_keys;
    for (const auto* m : members) {
        p.inlier_ids.push_back(m->id);
        double d = dot(p.normal, m->barycenter - p.center);
        ss += d * d;
        barys.push_back(m->barycenter);
        VoxelKey k = voxels.key_of(m->barycenter);
        std::uint64_t kk = VoxelKeyHash{}(k);
        if (seen_keys.insert(kk).second) p.voxel_keys.push_back(k);
    }
    p.rms_residual = std::sqrt(ss / members.size());
    p.hull = convex_hull_on_plane(barys, p.normal, p.center);
    return out;
}

inline std::vector<TriInfo> collect_infos(std::span<const TrianglePrimitive> tris) {
    std::vector<TriInfo> infos;
    infos.reserve(tris.size());
    for (size_t i = 0; i < tris.size(); ++i) {
        Vec3 c = tris[i].raw_normal();
        double cn = norm(c);
        if (cn <= kDegenerateCrossNorm) continue;
        TriInfo info{tris[i].barycenter(), c / cn, 0.5 * cn, tris[i].id,
                     static_cast<std::int32_t>(infos.size())};
        infos.push_back(info);
    }
    return infos;
}

}  // namespace planar_detail

// Coarse-to-fine residual peeling: at each level, seed from the unassigned
// pool largest-area first, grow over 26-neighborhood voxel adjacency with
// the level's distance/angle gates, refit after each accretion batch, and
// accept regions meeting the inlier minimum.
inline std::vector<PlanarPrimitive> extract_planes(std::span<const TrianglePrimitive> triangles,
                                                   const VoxelMap& voxels,
                                                   const ExtractionSchedule& schedule = {}) {
    using namespace planar_detail;
    schedule.validate();
    std::vector<TriInfo> infos = collect_infos(triangles);
    std::unordered_map<std::int64_t, std::int32_t> index_of;  // id -> position in infos
    for (const auto& inf : infos) index_of[inf.id] = inf.index;
    std::vector<char> assigned(infos.size(), 0);
    std::vector<PlanarPrimitive> out;

    for (const ExtractionLevel& level : schedule.levels) {
        // seeds: unassigned, largest area first, id tie-break
        std::vector<std::int32_t> order(infos.size());
        for (size_t i = 0; i < infos.size(); ++i) order[i] = static_cast<std::int32_t>(i);
        std::sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
            return infos[a].area > infos[b].area ||
                   (infos[a].area == infos[b].area && infos[a].id < infos[b].id);
        });
        std::vector<char> tried(infos.size(), 0);
        for (std::int32_t si : order) {
            if (assigned[si] || tried[si]) continue;
            tried[si] = 1;
            GrowResult grown =
                grow_region(infos[si], infos, voxels, index_of, assigned, level);
            if (!grown.accepted) continue;
            for (std::int32_t mi : grown.member_indices) assigned[mi] = 1;
            out.push_back(std::move(grown.plane));
        }
    }
    return out;
}

// Single-level extraction used online; equivalent to running only the
// coarsest schedule level.
inline std::vector<PlanarPrimitive> online_extract(std::span<const TrianglePrimitive> triangles,
                                                   const VoxelMap& voxels,
                                                   const ExtractionLevel& level = {0.05, 15.0,
                                                                                   100}) {
    ExtractionSchedule one;
    one.levels = {level};
    return extract_planes(triangles, voxels, one);
}

// --- plane-guided pose refinement --------------------------------------------

struct RefinePoint {
    Vec3 position;  // world frame, under the initial pose estimate
    double confidence = 1.0;
};

enum class RefineStatus { kConverged, kMaxIterations, kNotEnoughConstraints, kDiverged };

struct RefineResult {
    RigidTransform pose;  // corrected world_from_camera... applied on the left
    RefineStatus status = RefineStatus::kConverged;
    int iterations = 0;
    double final_cost = 0;
    int associations = 0;
};

namespace planar_detail {

inline double huber(double r, double k) {
    double a = std::fabs(r);
    return a <= k ? 0.5 * r * r : k * (a - 0.5 * k);
}
inline double huber_weight(double r, double k) {
    double a = std::fabs(r);
    return a <= k ? 1.0 : k / a;
}

}  // namespace planar_detail

// Gauss-Newton point-to-plane alignment of a point set against the extracted
// planes, association fixed per iteration via the voxel lookup. Returns a
// LEFT-multiplied correction T so aligned points are T * p.
inline RefineResult point_to_plane_refine(std::span<const RefinePoint> points,
                                          std::span<const PlanarPrimitive> planes,
                                          const VoxelMap& voxels,
                                          const RigidTransform& initial = RigidTransform::identity(),
                                          double huber_k = 0.01, int max_iterations = 10,
                                          int min_pairs = 20, double assoc_gate = 0.04) {
    using namespace planar_detail;
    RefineResult out;
    out.pose = initial;

    // voxel -> supporting planes table; corner voxels list several
    std::unordered_map<VoxelKey, std::vector<std::int32_t>, VoxelKeyHash> voxel_plane;
    for (size_t pi = 0; pi < planes.size(); ++pi)
        for (const VoxelKey& k : planes[pi].voxel_keys)
            voxel_plane[k].push_back(static_cast<std::int32_t>(pi));

    // associate with the nearest of the voxel's planes, gated by distance
    auto associate = [&](const Vec3& p) -> std::int32_t {
        auto it = voxel_plane.find(voxels.key_of(p));
        if (it == voxel_plane.end()) return -1;
        std::int32_t best = -1;
        double best_r = assoc_gate;
        for (std::int32_t pi : it->second) {
            double r = std::fabs(dot(planes[pi].normal, p - planes[pi].center));
            if (r <= best_r) {
                best_r = r;
                best = pi;
            }
        }
        return best;
    };

    auto cost_of = [&](const RigidTransform& T, int& pairs) {
        double c = 0;
        pairs = 0;
        for (const auto& pt : points) {
            Vec3 x = T.apply(pt.position);
            std::int32_t pl = associate(x);
            if (pl < 0) continue;
            ++pairs;
            double r = dot(planes[pl].normal, x - planes[pl].center);
            c += pt.confidence * huber(r, huber_k);
        }
        return c;
    };

    int pairs = 0;
    double cost = cost_of(out.pose, pairs);
    out.associations = pairs;
    if (pairs < min_pairs) {
        out.status = RefineStatus::kNotEnoughConstraints;
        return out;
    }

    for (int iter = 0; iter < max_iterations; ++iter) {
        // normal equations over se(3), translation first
        double H[6][6] = {}, b[6] = {};
        int used = 0;
        for (const auto& pt : points) {
            Vec3 x = out.pose.apply(pt.position);
            std::int32_t pl = associate(x);
            if (pl < 0) continue;
            const Vec3& n = planes[pl].normal;
            double r = dot(n, x - planes[pl].center);
            double w = pt.confidence * huber_weight(r, huber_k);
            Vec3 xn = cross(x, n);
            double J[6] = {n.x, n.y, n.z, xn.x, xn.y, xn.z};
            for (int i = 0; i < 6; ++i) {
                b[i] -= w * J[i] * r;
                for (int j = i; j < 6; ++j) H[i][j] += w * J[i] * J[j];
            }
            ++used;
        }
        if (used < min_pairs) break;
        double damping = 0;
        for (int i = 0; i < 6; ++i) damping = std::max(damping, H[i][i]);
        damping = std::max(damping * 1e-9, 1e-12);
        for (int i = 0; i < 6; ++i) {
            H[i][i] += damping;
            for (int j = 0; j < i; ++j) H[i][j] = H[j][i];
        }
        // cholesky solve
        double L[6][6] = {};
        bool ok = true;
        for (int i = 0; i < 6 && ok; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = H[i][j];
                for (int k = 0; k < j; ++k) s -= L[i][k] * L[j][k];
                if (i == j) {
                    if (s <= 0) { ok = false; break; }
                    L[i][i] = std::sqrt(s);
                } else {
                    L[i][j] = s / L[j][j];
                }
            }
        }
        if (!ok) break;
        double y[6], xi[6];
        for (int i = 0; i < 6; ++i) {
            double s = b[i];
            for (int k = 0; k < i; ++k) s -= L[i][k] * y[k];
            y[i] = s / L[i][i];
        }
        for (int i = 5; i >= 0; --i) {
            double s = y[i];
            for (int k = i + 1; k < 6; ++k) s -= L[k][i] * xi[k];
            xi[i] = s / L[i][i];
        }

        double step_norm = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
        if (step_norm > 1.0) {
            out.status = RefineStatus::kDiverged;
            out.pose = initial;
            return out;
        }

        // halving line search on the objective
        double scale = 1.0;
        bool accepted = false;
        for (int h = 0; h < 8; ++h) {
            double xs[6];
            for (int i = 0; i < 6; ++i) xs[i] = xi[i] * scale;
            RigidTransform trial = se3_exp(xs).compose(out.pose);
            int tp = 0;
            double tc = cost_of(trial, tp);
            if (tc <= cost && tp >= min_pairs) {
                out.pose = trial;
                cost = tc;
                out.associations = tp;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        ++out.iterations;
        if (!accepted) break;
        double upd = 0;
        for (int i = 0; i < 6; ++i) upd += xi[i] * xi[i] * scale * scale;
        if (std::sqrt(upd) < 1e-10) break;
    }
    out.final_cost = cost;
    if (out.iterations >= max_iterations) out.status = RefineStatus::kMaxIterations;
    return out;
}

}  // namespace ts
