#pragma once

#include <unordered_map>
#include <unordered_set>

#include "trisplat/adam.hpp"
#include "trisplat/gaussian.hpp"
#include "trisplat/voxel_map.hpp"

namespace ts {

struct UnknownKeyframe : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat Adam layouts so optimizer state survives insertion and pruning.
inline constexpr int kTriParamCount = 9 + 3 + kTriangleFeatureDim;          // 36
inline constexpr int kGaussParamCount = 3 + 3 * kShCoeffs + 1 + 3 + 4 + 8;  // 46

// The live map: triangle soup, anchored gaussians, decoder weights, spatial
// index, per-parameter optimizer moments, and the keyframe registry driving
// global map updates.
class Scene {
public:
    std::vector<TrianglePrimitive> triangles;
    std::vector<NeuralGaussian> gaussians;
    DecoderMLP mlp;
    VoxelMap voxels{0.03};
    std::vector<std::array<AdamMoment, kTriParamCount>> tri_moments;
    std::vector<std::array<AdamMoment, kGaussParamCount>> gauss_moments;
    std::vector<AdamMoment> mlp_moments;
    int adam_step_count = 0;

    Scene() { mlp_moments.resize(mlp.scale_mlp.param_count() + mlp.rot_mlp.param_count()); }

    std::int64_t add_triangle(TrianglePrimitive tri, std::vector<NeuralGaussian> anchored) {
        tri.id = next_triangle_id_++;
        for (auto& g : anchored) g.anchor = tri.id;
        tri_index_[tri.id] = static_cast<std::int32_t>(triangles.size());
        voxels.insert(tri.id, tri.barycenter());
        if (tri.source_keyframe >= 0) keyframes_.insert(tri.source_keyframe);
        triangles.push_back(std::move(tri));
        tri_moments.emplace_back();
        for (auto& g : anchored) {
            gaussians.push_back(std::move(g));
            gauss_moments.emplace_back();
        }
        return triangles.back().id;
    }

    void register_keyframe(std::int64_t id) { keyframes_.insert(id); }
    bool knows_keyframe(std::int64_t id) const { return keyframes_.count(id) > 0; }

    std::int32_t index_of(std::int64_t tri_id) const {
        auto it = tri_index_.find(tri_id);
        return it == tri_index_.end() ? -1 : it->second;
    }

    std::vector<std::int32_t> anchor_indices() const {
        std::vector<std::int32_t> out(gaussians.size());
        for (size_t i = 0; i < gaussians.size(); ++i) out[i] = index_of(gaussians[i].anchor);
        return out;
    }

    // Removes triangles with opacity < 0.5 together with their gaussians.
    // Returns (#triangles, #gaussians) removed.
    std::pair<int, int> prune(double opacity_threshold = 0.5) {
        std::unordered_set<std::int64_t> dead;
        for (const auto& t : triangles)
            if (t.opacity() < opacity_threshold) dead.insert(t.id);
        if (dead.empty()) return {0, 0};

        size_t tw = 0;
        for (size_t i = 0; i < triangles.size(); ++i) {
            if (dead.count(triangles[i].id)) {
                voxels.remove(triangles[i].id, triangles[i].barycenter());
                tri_index_.erase(triangles[i].id);
                continue;
            }
            if (tw != i) {
                triangles[tw] = std::move(triangles[i]);
                tri_moments[tw] = tri_moments[i];
            }
            tri_index_[triangles[tw].id] = static_cast<std::int32_t>(tw);
            ++tw;
        }
        int tri_removed = static_cast<int>(triangles.size() - tw);
        triangles.resize(tw);
        tri_moments.resize(tw);

        size_t gw = 0;
        for (size_t i = 0; i < gaussians.size(); ++i) {
            if (dead.count(gaussians[i].anchor)) continue;
            if (gw != i) {
                gaussians[gw] = std::move(gaussians[i]);
                gauss_moments[gw] = gauss_moments[i];
            }
            ++gw;
        }
        int gauss_removed = static_cast<int>(gaussians.size() - gw);
        gaussians.resize(gw);
        gauss_moments.resize(gw);
        return {tri_removed, gauss_removed};
    }

    // Rigid re-anchoring of all primitives born from one keyframe after its
    // pose moved from old_pose to new_pose.
    void global_map_update(std::int64_t keyframe_id, const RigidTransform& old_pose,
                           const RigidTransform& new_pose) {
        if (!knows_keyframe(keyframe_id))
            throw UnknownKeyframe("global_map_update: unregistered keyframe");
        if (old_pose.rotation.max_abs_diff(new_pose.rotation) == 0.0 &&
            norm(old_pose.translation - new_pose.translation) == 0.0)
            return;  // unchanged pose: keep the scene bit-identical
        RigidTransform delta = new_pose.compose(old_pose.inverse());
        Quaternion dq = matrix_to_quat(delta.rotation);

        std::unordered_map<std::int64_t, std::pair<Vec3, Vec3>> moved;  // id -> (mu old, new)
        for (auto& t : triangles) {
            if (t.source_keyframe != keyframe_id) continue;
            Vec3 mu_old = t.barycenter();
            for (auto& v : t.vertices) v = delta.apply(v);
            Vec3 mu_new = t.barycenter();
            voxels.move(t.id, mu_old, mu_new);
            moved[t.id] = {mu_old, mu_new};
        }
        if (moved.empty()) return;
        for (auto& g : gaussians) {
            auto it = moved.find(g.anchor);
            if (it == moved.end()) continue;
            const auto& [mu_old, mu_new] = it->second;
            g.offset = delta.apply(g.offset + mu_old) - mu_new;
            g.base_quat = dq * g.base_quat;  // preserves the stored magnitude
        }
    }

    // Referential integrity: every anchor resolves and every triangle
    // barycenter is indexed in exactly one voxel cell.
    bool check_integrity() const {
        for (const auto& g : gaussians)
            if (index_of(g.anchor) < 0) return false;
        if (voxels.total_ids() != triangles.size()) return false;
        for (const auto& t : triangles) {
            const auto* cell = voxels.ids_in(voxels.key_of(t.barycenter()));
            if (!cell) return false;
            if (!std::binary_search(cell->begin(), cell->end(), t.id)) return false;
        }
        return true;
    }

    std::int64_t next_triangle_id() const { return next_triangle_id_; }
    void set_next_triangle_id(std::int64_t v) { next_triangle_id_ = v; }
    const std::unordered_set<std::int64_t>& known_keyframes() const { return keyframes_; }

    // Rebuild derived indices (after checkpoint load).
    void reindex() {
        tri_index_.clear();
        voxels.clear();
        for (size_t i = 0; i < triangles.size(); ++i) {
            tri_index_[triangles[i].id] = static_cast<std::int32_t>(i);
            voxels.insert(triangles[i].id, triangles[i].barycenter());
            if (triangles[i].source_keyframe >= 0) keyframes_.insert(triangles[i].source_keyframe);
        }
    }

private:
    std::unordered_map<std::int64_t, std::int32_t> tri_index_;
    std::unordered_set<std::int64_t> keyframes_;
    std::int64_t next_triangle_id_ = 0;
};

}  // namespace ts
