#pragma once

#include <fstream>

#include "trisplat/io/pfm.hpp"
#include "trisplat/scene.hpp"

namespace ts {

struct CorruptCheckpoint : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary scene container: triangles, gaussians, decoder weights, id counter,
// keyframe registry. Little-endian, fixed field order, bit-stable across
// identical runs.
namespace checkpoint_detail {

inline constexpr char kMagic[8] = {'T', 'S', 'P', 'L', 'A', 'T', '0', '1'};

template <typename T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
}

inline void put_vec(std::ofstream& f, const std::vector<double>& v) {
    std::uint64_t n = v.size();
    put(f, n);
    f.write(reinterpret_cast<const char*>(v.data()), n * sizeof(double));
}
inline void get_vec(std::ifstream& f, std::vector<double>& v) {
    std::uint64_t n = 0;
    get(f, n);
    v.resize(n);
    f.read(reinterpret_cast<char*>(v.data()), n * sizeof(double));
}

}  // namespace checkpoint_detail

inline void save_checkpoint(const std::string& path, const Scene& scene) {
    using namespace checkpoint_detail;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_checkpoint: cannot open " + path);
    f.write(kMagic, 8);
    put<std::uint64_t>(f, scene.triangles.size());
    put<std::uint64_t>(f, scene.gaussians.size());
    put<std::int64_t>(f, scene.next_triangle_id());
    put<std::int32_t>(f, scene.adam_step_count);

    for (const auto& t : scene.triangles) {
        put(f, t.id);
        put(f, t.source_keyframe);
        for (const auto& v : t.vertices) {
            put(f, v.x);
            put(f, v.y);
            put(f, v.z);
        }
        put(f, t.opacity_logit);
        put(f, t.log_sharpness);
        put(f, t.log_smoothness);
        for (double c : t.context_feature) put(f, c);
    }
    for (const auto& g : scene.gaussians) {
        put(f, g.anchor);
        put(f, g.offset.x);
        put(f, g.offset.y);
        put(f, g.offset.z);
        for (const auto& sh : g.sh) {
            put(f, sh.x);
            put(f, sh.y);
            put(f, sh.z);
        }
        put(f, g.opacity_logit);
        put(f, g.log_scale.x);
        put(f, g.log_scale.y);
        put(f, g.log_scale.z);
        put(f, g.base_quat.w);
        put(f, g.base_quat.x);
        put(f, g.base_quat.y);
        put(f, g.base_quat.z);
        for (double c : g.feature) put(f, c);
    }
    put_vec(f, scene.mlp.scale_mlp.w1);
    put_vec(f, scene.mlp.scale_mlp.b1);
    put_vec(f, scene.mlp.scale_mlp.w2);
    put_vec(f, scene.mlp.scale_mlp.b2);
    put_vec(f, scene.mlp.rot_mlp.w1);
    put_vec(f, scene.mlp.rot_mlp.b1);
    put_vec(f, scene.mlp.rot_mlp.w2);
    put_vec(f, scene.mlp.rot_mlp.b2);

    std::vector<std::int64_t> kfs(scene.known_keyframes().begin(),
                                  scene.known_keyframes().end());
    std::sort(kfs.begin(), kfs.end());
    put<std::uint64_t>(f, kfs.size());
    for (auto id : kfs) put(f, id);
    if (!f) throw IoError("save_checkpoint: write failed " + path);
}

inline Scene load_checkpoint(const std::string& path) {
    using namespace checkpoint_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw CorruptCheckpoint("load_checkpoint: bad magic/version in " + path);
    std::uint64_t n_tri = 0, n_gauss = 0;
    std::int64_t next_id = 0;
    std::int32_t adam_t = 0;
    get(f, n_tri);
    get(f, n_gauss);
    get(f, next_id);
    get(f, adam_t);

    Scene scene;
    scene.triangles.resize(n_tri);
    scene.tri_moments.resize(n_tri);
    for (auto& t : scene.triangles) {
        get(f, t.id);
        get(f, t.source_keyframe);
        for (auto& v : t.vertices) {
            get(f, v.x);
            get(f, v.y);
            get(f, v.z);
        }
        get(f, t.opacity_logit);
        get(f, t.log_sharpness);
        get(f, t.log_smoothness);
        for (double& c : t.context_feature) get(f, c);
    }
    scene.gaussians.resize(n_gauss);
    scene.gauss_moments.resize(n_gauss);
    for (auto& g : scene.gaussians) {
        get(f, g.anchor);
        get(f, g.offset.x);
        get(f, g.offset.y);
        get(f, g.offset.z);
        for (auto& sh : g.sh) {
            get(f, sh.x);
            get(f, sh.y);
            get(f, sh.z);
        }
        get(f, g.opacity_logit);
        get(f, g.log_scale.x);
        get(f, g.log_scale.y);
        get(f, g.log_scale.z);
        get(f, g.base_quat.w);
        get(f, g.base_quat.x);
        get(f, g.base_quat.y);
        get(f, g.base_quat.z);
        for (double& c : g.feature) get(f, c);
    }
    get_vec(f, scene.mlp.scale_mlp.w1);
    get_vec(f, scene.mlp.scale_mlp.b1);
    get_vec(f, scene.mlp.scale_mlp.w2);
    get_vec(f, scene.mlp.scale_mlp.b2);
    get_vec(f, scene.mlp.rot_mlp.w1);
    get_vec(f, scene.mlp.rot_mlp.b1);
    get_vec(f, scene.mlp.rot_mlp.w2);
    get_vec(f, scene.mlp.rot_mlp.b2);

    std::uint64_t n_kf = 0;
    get(f, n_kf);
    for (std::uint64_t i = 0; i < n_kf; ++i) {
        std::int64_t id;
        get(f, id);
        scene.register_keyframe(id);
    }
    if (!f) throw CorruptCheckpoint("load_checkpoint: truncated file " + path);
    scene.adam_step_count = adam_t;
    scene.set_next_triangle_id(next_id);
    scene.reindex();
    return scene;
}

}  // namespace ts
