#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "trisplat/vec.hpp"

namespace ts {

struct VoxelKey {
    std::int32_t x, y, z;
    bool operator==(const VoxelKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelKeyHash {
    size_t operator()(const VoxelKey& k) const {
        std::uint64_t h = static_cast<std::uint32_t>(k.x) * 0x9E3779B97F4A7C15ull;
        h ^= static_cast<std::uint32_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6);
        h ^= static_cast<std::uint32_t>(k.z) * 0x165667B19E3779F9ull + (h >> 3);
        return static_cast<size_t>(h);
    }
};

// Spatial hash from quantized positions to triangle ids. Ids within a voxel
// are kept sorted so queries iterate deterministically.
class VoxelMap {
public:
    explicit VoxelMap(double voxel_size = 0.03) : size_(voxel_size) {}

    double voxel_size() const { return size_; }

    VoxelKey key_of(const Vec3& p) const {
        return {static_cast<std::int32_t>(std::floor(p.x / size_)),
                static_cast<std::int32_t>(std::floor(p.y / size_)),
                static_cast<std::int32_t>(std::floor(p.z / size_))};
    }

    void insert(std::int64_t id, const Vec3& pos) {
        auto& cell = cells_[key_of(pos)];
        cell.insert(std::lower_bound(cell.begin(), cell.end(), id), id);
    }

    void remove(std::int64_t id, const Vec3& pos) {
        auto it = cells_.find(key_of(pos));
        if (it == cells_.end()) return;
        auto& cell = it->second;
        auto pos_it = std::lower_bound(cell.begin(), cell.end(), id);
        if (pos_it != cell.end() && *pos_it == id) cell.erase(pos_it);
        if (cell.empty()) cells_.erase(it);
    }

    void move(std::int64_t id, const Vec3& old_pos, const Vec3& new_pos) {
        VoxelKey a = key_of(old_pos), b = key_of(new_pos);
        if (a == b) return;
        remove(id, old_pos);
        insert(id, new_pos);
    }

    const std::vector<std::int64_t>* ids_in(const VoxelKey& k) const {
        auto it = cells_.find(k);
        return it == cells_.end() ? nullptr : &it->second;
    }

    // Visits ids in every voxel overlapping the axis-aligned cube; may visit
    // an id whose position is outside the cube (caller rechecks).
    template <typename Fn>
    void for_each_in_cube(const Vec3& center, double half_extent, Fn&& fn) const {
        VoxelKey lo = key_of(center - Vec3{half_extent, half_extent, half_extent});
        VoxelKey hi = key_of(center + Vec3{half_extent, half_extent, half_extent});
        for (std::int32_t z = lo.z; z <= hi.z; ++z)
            for (std::int32_t y = lo.y; y <= hi.y; ++y)
                for (std::int32_t x = lo.x; x <= hi.x; ++x) {
                    auto it = cells_.find({x, y, z});
                    if (it == cells_.end()) continue;
                    for (std::int64_t id : it->second) fn(id);
                }
    }

    // 26-connected neighborhood plus the center voxel.
    template <typename Fn>
    void for_each_neighbor_voxel(const VoxelKey& k, Fn&& fn) const {
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    auto it = cells_.find({k.x + dx, k.y + dy, k.z + dz});
                    if (it == cells_.end()) continue;
                    for (std::int64_t id : it->second) fn(id);
                }
    }

    size_t cell_count() const { return cells_.size(); }
    size_t total_ids() const {
        size_t n = 0;
        for (const auto& [k, v] : cells_) n += v.size();
        return n;
    }
    void clear() { cells_.clear(); }

    const std::unordered_map<VoxelKey, std::vector<std::int64_t>, VoxelKeyHash>& cells() const {
        return cells_;
    }

private:
    double size_;
    std::unordered_map<VoxelKey, std::vector<std::int64_t>, VoxelKeyHash> cells_;
};

}  // namespace ts
