#pragma once

#include <algorithm>
#include <vector>

#include "trisplat/vec.hpp"

namespace ts {

// Static 3D kd-tree for nearest-neighbor queries over a point set.
class KdTree {
public:
    explicit KdTree(std::vector<Vec3> points) : pts_(std::move(points)) {
        idx_.resize(pts_.size());
        for (size_t i = 0; i < idx_.size(); ++i) idx_[i] = static_cast<int>(i);
        nodes_.reserve(pts_.size() * 2);
        if (!pts_.empty()) root_ = build(0, static_cast<int>(pts_.size()));
    }

    // squared distance to the nearest point; infinity for an empty tree
    double nearest_dist2(const Vec3& q) const {
        if (root_ < 0) return std::numeric_limits<double>::infinity();
        double best = std::numeric_limits<double>::infinity();
        search(root_, q, best);
        return best;
    }

    size_t size() const { return pts_.size(); }

private:
    struct Node {
        int axis;
        int point;      // index into idx_
        int left = -1, right = -1;
    };

    int build(int lo, int hi) {
        if (lo >= hi) return -1;
        // split along the widest axis of the range
        Vec3 mn{1e300, 1e300, 1e300}, mx{-1e300, -1e300, -1e300};
        for (int i = lo; i < hi; ++i) {
            const Vec3& p = pts_[idx_[i]];
            for (int a = 0; a < 3; ++a) {
                mn[a] = std::min(mn[a], p[a]);
                mx[a] = std::max(mx[a], p[a]);
            }
        }
        int axis = 0;
        double width = mx.x - mn.x;
        if (mx.y - mn.y > width) { axis = 1; width = mx.y - mn.y; }
        if (mx.z - mn.z > width) axis = 2;
        int mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                         [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
        Node n;
        n.axis = axis;
        n.point = mid;
        int self = static_cast<int>(nodes_.size());
        nodes_.push_back(n);
        int l = build(lo, mid);
        int r = build(mid + 1, hi);
        nodes_[self].left = l;
        nodes_[self].right = r;
        return self;
    }

    void search(int node, const Vec3& q, double& best) const {
        const Node& n = nodes_[node];
        const Vec3& p = pts_[idx_[n.point]];
        best = std::min(best, norm2(q - p));
        double delta = q[n.axis] - p[n.axis];
        int near = delta < 0 ? n.left : n.right;
        int far = delta < 0 ? n.right : n.left;
        if (near >= 0) search(near, q, best);
        if (far >= 0 && delta * delta < best) search(far, q, best);
    }

    std::vector<Vec3> pts_;
    std::vector<int> idx_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace ts
