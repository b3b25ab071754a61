// Copyright Contributors to the lvslam project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "lvslam/geometry.hpp"

namespace lvslam {

struct Voxel {
    int x, y, z;
    bool operator==(const Voxel& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct VoxelHash {
    std::size_t operator()(const Voxel& v) const {
        return static_cast<std::size_t>(v.x) * 73856093u ^
               static_cast<std::size_t>(v.y) * 19349669u ^
               static_cast<std::size_t>(v.z) * 83492791u;
    }
};

inline Voxel point_to_voxel(const Vec3& p, double voxel_size) {
    return Voxel{static_cast<int>(std::floor(p.x() / voxel_size)),
                 static_cast<int>(std::floor(p.y() / voxel_size)),
                 static_cast<int>(std::floor(p.z() / voxel_size))};
}

/// Sparse voxel-indexed point store for scan-to-map registration.
/// Each stored point keeps its global insertion index so nearest-neighbor
/// ties resolve deterministically toward the earliest insertion.
class VoxelHashMap {
public:
    struct MapPoint {
        Vec3 position;
        std::uint64_t index;
    };

    VoxelHashMap(double voxel_size, int max_points_per_voxel, double map_range)
        : voxel_size_(voxel_size), max_points_per_voxel_(max_points_per_voxel),
          map_range_(map_range) {}

    double voxel_size() const { return voxel_size_; }
    int max_points_per_voxel() const { return max_points_per_voxel_; }
    double map_range() const { return map_range_; }

    bool empty() const { return storage_.empty(); }

    std::size_t point_count() const {
        std::size_t n = 0;
        for (const auto& [v, pts] : storage_) n += pts.size();
        return n;
    }

    std::size_t voxel_count() const { return storage_.size(); }

    void insert(const Vec3& p) {
        auto& bucket = storage_[point_to_voxel(p, voxel_size_)];
        if (static_cast<int>(bucket.size()) < max_points_per_voxel_)
            bucket.push_back(MapPoint{p, next_index_++});
    }

    /// Drops voxels whose center lies farther than map_range from `center`.
    void evict_beyond(const Vec3& center) {
        const double r2 = map_range_ * map_range_;
        for (auto it = storage_.begin(); it != storage_.end();) {
            const Vec3 c((it->first.x + 0.5) * voxel_size_, (it->first.y + 0.5) * voxel_size_,
                         (it->first.z + 0.5) * voxel_size_);
            if ((c - center).squaredNorm() > r2)
                it = storage_.erase(it);
            else
                ++it;
        }
    }

    /// Nearest neighbor over the 3x3x3 voxel neighborhood of the query.
    /// Distance ties break toward the lowest insertion index.
    bool nearest_neighbor(const Vec3& query, Vec3& out, double& dist) const {
        const Voxel v = point_to_voxel(query, voxel_size_);
        double best_d2 = std::numeric_limits<double>::infinity();
        std::uint64_t best_idx = std::numeric_limits<std::uint64_t>::max();
        const Vec3* best = nullptr;
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = storage_.find(Voxel{v.x + dx, v.y + dy, v.z + dz});
                    if (it == storage_.end()) continue;
                    for (const auto& mp : it->second) {
                        const double d2 = (mp.position - query).squaredNorm();
                        if (d2 < best_d2 || (d2 == best_d2 && mp.index < best_idx)) {
                            best_d2 = d2;
                            best_idx = mp.index;
                            best = &mp.position;
                        }
                    }
                }
        if (!best) return false;
        out = *best;
        dist = std::sqrt(best_d2);
        return true;
    }

    std::vector<Vec3> all_points() const {
        std::vector<MapPoint> tmp;
        tmp.reserve(point_count());
        for (const auto& [v, pts] : storage_) tmp.insert(tmp.end(), pts.begin(), pts.end());
        std::sort(tmp.begin(), tmp.end(),
                  [](const MapPoint& a, const MapPoint& b) { return a.index < b.index; });
        std::vector<Vec3> out;
        out.reserve(tmp.size());
        for (const auto& mp : tmp) out.push_back(mp.position);
        return out;
    }

private:
    double voxel_size_;
    int max_points_per_voxel_;
    double map_range_;
    std::uint64_t next_index_ = 0;
    std::unordered_map<Voxel, std::vector<MapPoint>, VoxelHash> storage_;
};

}  // namespace lvslam
