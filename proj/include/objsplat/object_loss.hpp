#pragma once

#include "objsplat/common.hpp"
#include "objsplat/scene.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace objsplat {

/// One (n_g, n_n) level of the hierarchical grouping.
struct GroupLevelConfig {
    int group_count = 16;     // n_g
    int neighbor_count = 16;  // n_n
};

inline std::vector<GroupLevelConfig> default_group_levels() {
    return {{16, 16}, {32, 16}, {64, 32}};
}

/// Grouping of one object's points at one level: FPS-selected centers and
/// their nearest-neighbor index lists (neighbors exclude their own center
/// and may overlap between groups).
struct ObjectGrouping {
    int object_id = -1;
    std::vector<int> centers;
    std::vector<std::vector<int>> neighbors;
};

/// Deterministic greedy farthest point sampling. The seed is the point
/// farthest from the centroid; each next center maximizes the minimum
/// distance to the chosen set. Ties resolve to the lowest index.
inline std::vector<int> farthest_point_sample(const std::vector<Vec3>& points, int group_count) {
    const int n = int(points.size());
    if (n < group_count)
        throw InsufficientPoints("farthest_point_sample: " + std::to_string(n) + " points for " +
                                 std::to_string(group_count) + " groups");
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= double(n);

    int seed = 0;
    double best = -1;
    for (int i = 0; i < n; ++i) {
        double d = (points[i] - centroid).squaredNorm();
        if (d > best) {
            best = d;
            seed = i;
        }
    }
    std::vector<int> centers = {seed};
    std::vector<double> min_dist(n);
    for (int i = 0; i < n; ++i) min_dist[i] = (points[i] - points[seed]).squaredNorm();
    while (int(centers.size()) < group_count) {
        int next = 0;
        best = -1;
        for (int i = 0; i < n; ++i)
            if (min_dist[i] > best) {
                best = min_dist[i];
                next = i;
            }
        centers.push_back(next);
        for (int i = 0; i < n; ++i)
            min_dist[i] = std::min(min_dist[i], (points[i] - points[next]).squaredNorm());
    }
    return centers;
}

namespace detail {

// k nearest points to points[center], excluding the center itself.
// Distance ties resolve to the lower index.
inline std::vector<int> knn_of(const std::vector<Vec3>& points, int center, int k) {
    struct Entry {
        double d2;
        int idx;
    };
    std::vector<Entry> entries;
    entries.reserve(points.size() - 1);
    for (int i = 0; i < int(points.size()); ++i) {
        if (i == center) continue;
        entries.push_back({(points[i] - points[center]).squaredNorm(), i});
    }
    auto cmp = [](const Entry& a, const Entry& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        return a.idx < b.idx;
    };
    std::nth_element(entries.begin(), entries.begin() + (k - 1), entries.end(), cmp);
    entries.resize(k);
    std::sort(entries.begin(), entries.end(), cmp);
    std::vector<int> out(k);
    for (int i = 0; i < k; ++i) out[i] = entries[i].idx;
    return out;
}

}  // namespace detail

inline ObjectGrouping build_grouping(const std::vector<Vec3>& points, int object_id,
                                     const GroupLevelConfig& level) {
    if (int(points.size()) < level.group_count + level.neighbor_count)
        throw InsufficientPoints("build_grouping: too few points for level");
    ObjectGrouping g;
    g.object_id = object_id;
    g.centers = farthest_point_sample(points, level.group_count);
    g.neighbors.reserve(g.centers.size());
    for (int c : g.centers) g.neighbors.push_back(detail::knn_of(points, c, level.neighbor_count));
    return g;
}

/// Population variance of the per-center minimum inter-center distances.
/// When grad is given, accumulates d(loss)/d(point) * upstream into it
/// (selection of the nearest center is treated as fixed).
inline double distance_variance_loss(const std::vector<Vec3>& points,
                                     const std::vector<int>& centers,
                                     std::vector<Vec3>* grad = nullptr, double upstream = 1.0) {
    const int n = int(centers.size());
    if (n < 2) throw InsufficientPoints("distance_variance_loss: need at least 2 centers");
    std::vector<int> nearest(n);
    std::vector<double> dist(n);
    for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::max();
        int arg = -1;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = (points[centers[j]] - points[centers[i]]).norm();
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        nearest[i] = arg;
        dist[i] = best;
    }
    double mean = std::accumulate(dist.begin(), dist.end(), 0.0) / n;
    double var = 0;
    for (double d : dist) var += sqr(d - mean);
    var /= n;
    if (grad) {
        for (int i = 0; i < n; ++i) {
            if (dist[i] < 1e-12) continue;  // coincident pair, no direction
            double dvar_dd = 2.0 * (dist[i] - mean) / n;
            Vec3 dir = (points[centers[i]] - points[centers[nearest[i]]]) / dist[i];
            (*grad)[centers[i]] += upstream * dvar_dd * dir;
            (*grad)[centers[nearest[i]]] -= upstream * dvar_dd * dir;
        }
    }
    return var;
}

/// Population variance of the per-group neighbor distance sums
/// S_i = sum of |x - c_i| over the center's nearest neighbors.
inline double neighbor_sum_loss(const std::vector<Vec3>& points, const ObjectGrouping& grouping,
                                std::vector<Vec3>* grad = nullptr, double upstream = 1.0) {
    const int n = int(grouping.centers.size());
    std::vector<double> sums(n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j : grouping.neighbors[i])
            sums[i] += (points[j] - points[grouping.centers[i]]).norm();
    double mean = std::accumulate(sums.begin(), sums.end(), 0.0) / n;
    double var = 0;
    for (double s : sums) var += sqr(s - mean);
    var /= n;
    if (grad) {
        for (int i = 0; i < n; ++i) {
            double dvar_ds = 2.0 * (sums[i] - mean) / n;
            int ci = grouping.centers[i];
            for (int j : grouping.neighbors[i]) {
                double d = (points[j] - points[ci]).norm();
                if (d < 1e-12) continue;
                Vec3 dir = (points[j] - points[ci]) / d;
                (*grad)[j] += upstream * dvar_ds * dir;
                (*grad)[ci] -= upstream * dvar_ds * dir;
            }
        }
    }
    return var;
}

/// Weighted per-level loss a_S * L_S + a_d * L_d for one object's points at
/// one (already built) grouping.
inline double grouped_level_loss(const std::vector<Vec3>& points, const ObjectGrouping& grouping,
                                 double a_group_sum, double a_distance,
                                 std::vector<Vec3>* grad = nullptr) {
    double l_s = neighbor_sum_loss(points, grouping, grad, a_group_sum);
    double l_d = distance_variance_loss(points, grouping.centers, grad, a_distance);
    return a_group_sum * l_s + a_distance * l_d;
}

/// The full hierarchical object-aware loss: for every object and level with
/// at least n_g + n_n member gaussians, FPS centers -> kNN groups -> the two
/// variance terms. Levels without enough gaussians contribute zero. When
/// grad_means is given (sized like the scene), mean gradients accumulate
/// into it; the grouping itself is treated as piecewise constant.
inline double object_aware_loss(const SceneSnapshot& scene,
                                const std::vector<GroupLevelConfig>& levels,
                                double a_group_sum, double a_distance,
                                std::vector<Vec3>* grad_means = nullptr) {
    if (scene.object_count < 1) return 0.0;
    std::vector<std::vector<int>> members(scene.object_count);
    for (size_t i = 0; i < scene.gaussians.size(); ++i) {
        int obj = object_of(scene.gaussians[i]);
        if (obj < scene.object_count) members[obj].push_back(int(i));
    }
    double total = 0;
    for (int obj = 0; obj < scene.object_count; ++obj) {
        const auto& idx = members[obj];
        std::vector<Vec3> points(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) points[i] = scene.gaussians[idx[i]].mean;
        std::vector<Vec3> local_grad;
        for (const auto& level : levels) {
            if (int(points.size()) < level.group_count + level.neighbor_count) continue;
            ObjectGrouping grouping = build_grouping(points, obj, level);
            if (grad_means) {
                local_grad.assign(points.size(), Vec3::Zero());
                total += grouped_level_loss(points, grouping, a_group_sum, a_distance, &local_grad);
                for (size_t i = 0; i < idx.size(); ++i) (*grad_means)[idx[i]] += local_grad[i];
            } else {
                total += grouped_level_loss(points, grouping, a_group_sum, a_distance);
            }
        }
    }
    return total;
}

}  // namespace objsplat
