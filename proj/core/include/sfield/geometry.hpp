#pragma once

// Point-set primitives: L1 neighbor queries, neighborhood normalization and
// the Chamfer pseudo-metric. Everything here is exact brute force and fully
// deterministic; ties are always broken toward the lower point index so the
// same inputs give the same neighbor lists on every platform.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace sfield {

struct Point3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
};

inline Point3 operator+(const Point3& a, const Point3& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Point3 operator-(const Point3& a, const Point3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Point3 operator*(double s, const Point3& p) { return {s * p.x, s * p.y, s * p.z}; }
inline Point3 operator*(const Point3& p, double s) { return s * p; }
inline bool operator==(const Point3& a, const Point3& b) { return a.x == b.x && a.y == b.y && a.z == b.z; }

inline double l1_distance(const Point3& a, const Point3& b) {
    return std::abs(a.x - b.x) + std::abs(a.y - b.y) + std::abs(a.z - b.z);
}
inline double linf_norm(const Point3& p) {
    return std::max(std::abs(p.x), std::max(std::abs(p.y), std::abs(p.z)));
}
inline double squared_distance(const Point3& a, const Point3& b) {
    const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
    return dx * dx + dy * dy + dz * dz;
}
inline bool is_finite(const Point3& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && std::isfinite(p.z);
}

using PointCloud = std::vector<Point3>;

// A query point together with its neighbors, both in original coordinates
// and mapped into the canonical cube [-1,1]^3 (center at the origin).
// `normalized` always has the center first, so it holds one more point
// than `neighbors`.
struct LocalNeighborhood {
    Point3 center;
    std::vector<Point3> neighbors;
    std::vector<Point3> normalized;
};

// Indices of the k nearest points to `query` under the L1 (Manhattan)
// metric, ordered by (distance, index) ascending. Exact O(N) scan per
// query; if the query coincides with a cloud member, that member sorts
// first. Throws std::invalid_argument when the cloud is empty or k is
// outside [1, N].
std::vector<std::size_t> knn_l1(const PointCloud& cloud, const Point3& query, std::size_t k);

// All indices with L1 distance <= radius, same (distance, index) order.
// radius < 0 or an empty cloud is an error; an empty result is not.
std::vector<std::size_t> radius_neighbors_l1(const PointCloud& cloud, const Point3& query,
                                             double radius);

// Map a neighborhood into [-1,1]^3: subtract the center, then divide by the
// largest per-axis (L-inf) deviation so the farthest neighbor touches a face
// of the cube. `scale_override` substitutes that divisor, which callers with
// a fixed receptive radius use to keep scale comparable across queries.
// Degenerate scale (all points coincident, or no neighbors and no override)
// normalizes everything to the origin rather than failing.
LocalNeighborhood normalize_neighborhood(const Point3& center, std::vector<Point3> neighbors,
                                         std::optional<double> scale_override = std::nullopt);

// Neighborhood size that keeps point density roughly constant:
// round(base_k * total_points / base_n), clamped to [4, total_points].
// Defaults correspond to 64 neighbors at a 2048-point cloud.
std::size_t adaptive_k(std::size_t total_points, std::size_t base_k = 64,
                       std::size_t base_n = 2048);

// Records the nearest-neighbor assignment chamfer_distance used, so a
// caller differentiating through it can treat the matching as constant.
struct ChamferMatch {
    std::vector<std::size_t> nearest_in_b;  // per point of a
    std::vector<std::size_t> nearest_in_a;  // per point of b
};

// Symmetric Chamfer pseudo-metric: mean over a of the squared Euclidean
// distance to the closest point of b, plus the same with roles swapped.
// Both clouds must be non-empty.
double chamfer_distance(const PointCloud& a, const PointCloud& b, ChamferMatch* match = nullptr);

}  // namespace sfield
