#include "sfield/geometry.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace sfield {

std::vector<std::size_t> knn_l1(const PointCloud& cloud, const Point3& query, std::size_t k) {
    if (cloud.empty()) throw std::invalid_argument("knn_l1: empty cloud");
    if (k < 1 || k > cloud.size()) throw std::invalid_argument("knn_l1: k out of range");

    // (distance, index) pairs; the pair order encodes the tie rule.
    std::vector<std::pair<double, std::size_t>> dist(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        dist[i] = {l1_distance(cloud[i], query), i};

    std::nth_element(dist.begin(), dist.begin() + (k - 1), dist.end());
    std::sort(dist.begin(), dist.begin() + k);

    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
    return out;
}

std::vector<std::size_t> radius_neighbors_l1(const PointCloud& cloud, const Point3& query,
                                             double radius) {
    if (cloud.empty()) throw std::invalid_argument("radius_neighbors_l1: empty cloud");
    if (!(radius >= 0.0)) throw std::invalid_argument("radius_neighbors_l1: negative radius");

    std::vector<std::pair<double, std::size_t>> hits;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const double d = l1_distance(cloud[i], query);
        if (d <= radius) hits.emplace_back(d, i);
    }
    std::sort(hits.begin(), hits.end());

    std::vector<std::size_t> out(hits.size());
    for (std::size_t i = 0; i < hits.size(); ++i) out[i] = hits[i].second;
    return out;
}

LocalNeighborhood normalize_neighborhood(const Point3& center, std::vector<Point3> neighbors,
                                         std::optional<double> scale_override) {
    double s = 0.0;
    if (scale_override) {
        s = *scale_override;
    } else {
        for (const Point3& p : neighbors) s = std::max(s, linf_norm(p - center));
    }

    LocalNeighborhood out;
    out.center = center;
    out.normalized.reserve(neighbors.size() + 1);
    out.normalized.push_back({0.0, 0.0, 0.0});
    // s <= 0 covers coincident points, an empty neighbor list without an
    // override, and nonsensical overrides; all collapse to the origin.
    if (s > 0.0) {
        const double inv = 1.0 / s;
        for (const Point3& p : neighbors) out.normalized.push_back(inv * (p - center));
    } else {
        out.normalized.resize(neighbors.size() + 1, {0.0, 0.0, 0.0});
    }
    out.neighbors = std::move(neighbors);
    return out;
}

std::size_t adaptive_k(std::size_t total_points, std::size_t base_k, std::size_t base_n) {
    if (total_points < 2) throw std::invalid_argument("adaptive_k: need at least 2 points");
    if (base_k < 1 || base_n < 1) throw std::invalid_argument("adaptive_k: bad base counts");

    const double raw = static_cast<double>(base_k) * static_cast<double>(total_points) /
                       static_cast<double>(base_n);
    auto k = static_cast<std::size_t>(std::llround(raw));
    k = std::max<std::size_t>(k, 4);
    k = std::min(k, total_points);
    return k;
}

double chamfer_distance(const PointCloud& a, const PointCloud& b, ChamferMatch* match) {
    if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty cloud");

    if (match) {
        match->nearest_in_b.assign(a.size(), 0);
        match->nearest_in_a.assign(b.size(), 0);
    }

    auto one_way = [&](const PointCloud& from, const PointCloud& to,
                       std::vector<std::size_t>* nearest) {
        double total = 0.0;
        for (std::size_t i = 0; i < from.size(); ++i) {
            double best = squared_distance(from[i], to[0]);
            std::size_t best_j = 0;
            for (std::size_t j = 1; j < to.size(); ++j) {
                const double d = squared_distance(from[i], to[j]);
                if (d < best) {
                    best = d;
                    best_j = j;
                }
            }
            total += best;
            if (nearest) (*nearest)[i] = best_j;
        }
        return total / static_cast<double>(from.size());
    };

    return one_way(a, b, match ? &match->nearest_in_b : nullptr) +
           one_way(b, a, match ? &match->nearest_in_a : nullptr);
}

}  // namespace sfield
