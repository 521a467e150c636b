#include "sfield/grid.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace sfield {

FieldGrid::FieldGrid(std::size_t r, std::size_t c) : resolution(r), channels(c) {
    if (r < 2) throw std::invalid_argument("FieldGrid: resolution must be >= 2");
    if (c < 1) throw std::invalid_argument("FieldGrid: channels must be >= 1");
    values.assign(r * r * r * c, 0.0);
}

FieldGrid init_grid(std::size_t resolution, std::size_t channels, InitScheme scheme, double param,
                    std::uint64_t seed) {
    if (!(param >= 0.0) || !std::isfinite(param))
        throw std::invalid_argument("init_grid: param must be finite and >= 0");
    FieldGrid grid(resolution, channels);
    if (param == 0.0) return grid;

    std::mt19937_64 rng(seed);
    if (scheme == InitScheme::uniform) {
        std::uniform_real_distribution<double> dist(-param, param);
        for (double& v : grid.values) v = dist(rng);
    } else {
        std::normal_distribution<double> dist(0.0, param);
        for (double& v : grid.values) v = dist(rng);
    }
    return grid;
}

namespace {

constexpr double kDomainSlack = 1e-9;  // coordinates this far outside [-1,1] clamp
constexpr double kNodeSnap = 1e-12;    // lattice-plane snap, keeps node queries exact

// Per-axis cell index and fraction for a coordinate in [-1,1].
void axis_cell(double v, std::size_t r, std::size_t& i0, double& f) {
    double u = (v + 1.0) * 0.5 * static_cast<double>(r - 1);
    const double snapped = std::nearbyint(u);
    if (std::abs(u - snapped) < kNodeSnap) u = snapped;
    if (u < 0.0) u = 0.0;
    const double top = static_cast<double>(r - 1);
    if (u > top) u = top;
    i0 = std::min(static_cast<std::size_t>(u), r - 2);
    f = u - static_cast<double>(i0);
}

double clamp_domain(double v) {
    if (v < -1.0 - kDomainSlack || v > 1.0 + kDomainSlack)
        throw std::domain_error("trilinear_stencil: coordinate outside [-1,1]");
    return std::min(1.0, std::max(-1.0, v));
}

}  // namespace

InterpEntry trilinear_stencil(const FieldGrid& grid, const Point3& q) {
    const std::size_t r = grid.resolution;
    if (r < 2) throw std::invalid_argument("trilinear_stencil: uninitialized grid");

    std::size_t ix, iy, iz;
    double fx, fy, fz;
    axis_cell(clamp_domain(q.x), r, ix, fx);
    axis_cell(clamp_domain(q.y), r, iy, fy);
    axis_cell(clamp_domain(q.z), r, iz, fz);

    const double wx[2] = {1.0 - fx, fx};
    const double wy[2] = {1.0 - fy, fy};
    const double wz[2] = {1.0 - fz, fz};

    InterpEntry e;
    std::size_t n = 0;
    for (std::size_t dx = 0; dx < 2; ++dx)
        for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dz = 0; dz < 2; ++dz, ++n) {
                e.nodes[n] = static_cast<std::uint32_t>(((ix + dx) * r + (iy + dy)) * r + (iz + dz));
                e.weights[n] = wx[dx] * wy[dy] * wz[dz];
            }
    return e;
}

std::vector<double> sample_trilinear(const FieldGrid& grid, const Point3& q, InterpEntry* entry) {
    const InterpEntry e = trilinear_stencil(grid, q);
    if (entry) *entry = e;

    std::vector<double> out(grid.channels, 0.0);
    for (std::size_t n = 0; n < 8; ++n) {
        const double w = e.weights[n];
        const double* node = grid.values.data() + static_cast<std::size_t>(e.nodes[n]) * grid.channels;
        for (std::size_t c = 0; c < grid.channels; ++c) out[c] += w * node[c];
    }
    return out;
}

std::vector<double> embed_neighborhood(const FieldGrid& grid, const LocalNeighborhood& nbhd,
                                       InterpTape* tape) {
    if (nbhd.normalized.empty())
        throw std::invalid_argument("embed_neighborhood: empty neighborhood");

    const std::size_t c = grid.channels;
    std::vector<double> best(c, 0.0);
    std::vector<std::uint32_t> argmax(c, 0);

    if (tape) {
        tape->points.clear();
        tape->points.reserve(nbhd.normalized.size());
    }

    std::vector<double> sample(c);
    for (std::size_t row = 0; row < nbhd.normalized.size(); ++row) {
        const InterpEntry e = trilinear_stencil(grid, nbhd.normalized[row]);
        if (tape) tape->points.push_back(e);

        for (std::size_t ch = 0; ch < c; ++ch) sample[ch] = 0.0;
        for (std::size_t n = 0; n < 8; ++n) {
            const double w = e.weights[n];
            const double* node = grid.values.data() + static_cast<std::size_t>(e.nodes[n]) * c;
            for (std::size_t ch = 0; ch < c; ++ch) sample[ch] += w * node[ch];
        }

        if (row == 0) {
            best = sample;
        } else {
            // Strict > keeps the earliest row on ties.
            for (std::size_t ch = 0; ch < c; ++ch)
                if (sample[ch] > best[ch]) {
                    best[ch] = sample[ch];
                    argmax[ch] = static_cast<std::uint32_t>(row);
                }
        }
    }

    if (tape) tape->argmax_row = std::move(argmax);
    return best;
}

std::vector<double> embed_cloud_row(const FieldGrid& grid, const PointCloud& cloud,
                                    const std::vector<std::size_t>& knn_order, InterpTape* tape) {
    if (knn_order.empty()) throw std::invalid_argument("embed_cloud_row: empty neighbor list");
    const Point3 center = cloud[knn_order[0]];
    std::vector<Point3> neighbors;
    neighbors.reserve(knn_order.size() - 1);
    for (std::size_t i = 1; i < knn_order.size(); ++i) neighbors.push_back(cloud[knn_order[i]]);
    const LocalNeighborhood nbhd = normalize_neighborhood(center, std::move(neighbors));
    return embed_neighborhood(grid, nbhd, tape);
}

EmbeddingMatrix embed_cloud(const FieldGrid& grid, const PointCloud& cloud, std::size_t k,
                            std::vector<InterpTape>* tapes) {
    if (cloud.empty()) throw std::invalid_argument("embed_cloud: empty cloud");
    if (k == 0) k = cloud.size() == 1 ? 1 : adaptive_k(cloud.size());
    if (k > cloud.size()) throw std::invalid_argument("embed_cloud: k exceeds cloud size");

    EmbeddingMatrix out(cloud.size(), grid.channels);
    if (tapes) tapes->assign(cloud.size(), InterpTape{});

    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const std::vector<std::size_t> order = knn_l1(cloud, cloud[i], k);
        const std::vector<double> row =
            embed_cloud_row(grid, cloud, order, tapes ? &(*tapes)[i] : nullptr);
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

void grad_embed_wrt_grid(const InterpTape& tape, std::span<const double> upstream,
                         FieldGrid& grad) {
    const std::size_t c = grad.channels;
    if (tape.argmax_row.size() != c || upstream.size() != c)
        throw std::invalid_argument("grad_embed_wrt_grid: channel count mismatch");

    for (std::size_t ch = 0; ch < c; ++ch) {
        const std::uint32_t row = tape.argmax_row[ch];
        if (row >= tape.points.size())
            throw std::invalid_argument("grad_embed_wrt_grid: tape argmax out of range");
        const InterpEntry& e = tape.points[row];
        for (std::size_t n = 0; n < 8; ++n) {
            if (e.nodes[n] >= grad.node_count())
                throw std::invalid_argument("grad_embed_wrt_grid: tape node outside grid");
            grad.values[static_cast<std::size_t>(e.nodes[n]) * c + ch] +=
                upstream[ch] * e.weights[n];
        }
    }
}

}  // namespace sfield
