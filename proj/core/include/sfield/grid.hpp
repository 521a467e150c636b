#pragma once

// The learnable shape field: an R x R x R lattice of C-channel feature
// vectors spanning [-1,1]^3. A neighborhood's embedding is the channel-wise
// max over the trilinearly interpolated features of its normalized points,
// so each embedding touches at most 8*K grid nodes. Node coordinates follow
// the align-corners convention: node i sits at -1 + 2*i/(R-1).

#include <array>
#include <cstdint>
#include <vector>

#include "sfield/geometry.hpp"
#include "sfield/matrix.hpp"

namespace sfield {

struct FieldGrid {
    std::size_t resolution = 0;  // R, nodes per axis (>= 2)
    std::size_t channels = 0;    // C (>= 1)
    std::vector<double> values;  // [ix][iy][iz][c], ix slowest

    FieldGrid() = default;
    FieldGrid(std::size_t r, std::size_t c);  // zero-filled

    std::size_t node_count() const { return resolution * resolution * resolution; }
    std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz, std::size_t c) const {
        return ((ix * resolution + iy) * resolution + iz) * channels + c;
    }
    double& at(std::size_t ix, std::size_t iy, std::size_t iz, std::size_t c) {
        return values[index(ix, iy, iz, c)];
    }
    double at(std::size_t ix, std::size_t iy, std::size_t iz, std::size_t c) const {
        return values[index(ix, iy, iz, c)];
    }
    double node_coord(std::size_t i) const {
        return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(resolution - 1);
    }
};

using EmbeddingMatrix = Matrix;

enum class InitScheme { uniform, normal };

// Fresh grid with i.i.d. values: uniform scheme draws from [-param, param],
// normal scheme from N(0, param^2). param must be >= 0; param == 0 gives an
// all-zero grid under either scheme.
FieldGrid init_grid(std::size_t resolution, std::size_t channels, InitScheme scheme, double param,
                    std::uint64_t seed);

// One trilinear lookup: the 8 cell-corner nodes (flat node index, channel
// excluded) and their convex weights. Weights are non-negative and sum to 1.
struct InterpEntry {
    std::array<std::uint32_t, 8> nodes;
    std::array<double, 8> weights;
};

// Everything needed to push gradients back through one embedding: an
// interpolation entry per normalized point plus, per channel, the row that
// won the max (ties resolved to the lowest row).
struct InterpTape {
    std::vector<InterpEntry> points;
    std::vector<std::uint32_t> argmax_row;
};

// Corner stencil of a query point inside [-1,1]^3. Coordinates up to 1e-9
// outside are clamped; anything farther is a domain error. Queries within
// 1e-12 of a lattice plane snap onto it so node queries reproduce the node
// value exactly.
InterpEntry trilinear_stencil(const FieldGrid& grid, const Point3& q);

// Interpolated C-vector at q (weighted sum over the stencil corners).
std::vector<double> sample_trilinear(const FieldGrid& grid, const Point3& q,
                                     InterpEntry* entry = nullptr);

// Channel-wise max over the interpolated features of nbhd.normalized.
std::vector<double> embed_neighborhood(const FieldGrid& grid, const LocalNeighborhood& nbhd,
                                       InterpTape* tape = nullptr);

// Embedding for every point of a cloud: row i uses point i as the center of
// its k-nearest-neighborhood (under L1, so row i's neighborhood always
// contains point i itself). k = 0 selects adaptive_k(N). Cost per row is one
// exact N-point scan plus 8*k weighted reads of the grid.
EmbeddingMatrix embed_cloud(const FieldGrid& grid, const PointCloud& cloud, std::size_t k = 0,
                            std::vector<InterpTape>* tapes = nullptr);

// Single row of embed_cloud, reusing precomputed neighbor indices
// (knn_order[0] is the center). Training caches the knn result per point
// and calls this so grid updates don't re-run neighbor searches.
std::vector<double> embed_cloud_row(const FieldGrid& grid, const PointCloud& cloud,
                                    const std::vector<std::size_t>& knn_order,
                                    InterpTape* tape = nullptr);

// Scatter-add d(loss)/d(embedding) through a tape into grad. Per channel,
// only the 8 corners of the winning row's cell receive gradient. grad must
// match the tape's channel count and cover every node index on the tape.
void grad_embed_wrt_grid(const InterpTape& tape, std::span<const double> upstream,
                         FieldGrid& grad);

}  // namespace sfield
