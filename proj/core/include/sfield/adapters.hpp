#pragma once

// Adapters that turn triangle meshes and voxel volumes into the point
// neighborhoods the field understands. Both reduce to embed_cloud-style
// queries, so an embedding never depends on which representation produced
// the underlying points.

#include <array>
#include <cstdint>

#include "sfield/geometry.hpp"
#include "sfield/grid.hpp"

namespace sfield {

struct TriMesh {
    std::vector<Point3> vertices;
    std::vector<std::array<std::uint32_t, 3>> faces;
};

// Structural checks: at least one vertex, indices in range, corners of each
// face distinct. Throws std::invalid_argument on violation.
void validate_mesh(const TriMesh& mesh);

// Undirected edge set as (min, max) vertex-index pairs, sorted
// lexicographically. Shared edges appear once.
std::vector<std::array<std::uint32_t, 2>> mesh_edges(const TriMesh& mesh);

enum class MeshElementKind { vertex, edge_midpoint, face_barycenter };

// Area-weighted uniform surface sampling. Face sample counts come from one
// global RNG stream seeded by `seed`; the barycentric draws for face f come
// from an independent stream keyed by (seed, f). Samples are emitted
// face-major, so renumbering vertices leaves the sample list unchanged
// while reordering faces permutes it. Zero total area is an error.
PointCloud resample_mesh_surface(const TriMesh& mesh, std::size_t n_samples, std::uint64_t seed);

// Embedding per mesh element of the chosen kind. The neighborhood context
// for each element query is the element positions plus n_samples resampled
// surface points; rows follow the element order (vertex index, sorted edge
// order, face index). k = 0 selects adaptive_k over the context size.
EmbeddingMatrix mesh_element_embeddings(const FieldGrid& grid, const TriMesh& mesh,
                                        MeshElementKind kind, std::size_t n_samples,
                                        std::uint64_t seed, std::size_t k = 0);

struct VoxelVolume {
    std::size_t size = 0;                // N voxels per axis
    std::vector<std::uint8_t> occupancy;  // [ix][iy][iz], ix slowest; 0 or 1

    VoxelVolume() = default;
    explicit VoxelVolume(std::size_t n) : size(n), occupancy(n * n * n, 0) {}

    std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return (ix * size + iy) * size + iz;
    }
    bool occupied(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return occupancy[index(ix, iy, iz)] != 0;
    }
    void set(std::size_t ix, std::size_t iy, std::size_t iz, bool v) {
        occupancy[index(ix, iy, iz)] = v ? 1 : 0;
    }
};

// Centers of occupied voxels mapped into [-1,1]^3: voxel (i,j,k) of an
// N^3 volume sits at component -1 + (2i+1)/N. Lexicographic (ix,iy,iz)
// order; an all-empty volume gives an empty cloud.
PointCloud voxel_virtual_points(const VoxelVolume& vol);

struct VoxelEmbeddings {
    std::size_t size = 0;      // N, matches the input volume
    std::size_t channels = 0;  // C, matches the grid
    std::vector<double> values;  // [ix][iy][iz][c], ix slowest

    double at(std::size_t ix, std::size_t iy, std::size_t iz, std::size_t c) const {
        return values[((ix * size + iy) * size + iz) * channels + c];
    }
};

// Embedding per voxel cell (occupied or not). Each cell's neighborhood is
// the occupied virtual points within L1 radius 2*radius_voxels/N of its
// center, normalized with that radius as a fixed scale so embeddings are
// comparable across cells. Cells with no occupied voxel in range embed to
// exact zeros. The search runs over integer offsets, ordered identically to
// radius_neighbors_l1 on the virtual point cloud.
VoxelEmbeddings voxel_embeddings(const FieldGrid& grid, const VoxelVolume& vol,
                                 std::size_t radius_voxels = 4);

}  // namespace sfield
