#include "sfield/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sfield/pretrain.hpp"  // mix_seed

namespace sfield {

void validate_mesh(const TriMesh& mesh) {
    if (mesh.vertices.empty()) throw std::invalid_argument("TriMesh: no vertices");
    const auto nv = static_cast<std::uint32_t>(mesh.vertices.size());
    for (const auto& f : mesh.faces) {
        if (f[0] >= nv || f[1] >= nv || f[2] >= nv)
            throw std::invalid_argument("TriMesh: face index out of range");
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw std::invalid_argument("TriMesh: degenerate face (repeated vertex)");
    }
}

std::vector<std::array<std::uint32_t, 2>> mesh_edges(const TriMesh& mesh) {
    validate_mesh(mesh);
    std::vector<std::array<std::uint32_t, 2>> edges;
    edges.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) {
            const std::uint32_t a = f[e];
            const std::uint32_t b = f[(e + 1) % 3];
            edges.push_back({std::min(a, b), std::max(a, b)});
        }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

namespace {

double triangle_area(const Point3& a, const Point3& b, const Point3& c) {
    const Point3 u = b - a;
    const Point3 v = c - a;
    const double cx = u.y * v.z - u.z * v.y;
    const double cy = u.z * v.x - u.x * v.z;
    const double cz = u.x * v.y - u.y * v.x;
    return 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
}

}  // namespace

PointCloud resample_mesh_surface(const TriMesh& mesh, std::size_t n_samples, std::uint64_t seed) {
    validate_mesh(mesh);
    if (n_samples < 1) throw std::invalid_argument("resample_mesh_surface: n_samples must be >= 1");
    if (mesh.faces.empty()) throw std::invalid_argument("resample_mesh_surface: mesh has no faces");

    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        total += triangle_area(mesh.vertices[face[0]], mesh.vertices[face[1]],
                               mesh.vertices[face[2]]);
        cumulative[f] = total;
    }
    if (!(total > 0.0)) throw std::invalid_argument("resample_mesh_surface: zero surface area");

    // Multinomial face counts from the global stream. Zero-area faces own a
    // zero-width interval of the CDF and can never be drawn.
    std::vector<std::size_t> counts(mesh.faces.size(), 0);
    std::mt19937_64 face_rng(seed);
    std::uniform_real_distribution<double> pick(0.0, total);
    for (std::size_t s = 0; s < n_samples; ++s) {
        const double u = pick(face_rng);
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        std::size_t f = static_cast<std::size_t>(it - cumulative.begin());
        if (f >= mesh.faces.size()) f = mesh.faces.size() - 1;
        ++counts[f];
    }

    // Barycentric draws come from a per-face stream keyed by (seed, face),
    // and samples are emitted face-major: renumbering vertices changes
    // nothing, reordering faces only permutes blocks.
    PointCloud out;
    out.reserve(n_samples);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (counts[f] == 0) continue;
        const auto& face = mesh.faces[f];
        const Point3 a = mesh.vertices[face[0]];
        const Point3 b = mesh.vertices[face[1]];
        const Point3 c = mesh.vertices[face[2]];
        std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(f) + 1));
        for (std::size_t s = 0; s < counts[f]; ++s) {
            const double r1 = unit(rng);
            const double r2 = unit(rng);
            const double sq = std::sqrt(r1);
            const double w0 = 1.0 - sq;
            const double w1 = sq * (1.0 - r2);
            const double w2 = sq * r2;
            out.push_back({w0 * a.x + w1 * b.x + w2 * c.x, w0 * a.y + w1 * b.y + w2 * c.y,
                           w0 * a.z + w1 * b.z + w2 * c.z});
        }
    }
    return out;
}

EmbeddingMatrix mesh_element_embeddings(const FieldGrid& grid, const TriMesh& mesh,
                                        MeshElementKind kind, std::size_t n_samples,
                                        std::uint64_t seed, std::size_t k) {
    validate_mesh(mesh);

    PointCloud elements;
    switch (kind) {
        case MeshElementKind::vertex:
            elements = mesh.vertices;
            break;
        case MeshElementKind::edge_midpoint:
            for (const auto& e : mesh_edges(mesh))
                elements.push_back(0.5 * (mesh.vertices[e[0]] + mesh.vertices[e[1]]));
            break;
        case MeshElementKind::face_barycenter:
            for (const auto& f : mesh.faces) {
                const Point3 s = mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]];
                elements.push_back((1.0 / 3.0) * s);
            }
            break;
    }
    if (elements.empty())
        throw std::invalid_argument("mesh_element_embeddings: mesh has no elements of this kind");

    // Context = element positions plus a fresh area-weighted resampling;
    // element rows are embed_cloud rows over that combined cloud.
    PointCloud combined = elements;
    const PointCloud samples = resample_mesh_surface(mesh, n_samples, seed);
    combined.insert(combined.end(), samples.begin(), samples.end());

    if (k == 0) k = combined.size() == 1 ? 1 : adaptive_k(combined.size());
    if (k > combined.size())
        throw std::invalid_argument("mesh_element_embeddings: k exceeds context size");

    EmbeddingMatrix out(elements.size(), grid.channels);
    for (std::size_t i = 0; i < elements.size(); ++i) {
        const std::vector<std::size_t> order = knn_l1(combined, combined[i], k);
        const std::vector<double> row = embed_cloud_row(grid, combined, order);
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

PointCloud voxel_virtual_points(const VoxelVolume& vol) {
    if (vol.size == 0 || vol.occupancy.size() != vol.size * vol.size * vol.size)
        throw std::invalid_argument("voxel_virtual_points: malformed volume");

    const double n = static_cast<double>(vol.size);
    PointCloud out;
    for (std::size_t ix = 0; ix < vol.size; ++ix)
        for (std::size_t iy = 0; iy < vol.size; ++iy)
            for (std::size_t iz = 0; iz < vol.size; ++iz)
                if (vol.occupied(ix, iy, iz))
                    out.push_back({-1.0 + (2.0 * static_cast<double>(ix) + 1.0) / n,
                                   -1.0 + (2.0 * static_cast<double>(iy) + 1.0) / n,
                                   -1.0 + (2.0 * static_cast<double>(iz) + 1.0) / n});
    return out;
}

VoxelEmbeddings voxel_embeddings(const FieldGrid& grid, const VoxelVolume& vol,
                                 std::size_t radius_voxels) {
    if (vol.size == 0 || vol.occupancy.size() != vol.size * vol.size * vol.size)
        throw std::invalid_argument("voxel_embeddings: malformed volume");
    if (radius_voxels < 1)
        throw std::invalid_argument("voxel_embeddings: radius_voxels must be >= 1");

    const auto n = static_cast<std::ptrdiff_t>(vol.size);
    const double nd = static_cast<double>(vol.size);
    const auto r = static_cast<std::ptrdiff_t>(radius_voxels);
    // Fixed receptive radius in normalized units; doubles as the
    // normalization scale so all cells share one spatial calibration.
    const double radius = 2.0 * static_cast<double>(radius_voxels) / nd;

    // Integer window offsets sorted by (L1 distance, offset): membership in
    // the L1 ball is decided exactly, with no float rounding at the rim.
    struct Offset {
        std::ptrdiff_t l1, dx, dy, dz;
    };
    std::vector<Offset> window;
    for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
            for (std::ptrdiff_t dz = -r; dz <= r; ++dz) {
                const std::ptrdiff_t l1 = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (l1 <= r) window.push_back({l1, dx, dy, dz});
            }
    std::sort(window.begin(), window.end(), [](const Offset& a, const Offset& b) {
        return std::tie(a.l1, a.dx, a.dy, a.dz) < std::tie(b.l1, b.dx, b.dy, b.dz);
    });

    auto center_of = [&](std::ptrdiff_t i) {
        return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / nd;
    };

    VoxelEmbeddings out;
    out.size = vol.size;
    out.channels = grid.channels;
    out.values.assign(vol.size * vol.size * vol.size * grid.channels, 0.0);

    std::vector<Point3> neighbors;
    for (std::ptrdiff_t ix = 0; ix < n; ++ix)
        for (std::ptrdiff_t iy = 0; iy < n; ++iy)
            for (std::ptrdiff_t iz = 0; iz < n; ++iz) {
                neighbors.clear();
                for (const Offset& o : window) {
                    const std::ptrdiff_t jx = ix + o.dx, jy = iy + o.dy, jz = iz + o.dz;
                    if (jx < 0 || jy < 0 || jz < 0 || jx >= n || jy >= n || jz >= n) continue;
                    if (!vol.occupied(static_cast<std::size_t>(jx), static_cast<std::size_t>(jy),
                                      static_cast<std::size_t>(jz)))
                        continue;
                    neighbors.push_back({center_of(jx), center_of(jy), center_of(jz)});
                }
                if (neighbors.empty()) continue;  // stays the exact zero vector

                const Point3 center{center_of(ix), center_of(iy), center_of(iz)};
                const LocalNeighborhood nbhd =
                    normalize_neighborhood(center, std::move(neighbors), radius);
                neighbors = {};  // moved-from; reset for reuse
                const std::vector<double> emb = embed_neighborhood(grid, nbhd);

                const std::size_t base =
                    ((static_cast<std::size_t>(ix) * vol.size + static_cast<std::size_t>(iy)) *
                         vol.size +
                     static_cast<std::size_t>(iz)) *
                    grid.channels;
                std::copy(emb.begin(), emb.end(), out.values.begin() + base);
            }
    return out;
}

}  // namespace sfield
