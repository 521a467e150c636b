#include "sfield/adapters.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sfield/geometry.hpp"
#include "sfield/grid.hpp"

namespace {

using namespace sfield;

TriMesh unit_tetrahedron() {
    TriMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    m.faces = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
    return m;
}

TEST(ValidateMesh, CatchesStructuralProblems) {
    EXPECT_NO_THROW(validate_mesh(unit_tetrahedron()));

    TriMesh empty;
    EXPECT_THROW(validate_mesh(empty), std::invalid_argument);

    TriMesh bad_index = unit_tetrahedron();
    bad_index.faces.push_back({0, 1, 9});
    EXPECT_THROW(validate_mesh(bad_index), std::invalid_argument);

    TriMesh repeated = unit_tetrahedron();
    repeated.faces.push_back({2, 2, 3});
    EXPECT_THROW(validate_mesh(repeated), std::invalid_argument);
}

TEST(MeshEdges, UniqueSortedUndirected) {
    const auto edges = mesh_edges(unit_tetrahedron());
    // A tetrahedron has exactly 6 edges; each face pair shares one.
    const std::vector<std::array<std::uint32_t, 2>> expected = {{0, 1}, {0, 2}, {0, 3},
                                                                {1, 2}, {1, 3}, {2, 3}};
    EXPECT_EQ(edges, expected);
}

TEST(ResampleSurface, PointsStayOnSurface) {
    // Flat unit square in the z = 0 plane: every sample must have z == 0 and
    // (x, y) inside the square.
    TriMesh m;
    m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    const PointCloud pts = resample_mesh_surface(m, 500, 7);
    ASSERT_EQ(pts.size(), 500u);
    for (const Point3& p : pts) {
        EXPECT_EQ(p.z, 0.0);
        EXPECT_GE(p.x, 0.0);
        EXPECT_LE(p.x, 1.0);
        EXPECT_GE(p.y, 0.0);
        EXPECT_LE(p.y, 1.0);
    }
}

TEST(ResampleSurface, DeterministicPerSeed) {
    const TriMesh m = unit_tetrahedron();
    const PointCloud a = resample_mesh_surface(m, 300, 11);
    const PointCloud b = resample_mesh_surface(m, 300, 11);
    const PointCloud c = resample_mesh_surface(m, 300, 12);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
}

TEST(ResampleSurface, CountsFollowArea) {
    // Two disjoint triangles, area ratio 1:4 (legs 1 and 2). Count samples
    // landing on each by x sign; allow ~4 sigma of binomial noise.
    TriMesh m;
    m.vertices = {{-2, 0, 0}, {-1, 0, 0}, {-2, 1, 0}, {1, 0, 0}, {3, 0, 0}, {1, 2, 0}};
    m.faces = {{0, 1, 2}, {3, 4, 5}};
    const std::size_t n = 5000;
    const PointCloud pts = resample_mesh_surface(m, n, 3);
    std::size_t right = 0;
    for (const Point3& p : pts) right += p.x > 0.0 ? 1 : 0;
    const double expect = 0.8 * static_cast<double>(n);
    const double sigma = std::sqrt(static_cast<double>(n) * 0.8 * 0.2);
    EXPECT_NEAR(static_cast<double>(right), expect, 4.0 * sigma);
}

TEST(ResampleSurface, VertexRenumberingLeavesSamplesUnchanged) {
    const TriMesh m = unit_tetrahedron();
    // Reverse the vertex array; faces reindexed to keep corner order.
    TriMesh renumbered;
    renumbered.vertices = {m.vertices[3], m.vertices[2], m.vertices[1], m.vertices[0]};
    for (const auto& f : m.faces)
        renumbered.faces.push_back({3 - f[0], 3 - f[1], 3 - f[2]});
    const PointCloud a = resample_mesh_surface(m, 400, 17);
    const PointCloud b = resample_mesh_surface(renumbered, 400, 17);
    EXPECT_EQ(a, b);
}

TEST(ResampleSurface, RejectsDegenerateInput) {
    TriMesh no_faces;
    no_faces.vertices = {{0, 0, 0}};
    EXPECT_THROW(resample_mesh_surface(no_faces, 10, 0), std::invalid_argument);

    TriMesh flat;  // all vertices collinear: zero area
    flat.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
    flat.faces = {{0, 1, 2}};
    EXPECT_THROW(resample_mesh_surface(flat, 10, 0), std::invalid_argument);

    EXPECT_THROW(resample_mesh_surface(unit_tetrahedron(), 0, 0), std::invalid_argument);
}

TEST(MeshElementEmbeddings, RowCountsPerKind) {
    const FieldGrid grid = init_grid(4, 3, InitScheme::uniform, 0.5, 1);
    const TriMesh m = unit_tetrahedron();
    EXPECT_EQ(mesh_element_embeddings(grid, m, MeshElementKind::vertex, 64, 0).rows, 4u);
    EXPECT_EQ(mesh_element_embeddings(grid, m, MeshElementKind::edge_midpoint, 64, 0).rows, 6u);
    EXPECT_EQ(mesh_element_embeddings(grid, m, MeshElementKind::face_barycenter, 64, 0).rows, 4u);
}

TEST(MeshElementEmbeddings, MatchesPointCloudPathBitExactly) {
    // The adapter must answer exactly what the cloud path answers on the
    // combined (elements + samples) cloud: representation must not leak into
    // the embedding.
    const FieldGrid grid = init_grid(5, 4, InitScheme::uniform, 0.5, 2);
    const TriMesh m = unit_tetrahedron();
    const std::size_t n_samples = 96;
    const std::uint64_t seed = 21;
    const std::size_t k = 12;

    const EmbeddingMatrix got =
        mesh_element_embeddings(grid, m, MeshElementKind::vertex, n_samples, seed, k);

    PointCloud combined = m.vertices;
    const PointCloud samples = resample_mesh_surface(m, n_samples, seed);
    combined.insert(combined.end(), samples.begin(), samples.end());
    const EmbeddingMatrix all = embed_cloud(grid, combined, k);

    ASSERT_EQ(got.rows, m.vertices.size());
    for (std::size_t i = 0; i < got.rows; ++i)
        for (std::size_t c = 0; c < got.cols; ++c) EXPECT_EQ(got.at(i, c), all.at(i, c));
}

TEST(MeshElementEmbeddings, EdgeMidpointsFollowSortedEdgeOrder) {
    const FieldGrid grid = init_grid(4, 2, InitScheme::uniform, 0.5, 3);
    const TriMesh m = unit_tetrahedron();
    const std::size_t n_samples = 64;
    const std::uint64_t seed = 5;
    const std::size_t k = 10;

    const EmbeddingMatrix got =
        mesh_element_embeddings(grid, m, MeshElementKind::edge_midpoint, n_samples, seed, k);

    const auto edges = mesh_edges(m);
    PointCloud combined;
    for (const auto& e : edges)
        combined.push_back(0.5 * (m.vertices[e[0]] + m.vertices[e[1]]));
    const PointCloud samples = resample_mesh_surface(m, n_samples, seed);
    combined.insert(combined.end(), samples.begin(), samples.end());
    const EmbeddingMatrix all = embed_cloud(grid, combined, k);

    for (std::size_t i = 0; i < got.rows; ++i)
        for (std::size_t c = 0; c < got.cols; ++c) EXPECT_EQ(got.at(i, c), all.at(i, c));
}

TEST(VoxelVirtualPoints, CenteredUnitLatticeMapping) {
    VoxelVolume vol(2);
    vol.set(0, 0, 0, true);
    vol.set(1, 1, 1, true);
    const PointCloud pts = voxel_virtual_points(vol);
    ASSERT_EQ(pts.size(), 2u);
    EXPECT_EQ(pts[0], (Point3{-0.5, -0.5, -0.5}));
    EXPECT_EQ(pts[1], (Point3{0.5, 0.5, 0.5}));

    VoxelVolume vol4(4);
    vol4.set(0, 1, 3, true);
    const PointCloud p4 = voxel_virtual_points(vol4);
    ASSERT_EQ(p4.size(), 1u);
    EXPECT_EQ(p4[0], (Point3{-0.75, -0.25, 0.75}));

    EXPECT_TRUE(voxel_virtual_points(VoxelVolume(3)).empty());
}

TEST(VoxelEmbeddings, EmptyWindowIsExactZero) {
    const FieldGrid grid = init_grid(4, 3, InitScheme::uniform, 0.5, 4);
    VoxelVolume vol(8);
    vol.set(2, 2, 2, true);
    const VoxelEmbeddings out = voxel_embeddings(grid, vol, 1);

    // Far cell: nothing within L1 radius 1 -> all channels exactly zero.
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(7, 7, 7, c), 0.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(0, 0, 0, c), 0.0);
    // Diagonal neighbor is L1 distance 2: still zero at radius 1.
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(3, 3, 2, c), 0.0);

    // The occupied cell sees itself: neighborhood collapses to the origin.
    const auto origin = sample_trilinear(grid, {0, 0, 0});
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(2, 2, 2, c), origin[c]);

    // A face-adjacent empty cell sees one neighbor, one cell away along z:
    // normalized offset (0, 0, 2/N) / (2*1/N) = (0, 0, 1).
    const auto near = embed_neighborhood(
        grid, normalize_neighborhood({0, 0, 0}, {{0, 0, 2.0 / 8.0}}, 2.0 * 1.0 / 8.0));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.at(2, 2, 1, c), near[c]);
}

TEST(VoxelEmbeddings, MatchesFloatRadiusRouteOnPowerOfTwoGrid) {
    // With N a power of two, voxel centers and the receptive radius are
    // dyadic, so the integer window and a float L1 ball agree exactly and
    // the two routes must produce identical bits.
    const FieldGrid grid = init_grid(5, 4, InitScheme::uniform, 0.5, 6);
    VoxelVolume vol(16);
    std::mt19937_64 rng(9);
    for (std::size_t i = 0; i < vol.occupancy.size(); ++i) vol.occupancy[i] = rng() % 5 == 0;

    const std::size_t radius_voxels = 4;
    const double radius = 2.0 * static_cast<double>(radius_voxels) / 16.0;
    const VoxelEmbeddings fast = voxel_embeddings(grid, vol, radius_voxels);

    const PointCloud virtual_pts = voxel_virtual_points(vol);
    auto center_of = [](std::size_t i) { return -1.0 + (2.0 * static_cast<double>(i) + 1.0) / 16.0; };
    for (std::size_t ix = 0; ix < 16; ix += 3)
        for (std::size_t iy = 0; iy < 16; iy += 3)
            for (std::size_t iz = 0; iz < 16; iz += 3) {
                const Point3 center{center_of(ix), center_of(iy), center_of(iz)};
                const auto idx = radius_neighbors_l1(virtual_pts, center, radius);
                if (idx.empty()) {
                    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(fast.at(ix, iy, iz, c), 0.0);
                    continue;
                }
                std::vector<Point3> nb;
                for (std::size_t j : idx) nb.push_back(virtual_pts[j]);
                const auto emb =
                    embed_neighborhood(grid, normalize_neighborhood(center, std::move(nb), radius));
                for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(fast.at(ix, iy, iz, c), emb[c]);
            }
}

TEST(VoxelEmbeddings, TranslationEquivariantAwayFromBoundary) {
    const FieldGrid grid = init_grid(4, 2, InitScheme::uniform, 0.5, 8);
    VoxelVolume a(8);
    a.set(2, 3, 2, true);
    a.set(3, 2, 3, true);
    a.set(3, 3, 3, true);
    a.set(4, 4, 2, true);

    VoxelVolume b(8);  // same pattern shifted by +1 on every axis
    b.set(3, 4, 3, true);
    b.set(4, 3, 4, true);
    b.set(4, 4, 4, true);
    b.set(5, 5, 3, true);

    const VoxelEmbeddings ea = voxel_embeddings(grid, a, 1);
    const VoxelEmbeddings eb = voxel_embeddings(grid, b, 1);
    for (std::size_t ix = 0; ix + 1 < 8; ++ix)
        for (std::size_t iy = 0; iy + 1 < 8; ++iy)
            for (std::size_t iz = 0; iz + 1 < 8; ++iz)
                for (std::size_t c = 0; c < 2; ++c)
                    EXPECT_EQ(ea.at(ix, iy, iz, c), eb.at(ix + 1, iy + 1, iz + 1, c));
}

TEST(VoxelEmbeddings, RejectsBadArguments) {
    const FieldGrid grid = init_grid(4, 2, InitScheme::uniform, 0.5, 10);
    VoxelVolume vol(4);
    EXPECT_THROW(voxel_embeddings(grid, vol, 0), std::invalid_argument);
    vol.occupancy.pop_back();
    EXPECT_THROW(voxel_embeddings(grid, vol, 1), std::invalid_argument);
    EXPECT_THROW(voxel_virtual_points(vol), std::invalid_argument);
}

}  // namespace
