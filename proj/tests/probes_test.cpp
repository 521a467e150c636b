#include "sfield/probes.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "sfield/geometry.hpp"
#include "sfield/grid.hpp"

namespace {

using namespace sfield;

TEST(SemiEllipsoid, PeakFirstThenRingsOnTheSurface) {
    SemiEllipsoidSpec spec;
    spec.a = 0.5;
    spec.b = 1.5;
    spec.c = 2.0;
    spec.n_theta = 6;
    spec.n_phi = 10;
    const PointCloud pts = gen_semi_ellipsoid(spec);
    ASSERT_EQ(pts.size(), 1u + 6u * 10u);
    EXPECT_EQ(pts[0], (Point3{0.0, 0.0, 2.0}));

    for (const Point3& p : pts) {
        const double q = (p.x / spec.a) * (p.x / spec.a) + (p.y / spec.b) * (p.y / spec.b) +
                         (p.z / spec.c) * (p.z / spec.c);
        EXPECT_NEAR(q, 1.0, 1e-12);
        EXPECT_GE(p.z, -1e-12);  // upper half only
    }

    // The last ring sits on the equator.
    for (std::size_t j = 0; j < spec.n_phi; ++j)
        EXPECT_NEAR(pts[1 + 5 * spec.n_phi + j].z, 0.0, 1e-12);

    EXPECT_THROW(gen_semi_ellipsoid({0.0, 1.0, 1.0, 4, 4}), std::invalid_argument);
    EXPECT_THROW(gen_semi_ellipsoid({1.0, 1.0, 1.0, 0, 4}), std::invalid_argument);
}

TEST(CurvatureResponse, TwentyRadiiMatchManualEmbedding) {
    const FieldGrid grid = init_grid(4, 3, InitScheme::uniform, 0.5, 5);
    const Matrix resp = curvature_response(grid, Axis::x, 8, 16);
    ASSERT_EQ(resp.rows, 20u);
    ASSERT_EQ(resp.cols, 3u);

    // Row 5 by hand: radius 0.6 on the x axis.
    SemiEllipsoidSpec spec;
    spec.a = 0.6;
    spec.n_theta = 8;
    spec.n_phi = 16;
    const PointCloud surface = gen_semi_ellipsoid(spec);
    std::vector<Point3> neighbors(surface.begin() + 1, surface.end());
    const auto emb =
        embed_neighborhood(grid, normalize_neighborhood(surface[0], std::move(neighbors)));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(resp.at(5, c), emb[c]);

    // A random field must not answer every radius identically.
    bool varies = false;
    for (std::size_t t = 1; t < resp.rows && !varies; ++t)
        for (std::size_t c = 0; c < resp.cols && !varies; ++c)
            varies = resp.at(t, c) != resp.at(0, c);
    EXPECT_TRUE(varies);
}

TEST(CurvatureResponse, AxisSweepsMatchUnderSymmetricField) {
    // Symmetrize the grid under the x<->y swap; sweeping the x radius must
    // then answer the same as sweeping the y radius.
    FieldGrid grid = init_grid(4, 2, InitScheme::uniform, 0.5, 7);
    for (std::size_t ix = 0; ix < 4; ++ix)
        for (std::size_t iy = 0; iy <= ix; ++iy)
            for (std::size_t iz = 0; iz < 4; ++iz)
                for (std::size_t c = 0; c < 2; ++c) {
                    const double avg = 0.5 * (grid.at(ix, iy, iz, c) + grid.at(iy, ix, iz, c));
                    grid.at(ix, iy, iz, c) = avg;
                    grid.at(iy, ix, iz, c) = avg;
                }

    const Matrix rx = curvature_response(grid, Axis::x, 8, 16);
    const Matrix ry = curvature_response(grid, Axis::y, 8, 16);
    ASSERT_EQ(rx.values.size(), ry.values.size());
    for (std::size_t i = 0; i < rx.values.size(); ++i)
        EXPECT_NEAR(rx.values[i], ry.values[i], 1e-12);
}

TEST(WeightSlices, MaxProjectionPerAxis) {
    FieldGrid grid(2, 1);
    for (std::size_t i = 0; i < 8; ++i) grid.values[i] = static_cast<double>(i);

    const auto sx = weight_slices(grid, Axis::x);
    ASSERT_EQ(sx.size(), 1u);
    EXPECT_EQ(sx[0].at(0, 0), 4.0);
    EXPECT_EQ(sx[0].at(0, 1), 5.0);
    EXPECT_EQ(sx[0].at(1, 0), 6.0);
    EXPECT_EQ(sx[0].at(1, 1), 7.0);

    const auto sy = weight_slices(grid, Axis::y);
    EXPECT_EQ(sy[0].at(0, 0), 2.0);
    EXPECT_EQ(sy[0].at(0, 1), 3.0);
    EXPECT_EQ(sy[0].at(1, 0), 6.0);
    EXPECT_EQ(sy[0].at(1, 1), 7.0);

    const auto sz = weight_slices(grid, Axis::z);
    EXPECT_EQ(sz[0].at(0, 0), 1.0);
    EXPECT_EQ(sz[0].at(0, 1), 3.0);
    EXPECT_EQ(sz[0].at(1, 0), 5.0);
    EXPECT_EQ(sz[0].at(1, 1), 7.0);
}

TEST(WeightSlices, AllNegativeValuesSurvive) {
    FieldGrid grid(3, 2);
    for (double& v : grid.values) v = -5.0;
    const auto slices = weight_slices(grid, Axis::z);
    ASSERT_EQ(slices.size(), 2u);
    for (const Matrix& m : slices)
        for (double v : m.values) EXPECT_EQ(v, -5.0);
}

TEST(Spearman, KnownCorrelations) {
    const std::vector<double> x = {1, 2, 3, 4, 5};
    const std::vector<double> inc = {10, 20, 30, 40, 50};
    const std::vector<double> dec = {5, 4, 3, 2, 1};
    EXPECT_DOUBLE_EQ(spearman(x, inc), 1.0);
    EXPECT_DOUBLE_EQ(spearman(x, dec), -1.0);

    // Classic example: two adjacent swaps cost 0.2 of correlation.
    const std::vector<double> y = {2, 1, 4, 3, 5};
    EXPECT_NEAR(spearman(x, y), 0.8, 1e-12);

    // Monotone transforms change nothing: rank correlation only.
    std::vector<double> cubed = x;
    for (double& v : cubed) v = v * v * v;
    EXPECT_DOUBLE_EQ(spearman(cubed, inc), 1.0);

    const std::vector<double> flat = {3, 3, 3, 3, 3};
    EXPECT_DOUBLE_EQ(spearman(flat, inc), 0.0);  // no rank order to correlate

    const std::vector<double> tied_x = {1, 1, 2};
    const std::vector<double> tied_y = {1, 2, 3};
    EXPECT_NEAR(spearman(tied_x, tied_y), std::sqrt(3.0) / 2.0, 1e-12);

    EXPECT_THROW(spearman(std::vector<double>{1.0}, std::vector<double>{2.0}),
                 std::invalid_argument);
    EXPECT_THROW(spearman(x, tied_x), std::invalid_argument);
}

TEST(Spearman, AgainstRadiusSweepColumns) {
    Matrix resp(5, 3);
    for (std::size_t r = 0; r < 5; ++r) {
        resp.at(r, 0) = static_cast<double>(r) * 2.0;        // increasing
        resp.at(r, 1) = -static_cast<double>(r);             // decreasing
        resp.at(r, 2) = 1.0;                                 // constant
    }
    const std::vector<double> rho = spearman_vs_radius(resp);
    ASSERT_EQ(rho.size(), 3u);
    EXPECT_DOUBLE_EQ(rho[0], 1.0);
    EXPECT_DOUBLE_EQ(rho[1], -1.0);
    EXPECT_DOUBLE_EQ(rho[2], 0.0);
}

TEST(SyntheticDataset, LabeledUnitShapes) {
    const auto data = gen_synthetic_dataset(4, 200, 0.0, 31);
    ASSERT_EQ(data.size(), 12u);

    for (std::size_t s = 0; s < data.size(); ++s) {
        const TrainSample& t = data[s];
        EXPECT_EQ(t.label, static_cast<int>(s / 4));
        ASSERT_EQ(t.cloud.size(), 200u);
        ASSERT_EQ(t.normals.size(), 200u);
        for (const Point3& n : t.normals)
            EXPECT_NEAR(std::sqrt(n.x * n.x + n.y * n.y + n.z * n.z), 1.0, 1e-12);
    }

    // Spheres: constant radius in [0.5, 1], outward normals.
    for (std::size_t s = 0; s < 4; ++s) {
        const TrainSample& t = data[s];
        const double r0 = std::sqrt(squared_distance(t.cloud[0], {0, 0, 0}));
        EXPECT_GE(r0, 0.5);
        EXPECT_LE(r0, 1.0);
        for (std::size_t i = 0; i < t.cloud.size(); i += 17) {
            const double r = std::sqrt(squared_distance(t.cloud[i], {0, 0, 0}));
            EXPECT_NEAR(r, r0, 1e-12);
            EXPECT_NEAR(t.normals[i].x * t.cloud[i].x + t.normals[i].y * t.cloud[i].y +
                            t.normals[i].z * t.cloud[i].z,
                        r, 1e-12);
        }
    }

    // Cubes: every point sits on a face (L-inf norm equals the half side),
    // normals along one axis.
    for (std::size_t s = 4; s < 8; ++s) {
        const TrainSample& t = data[s];
        const double h = linf_norm(t.cloud[0]);
        for (std::size_t i = 0; i < t.cloud.size(); i += 17) {
            EXPECT_NEAR(linf_norm(t.cloud[i]), h, 1e-12);
            const Point3& n = t.normals[i];
            EXPECT_EQ(std::abs(n.x) + std::abs(n.y) + std::abs(n.z), 1.0);
        }
    }

    // Cylinders: lateral points at the shell radius with radial normals,
    // cap points at |z| = half height with axial normals.
    for (std::size_t s = 8; s < 12; ++s) {
        const TrainSample& t = data[s];
        double shell = 0.0, cap = 0.0;
        for (std::size_t i = 0; i < t.cloud.size(); ++i) {
            if (t.normals[i].z == 0.0)
                shell = std::max(shell, std::hypot(t.cloud[i].x, t.cloud[i].y));
            else
                cap = std::max(cap, std::abs(t.cloud[i].z));
        }
        for (std::size_t i = 0; i < t.cloud.size(); i += 11) {
            if (t.normals[i].z == 0.0) {
                EXPECT_NEAR(std::hypot(t.cloud[i].x, t.cloud[i].y), shell, 1e-12);
                EXPECT_NEAR(t.normals[i].x * t.cloud[i].x + t.normals[i].y * t.cloud[i].y, shell,
                            1e-12);
            } else {
                EXPECT_NEAR(std::abs(t.cloud[i].z), cap, 1e-12);
                EXPECT_LE(std::hypot(t.cloud[i].x, t.cloud[i].y), shell + 1e-12);
            }
        }
    }
}

TEST(SyntheticDataset, DeterministicAndNoisy) {
    const auto a = gen_synthetic_dataset(2, 50, 0.0, 3);
    const auto b = gen_synthetic_dataset(2, 50, 0.0, 3);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].cloud, b[s].cloud);

    const auto noisy = gen_synthetic_dataset(2, 50, 0.02, 3);
    EXPECT_NE(noisy[0].cloud, a[0].cloud);
    for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(noisy[s].normals, a[s].normals);

    EXPECT_THROW(gen_synthetic_dataset(0, 50, 0.0, 3), std::invalid_argument);
    EXPECT_THROW(gen_synthetic_dataset(2, 0, 0.0, 3), std::invalid_argument);
    EXPECT_THROW(gen_synthetic_dataset(2, 50, -0.1, 3), std::invalid_argument);
}

std::vector<Matrix> separable_features(std::vector<int>& labels, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.3);
    std::vector<Matrix> features;
    labels.clear();
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        Matrix m(8, 4);
        for (std::size_t r = 0; r < m.rows; ++r)
            for (std::size_t c = 0; c < m.cols; ++c)
                m.at(r, c) = gauss(rng) + (c == 0 ? (label == 0 ? 0.8 : -0.8) : 0.0);
        features.push_back(std::move(m));
        labels.push_back(label);
    }
    return features;
}

TEST(LinearProbe, LearnsSeparableFeaturesInEveryMode) {
    std::vector<int> labels;
    const auto features = separable_features(labels, 40, 11);
    for (ProbeMode mode :
         {ProbeMode::max_fc, ProbeMode::pointwise_fc_max_fc, ProbeMode::flatten_fc}) {
        const ProbeReport rep = linear_probe(features, labels, mode, 1);
        EXPECT_EQ(rep.n_train + rep.n_eval, features.size());
        EXPECT_EQ(rep.n_eval, features.size() / 5);
        EXPECT_EQ(rep.n_classes, 2u);
        EXPECT_GE(rep.accuracy, 0.75) << "mode " << static_cast<int>(mode);
        EXPECT_GE(rep.train_accuracy, 0.9) << "mode " << static_cast<int>(mode);
    }
}

TEST(LinearProbe, DeterministicPerSeed) {
    std::vector<int> labels;
    const auto features = separable_features(labels, 25, 13);
    const ProbeReport a = linear_probe(features, labels, ProbeMode::max_fc, 5);
    const ProbeReport b = linear_probe(features, labels, ProbeMode::max_fc, 5);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.train_accuracy, b.train_accuracy);
}

TEST(LinearProbe, RejectsDegenerateInputs) {
    std::vector<int> labels;
    auto features = separable_features(labels, 10, 17);

    std::vector<int> one_class(labels.size(), 0);
    EXPECT_THROW(linear_probe(features, one_class, ProbeMode::max_fc, 0), std::invalid_argument);

    std::vector<int> negative = labels;
    negative[0] = -1;
    EXPECT_THROW(linear_probe(features, negative, ProbeMode::max_fc, 0), std::invalid_argument);

    EXPECT_THROW(linear_probe({features[0]}, {labels[0]}, ProbeMode::max_fc, 0),
                 std::invalid_argument);

    auto ragged = features;
    ragged[3] = Matrix(8, 5);
    EXPECT_THROW(linear_probe(ragged, labels, ProbeMode::max_fc, 0), std::invalid_argument);

    auto tall = features;
    tall[3] = Matrix(9, 4);
    EXPECT_THROW(linear_probe(tall, labels, ProbeMode::flatten_fc, 0), std::invalid_argument);
    EXPECT_NO_THROW(linear_probe(tall, labels, ProbeMode::max_fc, 0));  // row counts may vary

    std::vector<int> mismatched(labels.begin(), labels.end() - 1);
    EXPECT_THROW(linear_probe(features, mismatched, ProbeMode::max_fc, 0), std::invalid_argument);
}

}  // namespace
