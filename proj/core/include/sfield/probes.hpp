#pragma once

// Analysis probes for a trained field: curvature-response sweeps over
// semi-ellipsoid peaks, max-projection weight slices, a synthetic labeled
// shape generator, and linear probing of embeddings.

#include <cstdint>

#include "sfield/grid.hpp"
#include "sfield/matrix.hpp"
#include "sfield/pretrain.hpp"

namespace sfield {

// Upper half of an axis-aligned ellipsoid (radii a, b, c), sampled on a
// (theta, phi) grid. The peak (0, 0, c) comes first, then rings
// theta_i = i*(pi/2)/n_theta for i = 1..n_theta, each traversed by
// phi_j = 2*pi*j/n_phi for j = 0..n_phi-1. Total 1 + n_theta*n_phi points.
struct SemiEllipsoidSpec {
    double a = 1.0;
    double b = 1.0;
    double c = 1.0;
    std::size_t n_theta = 32;
    std::size_t n_phi = 64;
};
PointCloud gen_semi_ellipsoid(const SemiEllipsoidSpec& spec);

enum class Axis : int { x = 0, y = 1, z = 2 };

// Curvature sweep: 20 semi-ellipsoids whose `axis` radius runs through
// 0.1, 0.2, ..., 2.0 (other radii 1). Row t is the embedding of the peak
// with the entire remaining surface as its neighborhood, normalized by the
// standard max-deviation rule. Output is 20 x C.
Matrix curvature_response(const FieldGrid& grid, Axis axis, std::size_t n_theta = 32,
                          std::size_t n_phi = 64);

// Channel-wise max-projection of the grid along `axis`: C matrices of
// R x R, remaining axes in (slower, faster) order.
std::vector<Matrix> weight_slices(const FieldGrid& grid, Axis axis);

// Spearman rank correlation with average ranks on ties; inputs must have
// equal length >= 2.
double spearman(std::span<const double> xs, std::span<const double> ys);
// Column c of `response` against the row order (the radius sweep).
std::vector<double> spearman_vs_radius(const Matrix& response);

// Labeled shapes at unit scale: label 0 spheres (radius U(0.5,1)), label 1
// cubes (half-side U(0.5,1)), label 2 cylinders (radius and half-height
// U(0.5,1)), n_per_class of each in label order. Points are uniform over
// the surface with exact outward unit normals; noise_sigma adds Gaussian
// noise per coordinate (normals untouched).
std::vector<TrainSample> gen_synthetic_dataset(std::size_t n_per_class, std::size_t n_points,
                                               double noise_sigma, std::uint64_t seed);

// How a probe reads a per-shape feature matrix:
//   max_fc              channel-wise max over rows, then one linear layer
//   pointwise_fc_max_fc shared 64-wide linear layer per row, max, linear
//   flatten_fc          rows flattened to one vector, then one linear layer
enum class ProbeMode { max_fc, pointwise_fc_max_fc, flatten_fc };

struct ProbeReport {
    double accuracy = 0.0;        // held-out split
    double train_accuracy = 0.0;
    std::size_t n_train = 0;
    std::size_t n_eval = 0;
    std::size_t n_classes = 0;
};

// Train a probe classifier on per-shape feature matrices (Adam at 1e-3,
// log-loss, 200 epochs, minibatches of 32, seeded 80/20 split) and report
// accuracies. All matrices must share a column count (flatten_fc: also the
// row count); at least two classes must be present.
ProbeReport linear_probe(const std::vector<Matrix>& features, const std::vector<int>& labels,
                         ProbeMode mode, std::uint64_t seed = 0);

}  // namespace sfield
