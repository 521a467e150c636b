#include "sfield/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>

namespace sfield {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

PointCloud gen_semi_ellipsoid(const SemiEllipsoidSpec& spec) {
    if (!(spec.a > 0.0 && spec.b > 0.0 && spec.c > 0.0))
        throw std::invalid_argument("gen_semi_ellipsoid: radii must be positive");
    if (spec.n_theta < 1 || spec.n_phi < 1)
        throw std::invalid_argument("gen_semi_ellipsoid: empty sampling grid");

    PointCloud out;
    out.reserve(1 + spec.n_theta * spec.n_phi);
    out.push_back({0.0, 0.0, spec.c});  // the peak, always row 0
    for (std::size_t i = 1; i <= spec.n_theta; ++i) {
        const double theta = static_cast<double>(i) * (kPi / 2.0) / static_cast<double>(spec.n_theta);
        const double st = std::sin(theta), ct = std::cos(theta);
        for (std::size_t j = 0; j < spec.n_phi; ++j) {
            const double phi = 2.0 * kPi * static_cast<double>(j) / static_cast<double>(spec.n_phi);
            out.push_back({spec.a * st * std::cos(phi), spec.b * st * std::sin(phi), spec.c * ct});
        }
    }
    return out;
}

Matrix curvature_response(const FieldGrid& grid, Axis axis, std::size_t n_theta,
                          std::size_t n_phi) {
    Matrix out(20, grid.channels);
    for (std::size_t t = 0; t < 20; ++t) {
        SemiEllipsoidSpec spec;
        spec.n_theta = n_theta;
        spec.n_phi = n_phi;
        const double radius = 0.1 * static_cast<double>(t + 1);
        switch (axis) {
            case Axis::x: spec.a = radius; break;
            case Axis::y: spec.b = radius; break;
            case Axis::z: spec.c = radius; break;
        }
        const PointCloud surface = gen_semi_ellipsoid(spec);
        // Peak as center, the full remaining surface as its neighborhood.
        std::vector<Point3> neighbors(surface.begin() + 1, surface.end());
        const LocalNeighborhood nbhd = normalize_neighborhood(surface[0], std::move(neighbors));
        const std::vector<double> emb = embed_neighborhood(grid, nbhd);
        std::copy(emb.begin(), emb.end(), out.row(t).begin());
    }
    return out;
}

std::vector<Matrix> weight_slices(const FieldGrid& grid, Axis axis) {
    if (grid.resolution < 2) throw std::invalid_argument("weight_slices: uninitialized grid");
    const std::size_t r = grid.resolution;

    std::vector<Matrix> slices(grid.channels, Matrix(r, r));
    for (std::size_t c = 0; c < grid.channels; ++c) {
        Matrix& m = slices[c];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) {
                double best = 0.0;
                for (std::size_t t = 0; t < r; ++t) {
                    double v = 0.0;
                    switch (axis) {
                        case Axis::x: v = grid.at(t, i, j, c); break;
                        case Axis::y: v = grid.at(i, t, j, c); break;
                        case Axis::z: v = grid.at(i, j, t, c); break;
                    }
                    if (t == 0 || v > best) best = v;
                }
                m.at(i, j) = best;
            }
    }
    return slices;
}

namespace {

// Average ranks over ties, 1-based.
std::vector<double> ranks_of(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });

    std::vector<double> rank(xs.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }
    return rank;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length series");

    const std::vector<double> rx = ranks_of(xs);
    const std::vector<double> ry = ranks_of(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;  // a constant series has no rank order
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> spearman_vs_radius(const Matrix& response) {
    std::vector<double> sweep(response.rows);
    std::iota(sweep.begin(), sweep.end(), 1.0);
    std::vector<double> out(response.cols);
    std::vector<double> col(response.rows);
    for (std::size_t c = 0; c < response.cols; ++c) {
        for (std::size_t r = 0; r < response.rows; ++r) col[r] = response.at(r, c);
        out[c] = spearman(col, sweep);
    }
    return out;
}

std::vector<TrainSample> gen_synthetic_dataset(std::size_t n_per_class, std::size_t n_points,
                                               double noise_sigma, std::uint64_t seed) {
    if (n_per_class < 1 || n_points < 1)
        throw std::invalid_argument("gen_synthetic_dataset: empty request");
    if (!(noise_sigma >= 0.0))
        throw std::invalid_argument("gen_synthetic_dataset: negative noise");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> scale(0.5, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // Noise gets its own engine and distribution so the geometry stream is the
    // same whether or not noise is requested: clouds/normals per seed are fixed,
    // noise only displaces the positions afterwards.
    std::mt19937_64 noise_rng(mix_seed(seed, 14));
    std::normal_distribution<double> noise_gauss(0.0, 1.0);

    std::vector<TrainSample> out;
    out.reserve(3 * n_per_class);

    auto add_noise = [&](TrainSample& s) {
        if (noise_sigma == 0.0) return;
        for (Point3& p : s.cloud) {
            p.x += noise_sigma * noise_gauss(noise_rng);
            p.y += noise_sigma * noise_gauss(noise_rng);
            p.z += noise_sigma * noise_gauss(noise_rng);
        }
    };

    for (std::size_t i = 0; i < n_per_class; ++i) {  // label 0: spheres
        TrainSample s;
        s.label = 0;
        const double r = scale(rng);
        s.cloud.reserve(n_points);
        s.normals.reserve(n_points);
        for (std::size_t p = 0; p < n_points; ++p) {
            double x = gauss(rng), y = gauss(rng), z = gauss(rng);
            double n = std::sqrt(x * x + y * y + z * z);
            if (n < 1e-12) {  // vanishing draw; any fixed direction serves
                x = 0.0;
                y = 0.0;
                z = 1.0;
                n = 1.0;
            }
            const Point3 dir{x / n, y / n, z / n};
            s.cloud.push_back(r * dir);
            s.normals.push_back(dir);
        }
        add_noise(s);
        out.push_back(std::move(s));
    }

    for (std::size_t i = 0; i < n_per_class; ++i) {  // label 1: cubes
        TrainSample s;
        s.label = 1;
        const double h = scale(rng);
        s.cloud.reserve(n_points);
        s.normals.reserve(n_points);
        for (std::size_t p = 0; p < n_points; ++p) {
            const auto face = static_cast<int>(rng() % 6);  // equal face areas
            const double u = (2.0 * unit(rng) - 1.0) * h;
            const double v = (2.0 * unit(rng) - 1.0) * h;
            const double sign = (face % 2 == 0) ? 1.0 : -1.0;
            Point3 pt, nm;
            switch (face / 2) {
                case 0: pt = {sign * h, u, v}; nm = {sign, 0.0, 0.0}; break;
                case 1: pt = {u, sign * h, v}; nm = {0.0, sign, 0.0}; break;
                default: pt = {u, v, sign * h}; nm = {0.0, 0.0, sign}; break;
            }
            s.cloud.push_back(pt);
            s.normals.push_back(nm);
        }
        add_noise(s);
        out.push_back(std::move(s));
    }

    for (std::size_t i = 0; i < n_per_class; ++i) {  // label 2: cylinders
        TrainSample s;
        s.label = 2;
        const double r = scale(rng);
        const double h = scale(rng);
        const double lateral = 2.0 * kPi * r * 2.0 * h;
        const double caps = 2.0 * kPi * r * r;
        s.cloud.reserve(n_points);
        s.normals.reserve(n_points);
        for (std::size_t p = 0; p < n_points; ++p) {
            const double phi = 2.0 * kPi * unit(rng);
            if (unit(rng) * (lateral + caps) < lateral) {
                const double z = (2.0 * unit(rng) - 1.0) * h;
                s.cloud.push_back({r * std::cos(phi), r * std::sin(phi), z});
                s.normals.push_back({std::cos(phi), std::sin(phi), 0.0});
            } else {
                const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
                const double rr = r * std::sqrt(unit(rng));  // uniform over the disc
                s.cloud.push_back({rr * std::cos(phi), rr * std::sin(phi), sign * h});
                s.normals.push_back({0.0, 0.0, sign});
            }
        }
        add_noise(s);
        out.push_back(std::move(s));
    }
    return out;
}

ProbeReport linear_probe(const std::vector<Matrix>& features, const std::vector<int>& labels,
                         ProbeMode mode, std::uint64_t seed) {
    if (features.size() != labels.size() || features.size() < 2)
        throw std::invalid_argument("linear_probe: need >= 2 labeled feature matrices");

    const std::size_t cols = features[0].cols;
    const std::size_t rows0 = features[0].rows;
    int max_label = 0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].cols != cols)
            throw std::invalid_argument("linear_probe: inconsistent feature width");
        if (mode == ProbeMode::flatten_fc && features[i].rows != rows0)
            throw std::invalid_argument("linear_probe: flatten_fc needs a fixed row count");
        if (features[i].rows == 0) throw std::invalid_argument("linear_probe: empty features");
        if (labels[i] < 0) throw std::invalid_argument("linear_probe: negative label");
        max_label = std::max(max_label, labels[i]);
    }
    const auto n_classes = static_cast<std::size_t>(max_label) + 1;
    {
        std::vector<char> seen(n_classes, 0);
        for (int l : labels) seen[static_cast<std::size_t>(l)] = 1;
        if (std::count(seen.begin(), seen.end(), 1) < 2)
            throw std::invalid_argument("linear_probe: needs at least two distinct classes");
    }

    // Probe heads reuse the classifier machinery: max_fc pools the raw rows,
    // pointwise_fc_max_fc inserts one shared linear layer, flatten_fc sees a
    // single pre-flattened row (pooling over one row is the identity).
    MLPParams probe;
    std::mt19937_64 init_rng(mix_seed(seed, 11));
    switch (mode) {
        case ProbeMode::max_fc:
            probe.shared_count = 0;
            probe.layers.push_back(make_dense_layer(cols, n_classes, Activation::identity, init_rng));
            break;
        case ProbeMode::pointwise_fc_max_fc:
            probe.shared_count = 1;
            probe.layers.push_back(make_dense_layer(cols, 64, Activation::identity, init_rng));
            probe.layers.push_back(make_dense_layer(64, n_classes, Activation::identity, init_rng));
            break;
        case ProbeMode::flatten_fc:
            probe.shared_count = 0;
            probe.layers.push_back(
                make_dense_layer(rows0 * cols, n_classes, Activation::identity, init_rng));
            break;
    }

    auto probe_input = [&](std::size_t i) {
        if (mode != ProbeMode::flatten_fc) return features[i];
        Matrix flat(1, rows0 * cols);
        flat.values = features[i].values;
        return flat;
    };

    // Seeded 80/20 split with both sides non-empty.
    std::vector<std::size_t> ids(features.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    {
        std::mt19937_64 split_rng(mix_seed(seed, 12));
        std::shuffle(ids.begin(), ids.end(), split_rng);
    }
    std::size_t eval_n = features.size() / 5;
    eval_n = std::max<std::size_t>(eval_n, 1);
    eval_n = std::min(eval_n, features.size() - 1);
    std::vector<std::size_t> train_ids(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(eval_n));
    std::vector<std::size_t> eval_ids(ids.end() - static_cast<std::ptrdiff_t>(eval_n), ids.end());

    MLPParams grads = probe;
    auto zero = [&] {
        for (DenseLayer& l : grads.layers) {
            std::fill(l.w.begin(), l.w.end(), 0.0);
            std::fill(l.b.begin(), l.b.end(), 0.0);
        }
    };

    std::vector<std::size_t> sizes;
    for (const DenseLayer& l : probe.layers) {
        sizes.push_back(l.w.size());
        sizes.push_back(l.b.size());
    }
    AdamState adam = make_adam_state(sizes);

    const std::size_t epochs = 200;
    const std::size_t batch = 32;
    const double lr = 1e-3;
    std::mt19937_64 order_rng(mix_seed(seed, 13));

    std::vector<std::size_t> order = train_ids;
    for (std::size_t e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            zero();
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t s = order[b];
                MLPTape tape;
                const std::vector<double> lp = classify_forward(probe, probe_input(s), &tape);
                const std::vector<double> dlogits =
                    nll_logits_backward(lp, static_cast<std::size_t>(labels[s]));
                classify_backward(probe, tape, dlogits, grads);
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (DenseLayer& l : grads.layers) {
                for (double& v : l.w) v *= inv;
                for (double& v : l.b) v *= inv;
            }
            adam_step(adam, mlp_param_blocks(probe), mlp_param_blocks(std::as_const(grads)), lr);
        }
    }

    auto accuracy = [&](const std::vector<std::size_t>& set) {
        std::size_t correct = 0;
        for (std::size_t s : set) {
            const std::vector<double> lp = classify_forward(probe, probe_input(s));
            const auto best = std::max_element(lp.begin(), lp.end());
            if (static_cast<int>(best - lp.begin()) == labels[s]) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(set.size());
    };

    ProbeReport report;
    report.n_train = train_ids.size();
    report.n_eval = eval_ids.size();
    report.n_classes = n_classes;
    report.train_accuracy = accuracy(train_ids);
    report.accuracy = accuracy(eval_ids);
    return report;
}

}  // namespace sfield
