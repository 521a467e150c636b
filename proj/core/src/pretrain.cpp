#include "sfield/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace sfield {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over the combined word; cheap and well-scrambled.
    std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// ---------------------------------------------------------------------------
// Head construction

void validate_mlp(const MLPParams& p) {
    if (p.layers.empty()) throw std::invalid_argument("MLPParams: no layers");
    if (p.shared_count > p.layers.size())
        throw std::invalid_argument("MLPParams: shared_count exceeds layer count");
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        const DenseLayer& l = p.layers[i];
        if (l.in == 0 || l.out == 0) throw std::invalid_argument("MLPParams: empty layer");
        if (l.w.size() != l.in * l.out || l.b.size() != l.out)
            throw std::invalid_argument("MLPParams: layer buffer size mismatch");
        // The pool is channel-wise, so widths chain straight through it.
        if (i > 0 && l.in != p.layers[i - 1].out)
            throw std::invalid_argument("MLPParams: layer widths do not chain");
    }
}

std::size_t param_count(const MLPParams& p) {
    std::size_t n = 0;
    for (const DenseLayer& l : p.layers) n += l.w.size() + l.b.size();
    return n;
}

DenseLayer make_dense_layer(std::size_t in, std::size_t out, Activation act,
                            std::mt19937_64& rng) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.act = act;
    l.w.resize(in * out);
    l.b.assign(out, 0.0);
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : l.w) w = dist(rng);
    return l;
}

MLPParams make_recon_decoder(std::size_t channels, std::size_t n_out, std::uint64_t seed) {
    if (n_out < 1) throw std::invalid_argument("make_recon_decoder: n_out must be >= 1");
    std::mt19937_64 rng(seed);
    MLPParams p;
    p.layers.push_back(make_dense_layer(channels + 3, 64, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(64, 128, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(128, 256, Activation::relu, rng));
    p.shared_count = 3;
    p.layers.push_back(make_dense_layer(256, 512, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(512, 3 * n_out, Activation::identity, rng));
    return p;
}

MLPParams make_normal_head(std::size_t channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    MLPParams p;
    p.layers.push_back(make_dense_layer(channels + 3, 64, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(64, 64, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(64, 3, Activation::identity, rng));
    p.shared_count = 3;  // per-row head, never pools
    return p;
}

MLPParams make_classifier_head(std::size_t channels, std::size_t n_classes, std::uint64_t seed) {
    if (n_classes < 2) throw std::invalid_argument("make_classifier_head: need >= 2 classes");
    std::mt19937_64 rng(seed);
    MLPParams p;
    p.layers.push_back(make_dense_layer(channels + 3, 64, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(64, 128, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(128, 256, Activation::relu, rng));
    p.shared_count = 3;
    p.layers.push_back(make_dense_layer(256, 128, Activation::relu, rng));
    p.layers.push_back(make_dense_layer(128, n_classes, Activation::identity, rng));
    return p;
}

// ---------------------------------------------------------------------------
// Core forward / backward

namespace {

Matrix dense_forward(const DenseLayer& l, const Matrix& in, LayerTape* tape) {
    Matrix out(in.rows, l.out);
    for (std::size_t r = 0; r < in.rows; ++r) {
        const double* x = in.values.data() + r * in.cols;
        double* y = out.values.data() + r * out.cols;
        for (std::size_t i = 0; i < l.out; ++i) {
            const double* w = l.w.data() + i * l.in;
            double acc = l.b[i];
            for (std::size_t j = 0; j < l.in; ++j) acc += w[j] * x[j];
            y[i] = acc;
        }
    }
    if (tape) {
        tape->input = in;
        tape->preact = out;
    }
    if (l.act == Activation::relu)
        for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    return out;
}

// upstream is d(loss)/d(layer output); returns d(loss)/d(layer input) and
// accumulates parameter gradients.
Matrix dense_backward(const DenseLayer& l, const LayerTape& tape, const Matrix& upstream,
                      DenseLayer& grad) {
    Matrix dpre = upstream;
    if (l.act == Activation::relu) {
        for (std::size_t i = 0; i < dpre.values.size(); ++i)
            if (tape.preact.values[i] <= 0.0) dpre.values[i] = 0.0;
    }

    Matrix din(tape.input.rows, l.in);
    for (std::size_t r = 0; r < dpre.rows; ++r) {
        const double* dp = dpre.values.data() + r * l.out;
        const double* x = tape.input.values.data() + r * l.in;
        double* dx = din.values.data() + r * l.in;
        for (std::size_t i = 0; i < l.out; ++i) {
            const double g = dp[i];
            if (g == 0.0) continue;
            grad.b[i] += g;
            double* gw = grad.w.data() + i * l.in;
            const double* w = l.w.data() + i * l.in;
            for (std::size_t j = 0; j < l.in; ++j) {
                gw[j] += g * x[j];
                dx[j] += g * w[j];
            }
        }
    }
    return din;
}

}  // namespace

Matrix mlp_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape) {
    validate_mlp(p);
    if (rows.rows == 0) throw std::invalid_argument("mlp_forward: no input rows");
    if (rows.cols != p.layers[0].in)
        throw std::invalid_argument("mlp_forward: input width does not match first layer");

    if (tape) {
        tape->shared.clear();
        tape->tail.clear();
        tape->pool_rows = 0;
        tape->pool_argmax.clear();
    }

    Matrix cur = rows;
    for (std::size_t i = 0; i < p.shared_count; ++i) {
        LayerTape lt;
        cur = dense_forward(p.layers[i], cur, tape ? &lt : nullptr);
        if (tape) tape->shared.push_back(std::move(lt));
    }

    const bool pooled = p.shared_count < p.layers.size();
    if (pooled) {
        Matrix pool(1, cur.cols);
        std::vector<std::uint32_t> argmax(cur.cols, 0);
        for (std::size_t c = 0; c < cur.cols; ++c) pool.at(0, c) = cur.at(0, c);
        for (std::size_t r = 1; r < cur.rows; ++r)
            for (std::size_t c = 0; c < cur.cols; ++c)
                if (cur.at(r, c) > pool.at(0, c)) {  // ties keep the earliest row
                    pool.at(0, c) = cur.at(r, c);
                    argmax[c] = static_cast<std::uint32_t>(r);
                }
        if (tape) {
            tape->pool_rows = cur.rows;
            tape->pool_argmax = std::move(argmax);
        }
        cur = std::move(pool);
        for (std::size_t i = p.shared_count; i < p.layers.size(); ++i) {
            LayerTape lt;
            cur = dense_forward(p.layers[i], cur, tape ? &lt : nullptr);
            if (tape) tape->tail.push_back(std::move(lt));
        }
    }
    if (tape) tape->raw_out = cur;
    return cur;
}

Matrix mlp_backward(const MLPParams& p, const MLPTape& tape, const Matrix& d_out,
                    MLPParams& grads) {
    if (grads.layers.size() != p.layers.size())
        throw std::invalid_argument("mlp_backward: gradient shape mismatch");

    Matrix d = d_out;
    const bool pooled = p.shared_count < p.layers.size();
    if (pooled) {
        for (std::size_t i = p.layers.size(); i-- > p.shared_count;)
            d = dense_backward(p.layers[i], tape.tail[i - p.shared_count], d,
                               grads.layers[i]);
        // Route the pooled gradient to each channel's winning row.
        Matrix drows(tape.pool_rows, d.cols);
        for (std::size_t c = 0; c < d.cols; ++c)
            drows.at(tape.pool_argmax[c], c) = d.at(0, c);
        d = std::move(drows);
    }
    for (std::size_t i = p.shared_count; i-- > 0;)
        d = dense_backward(p.layers[i], tape.shared[i], d, grads.layers[i]);
    return d;
}

PointCloud recon_decoder_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape) {
    const Matrix out = mlp_forward(p, rows, tape);
    if (out.rows != 1 || out.cols % 3 != 0)
        throw std::invalid_argument("recon_decoder_forward: head does not emit one 3n row");
    PointCloud pts(out.cols / 3);
    for (std::size_t t = 0; t < pts.size(); ++t)
        pts[t] = {out.at(0, 3 * t), out.at(0, 3 * t + 1), out.at(0, 3 * t + 2)};
    return pts;
}

namespace {
constexpr double kNormGuard = 1e-12;  // rows shorter than this emit (0,0,1), zero gradient
}

Matrix normal_head_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape) {
    if (p.shared_count != p.layers.size())
        throw std::invalid_argument("normal_head_forward: head must be per-row (no pool)");
    Matrix raw = mlp_forward(p, rows, tape);
    if (raw.cols != 3) throw std::invalid_argument("normal_head_forward: head must emit 3 columns");

    Matrix units(raw.rows, 3);
    std::vector<std::uint8_t> guard(raw.rows, 0);
    for (std::size_t r = 0; r < raw.rows; ++r) {
        const double x = raw.at(r, 0), y = raw.at(r, 1), z = raw.at(r, 2);
        const double n = std::sqrt(x * x + y * y + z * z);
        if (n < kNormGuard) {
            units.at(r, 0) = 0.0;
            units.at(r, 1) = 0.0;
            units.at(r, 2) = 1.0;
            guard[r] = 1;
        } else {
            units.at(r, 0) = x / n;
            units.at(r, 1) = y / n;
            units.at(r, 2) = z / n;
        }
    }
    if (tape) tape->norm_guard = std::move(guard);
    return units;
}

std::vector<double> classify_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape) {
    const Matrix logits = mlp_forward(p, rows, tape);
    if (logits.rows != 1)
        throw std::invalid_argument("classify_forward: head must pool to a single row");

    double m = logits.at(0, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, logits.at(0, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(logits.at(0, c) - m);
    const double lse = m + std::log(sum);

    std::vector<double> lp(logits.cols);
    for (std::size_t c = 0; c < logits.cols; ++c) lp[c] = logits.at(0, c) - lse;
    return lp;
}

// ---------------------------------------------------------------------------
// Losses

double loss_chamfer(const PointCloud& pred, const PointCloud& target, ChamferMatch* match) {
    return chamfer_distance(pred, target, match);
}

Matrix chamfer_backward(const PointCloud& pred, const PointCloud& target,
                        const ChamferMatch& match) {
    if (match.nearest_in_b.size() != pred.size() || match.nearest_in_a.size() != target.size())
        throw std::invalid_argument("chamfer_backward: match does not fit the clouds");

    Matrix d(pred.size(), 3);
    const double wa = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Point3 diff = pred[i] - target[match.nearest_in_b[i]];
        d.at(i, 0) += wa * diff.x;
        d.at(i, 1) += wa * diff.y;
        d.at(i, 2) += wa * diff.z;
    }
    const double wb = 2.0 / static_cast<double>(target.size());
    for (std::size_t j = 0; j < target.size(); ++j) {
        const std::size_t i = match.nearest_in_a[j];
        const Point3 diff = pred[i] - target[j];
        d.at(i, 0) += wb * diff.x;
        d.at(i, 1) += wb * diff.y;
        d.at(i, 2) += wb * diff.z;
    }
    return d;
}

double loss_normal_cosine(const Matrix& pred_units, const std::vector<Point3>& target,
                          bool sign_invariant) {
    if (pred_units.cols != 3 || pred_units.rows != target.size() || target.empty())
        throw std::invalid_argument("loss_normal_cosine: shape mismatch");
    double total = 0.0;
    for (std::size_t r = 0; r < target.size(); ++r) {
        const double d = pred_units.at(r, 0) * target[r].x + pred_units.at(r, 1) * target[r].y +
                         pred_units.at(r, 2) * target[r].z;
        total += 1.0 - (sign_invariant ? std::abs(d) : d);
    }
    return total / static_cast<double>(target.size());
}

Matrix normal_cosine_backward(const Matrix& pred_units, const std::vector<Point3>& target,
                              bool sign_invariant) {
    Matrix d(pred_units.rows, 3);
    const double inv = 1.0 / static_cast<double>(target.size());
    for (std::size_t r = 0; r < target.size(); ++r) {
        double s = 1.0;
        if (sign_invariant) {
            const double dot = pred_units.at(r, 0) * target[r].x +
                               pred_units.at(r, 1) * target[r].y +
                               pred_units.at(r, 2) * target[r].z;
            s = dot < 0.0 ? -1.0 : 1.0;  // subgradient at 0 picks +1
        }
        d.at(r, 0) = -s * target[r].x * inv;
        d.at(r, 1) = -s * target[r].y * inv;
        d.at(r, 2) = -s * target[r].z * inv;
    }
    return d;
}

Matrix normal_head_backward(const MLPParams& p, const MLPTape& tape, const Matrix& d_units,
                            MLPParams& grads) {
    const Matrix& raw = tape.raw_out;
    if (d_units.rows != raw.rows || d_units.cols != 3)
        throw std::invalid_argument("normal_head_backward: shape mismatch");

    Matrix draw(raw.rows, 3);
    for (std::size_t r = 0; r < raw.rows; ++r) {
        if (!tape.norm_guard.empty() && tape.norm_guard[r]) continue;  // guard: zero gradient
        const double x = raw.at(r, 0), y = raw.at(r, 1), z = raw.at(r, 2);
        const double n = std::sqrt(x * x + y * y + z * z);
        const double ux = x / n, uy = y / n, uz = z / n;
        const double dot = ux * d_units.at(r, 0) + uy * d_units.at(r, 1) + uz * d_units.at(r, 2);
        draw.at(r, 0) = (d_units.at(r, 0) - ux * dot) / n;
        draw.at(r, 1) = (d_units.at(r, 1) - uy * dot) / n;
        draw.at(r, 2) = (d_units.at(r, 2) - uz * dot) / n;
    }
    return mlp_backward(p, tape, draw, grads);
}

double loss_nll(std::span<const double> log_probs, std::size_t label) {
    if (label >= log_probs.size()) throw std::invalid_argument("loss_nll: label out of range");
    return -log_probs[label];
}

std::vector<double> nll_logits_backward(std::span<const double> log_probs, std::size_t label) {
    if (label >= log_probs.size())
        throw std::invalid_argument("nll_logits_backward: label out of range");
    std::vector<double> d(log_probs.size());
    for (std::size_t c = 0; c < log_probs.size(); ++c)
        d[c] = std::exp(log_probs[c]) - (c == label ? 1.0 : 0.0);
    return d;
}

Matrix classify_backward(const MLPParams& p, const MLPTape& tape,
                         std::span<const double> d_logits, MLPParams& grads) {
    Matrix d(1, d_logits.size());
    for (std::size_t c = 0; c < d_logits.size(); ++c) d.at(0, c) = d_logits[c];
    return mlp_backward(p, tape, d, grads);
}

// ---------------------------------------------------------------------------
// Adam

AdamState make_adam_state(const std::vector<std::size_t>& block_sizes, double beta1, double beta2,
                          double epsilon) {
    AdamState st;
    st.beta1 = beta1;
    st.beta2 = beta2;
    st.epsilon = epsilon;
    st.m.reserve(block_sizes.size());
    st.v.reserve(block_sizes.size());
    for (std::size_t n : block_sizes) {
        st.m.emplace_back(n, 0.0);
        st.v.emplace_back(n, 0.0);
    }
    return st;
}

void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, double lr) {
    if (params.size() != state.m.size() || grads.size() != state.m.size())
        throw std::invalid_argument("adam_step: block count mismatch");

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != state.m[b].size() || grads[b].size() != state.m[b].size())
            throw std::invalid_argument("adam_step: block size mismatch");
        double* m = state.m[b].data();
        double* v = state.v[b].data();
        double* p = params[b].data();
        const double* g = grads[b].data();
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

std::vector<std::span<double>> mlp_param_blocks(MLPParams& p) {
    std::vector<std::span<double>> blocks;
    blocks.reserve(2 * p.layers.size());
    for (DenseLayer& l : p.layers) {
        blocks.emplace_back(l.w);
        blocks.emplace_back(l.b);
    }
    return blocks;
}

std::vector<std::span<const double>> mlp_param_blocks(const MLPParams& p) {
    std::vector<std::span<const double>> blocks;
    blocks.reserve(2 * p.layers.size());
    for (const DenseLayer& l : p.layers) {
        blocks.emplace_back(l.w);
        blocks.emplace_back(l.b);
    }
    return blocks;
}

// ---------------------------------------------------------------------------
// Per-sample pipeline

SampleGeometry sample_geometry(const PointCloud& cloud, std::size_t k) {
    if (cloud.empty()) throw std::invalid_argument("sample_geometry: empty cloud");
    if (k == 0) k = cloud.size() == 1 ? 1 : adaptive_k(cloud.size());
    if (k > cloud.size()) throw std::invalid_argument("sample_geometry: k exceeds cloud size");

    SampleGeometry g;
    g.k = k;
    g.knn.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) g.knn[i] = knn_l1(cloud, cloud[i], k);
    return g;
}

double pretext_forward(const FieldGrid& grid, const MLPParams& head, const PretextConfig& cfg,
                       const TrainSample& sample, const SampleGeometry& geom,
                       std::span<const std::size_t> row_indices, ForwardTrace* trace) {
    if (row_indices.empty()) throw std::invalid_argument("pretext_forward: no rows selected");
    if (geom.knn.size() != sample.cloud.size())
        throw std::invalid_argument("pretext_forward: geometry does not match cloud");

    const std::size_t c = grid.channels;
    Matrix head_in(row_indices.size(), c + 3);
    if (trace) {
        trace->rows.assign(row_indices.begin(), row_indices.end());
        trace->embed.assign(row_indices.size(), InterpTape{});
    }

    for (std::size_t i = 0; i < row_indices.size(); ++i) {
        const std::size_t r = row_indices[i];
        if (r >= sample.cloud.size())
            throw std::invalid_argument("pretext_forward: row index out of range");
        const std::vector<double> emb =
            embed_cloud_row(grid, sample.cloud, geom.knn[r], trace ? &trace->embed[i] : nullptr);
        double* row = head_in.values.data() + i * head_in.cols;
        std::copy(emb.begin(), emb.end(), row);
        row[c] = sample.cloud[r].x;
        row[c + 1] = sample.cloud[r].y;
        row[c + 2] = sample.cloud[r].z;
    }

    double loss = 0.0;
    switch (cfg.task) {
        case PretextTask::reconstruction: {
            MLPTape* mt = trace ? &trace->mlp : nullptr;
            const PointCloud pred = recon_decoder_forward(head, head_in, mt);
            ChamferMatch match;
            loss = loss_chamfer(pred, sample.cloud, &match);
            if (trace) {
                trace->pred_points = pred;
                trace->match = std::move(match);
            }
            break;
        }
        case PretextTask::normal_estimation: {
            if (sample.normals.size() != sample.cloud.size())
                throw std::invalid_argument("pretext_forward: sample has no usable normals");
            MLPTape* mt = trace ? &trace->mlp : nullptr;
            const Matrix units = normal_head_forward(head, head_in, mt);
            std::vector<Point3> target(row_indices.size());
            for (std::size_t i = 0; i < row_indices.size(); ++i)
                target[i] = sample.normals[row_indices[i]];
            loss = loss_normal_cosine(units, target, cfg.sign_invariant_normals);
            if (trace) trace->pred_normals = units;
            break;
        }
        case PretextTask::supervised: {
            if (sample.label < 0)
                throw std::invalid_argument("pretext_forward: sample has no label");
            MLPTape* mt = trace ? &trace->mlp : nullptr;
            const std::vector<double> lp = classify_forward(head, head_in, mt);
            loss = loss_nll(lp, static_cast<std::size_t>(sample.label));
            if (trace) trace->log_probs = lp;
            break;
        }
    }
    if (trace) trace->head_in = std::move(head_in);
    return loss;
}

PretextGrads make_pretext_grads(const FieldGrid& grid, const MLPParams& head, bool want_grid) {
    PretextGrads g;
    if (want_grid) g.grid = FieldGrid(grid.resolution, grid.channels);
    g.head.shared_count = head.shared_count;
    g.head.layers.reserve(head.layers.size());
    for (const DenseLayer& l : head.layers) {
        DenseLayer z;
        z.in = l.in;
        z.out = l.out;
        z.act = l.act;
        z.w.assign(l.w.size(), 0.0);
        z.b.assign(l.b.size(), 0.0);
        g.head.layers.push_back(std::move(z));
    }
    return g;
}

void pretext_backward(const FieldGrid& grid, const MLPParams& head, const PretextConfig& cfg,
                      const TrainSample& sample, const ForwardTrace& trace, PretextGrads& accum) {
    Matrix drows;
    switch (cfg.task) {
        case PretextTask::reconstruction: {
            const Matrix dpred = chamfer_backward(trace.pred_points, sample.cloud, trace.match);
            Matrix dflat(1, dpred.rows * 3);
            std::copy(dpred.values.begin(), dpred.values.end(), dflat.values.begin());
            drows = mlp_backward(head, trace.mlp, dflat, accum.head);
            break;
        }
        case PretextTask::normal_estimation: {
            std::vector<Point3> target(trace.rows.size());
            for (std::size_t i = 0; i < trace.rows.size(); ++i)
                target[i] = sample.normals[trace.rows[i]];
            const Matrix dunits = normal_cosine_backward(trace.pred_normals, target,
                                                         cfg.sign_invariant_normals);
            drows = normal_head_backward(head, trace.mlp, dunits, accum.head);
            break;
        }
        case PretextTask::supervised: {
            const std::vector<double> dlogits =
                nll_logits_backward(trace.log_probs, static_cast<std::size_t>(sample.label));
            drows = classify_backward(head, trace.mlp, dlogits, accum.head);
            break;
        }
    }

    if (accum.grid.resolution != 0) {
        const std::size_t c = grid.channels;
        for (std::size_t i = 0; i < trace.rows.size(); ++i) {
            const std::span<const double> up(drows.values.data() + i * drows.cols, c);
            grad_embed_wrt_grid(trace.embed[i], up, accum.grid);
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop

double lr_at(std::size_t epoch, const PretextConfig& cfg) {
    const std::size_t steps = epoch / cfg.lr_decay_every;
    return cfg.base_lr * std::pow(cfg.lr_decay, static_cast<double>(steps));
}

std::string describe_config(const PretextConfig& cfg) {
    const char* task = cfg.task == PretextTask::reconstruction       ? "reconstruction"
                       : cfg.task == PretextTask::normal_estimation ? "normal_estimation"
                                                                    : "supervised";
    std::ostringstream os;
    os << "task=" << task << " epochs=" << cfg.epochs << " base_lr=" << cfg.base_lr
       << " lr_decay=" << cfg.lr_decay << " lr_decay_every=" << cfg.lr_decay_every
       << " n_rows=" << cfg.n_rows << " n_out=" << cfg.n_out << " k=" << cfg.k
       << " batch_size=" << cfg.batch_size << " eval_fraction=" << cfg.eval_fraction
       << " seed=" << cfg.seed
       << " weight_mode=" << (cfg.weight_mode == WeightMode::train_grid ? "train_grid" : "freeze_grid")
       << " n_classes=" << cfg.n_classes
       << " sign_invariant_normals=" << (cfg.sign_invariant_normals ? 1 : 0);
    return os.str();
}

namespace {

// First `count` entries of a seeded partial Fisher-Yates shuffle of [0, n).
std::vector<std::size_t> sample_distinct(std::mt19937_64& rng, std::size_t n, std::size_t count) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    count = std::min(count, n);
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    return idx;
}

void zero_grads(PretextGrads& g) {
    std::fill(g.grid.values.begin(), g.grid.values.end(), 0.0);
    for (DenseLayer& l : g.head.layers) {
        std::fill(l.w.begin(), l.w.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
}

void scale_grads(PretextGrads& g, double s) {
    for (double& v : g.grid.values) v *= s;
    for (DenseLayer& l : g.head.layers) {
        for (double& v : l.w) v *= s;
        for (double& v : l.b) v *= s;
    }
}

void validate_config(const PretextConfig& cfg) {
    if (!(cfg.base_lr > 0.0)) throw std::invalid_argument("train_pretext: base_lr must be > 0");
    if (!(cfg.lr_decay > 0.0)) throw std::invalid_argument("train_pretext: lr_decay must be > 0");
    if (cfg.lr_decay_every < 1)
        throw std::invalid_argument("train_pretext: lr_decay_every must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("train_pretext: batch_size must be >= 1");
    if (cfg.n_rows < 1) throw std::invalid_argument("train_pretext: n_rows must be >= 1");
    if (cfg.n_out < 1) throw std::invalid_argument("train_pretext: n_out must be >= 1");
    if (!(cfg.eval_fraction >= 0.0 && cfg.eval_fraction < 1.0))
        throw std::invalid_argument("train_pretext: eval_fraction must be in [0, 1)");
}

}  // namespace

TrainResult train_pretext(const std::vector<TrainSample>& dataset, const PretextConfig& cfg,
                          FieldGrid grid, const EpochCallback& on_epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    validate_config(cfg);
    if (dataset.empty()) throw std::invalid_argument("train_pretext: empty dataset");
    if (grid.resolution < 2 || grid.channels < 1)
        throw std::invalid_argument("train_pretext: uninitialized grid");

    std::size_t n_classes = cfg.n_classes;
    for (const TrainSample& s : dataset) {
        if (s.cloud.empty()) throw std::invalid_argument("train_pretext: sample with empty cloud");
        if (cfg.task == PretextTask::normal_estimation && s.normals.size() != s.cloud.size())
            throw std::invalid_argument("train_pretext: sample lacks per-point normals");
        if (cfg.task == PretextTask::supervised) {
            if (s.label < 0) throw std::invalid_argument("train_pretext: sample lacks a label");
            if (cfg.n_classes == 0)
                n_classes = std::max(n_classes, static_cast<std::size_t>(s.label) + 1);
            else if (static_cast<std::size_t>(s.label) >= n_classes)
                throw std::invalid_argument("train_pretext: label outside configured class count");
        }
    }
    if (cfg.task == PretextTask::supervised && n_classes < 2)
        throw std::invalid_argument("train_pretext: supervised task needs >= 2 classes");

    MLPParams head;
    const std::uint64_t head_seed = mix_seed(cfg.seed, 0);
    switch (cfg.task) {
        case PretextTask::reconstruction:
            head = make_recon_decoder(grid.channels, cfg.n_out, head_seed);
            break;
        case PretextTask::normal_estimation:
            head = make_normal_head(grid.channels, head_seed);
            break;
        case PretextTask::supervised:
            head = make_classifier_head(grid.channels, n_classes, head_seed);
            break;
    }

    // Train/eval split.
    std::vector<std::size_t> ids(dataset.size());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    {
        std::mt19937_64 split_rng(mix_seed(cfg.seed, 1));
        std::shuffle(ids.begin(), ids.end(), split_rng);
    }
    std::size_t eval_n =
        static_cast<std::size_t>(cfg.eval_fraction * static_cast<double>(dataset.size()));
    if (eval_n >= dataset.size()) eval_n = dataset.size() - 1;
    std::vector<std::size_t> train_ids(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(eval_n));
    std::vector<std::size_t> eval_ids(ids.end() - static_cast<std::ptrdiff_t>(eval_n), ids.end());
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(eval_ids.begin(), eval_ids.end());

    // Neighbor searches are grid-independent; run them once up front.
    std::vector<SampleGeometry> geom(dataset.size());
    for (std::size_t s = 0; s < dataset.size(); ++s)
        geom[s] = sample_geometry(dataset[s].cloud, cfg.k);

    const bool train_grid = cfg.weight_mode == WeightMode::train_grid;
    const bool all_rows = cfg.task == PretextTask::normal_estimation;

    auto rows_for = [&](std::size_t s, std::mt19937_64& rng) {
        const std::size_t n = dataset[s].cloud.size();
        if (all_rows || cfg.n_rows >= n) {
            std::vector<std::size_t> all(n);
            std::iota(all.begin(), all.end(), std::size_t{0});
            return all;
        }
        return sample_distinct(rng, n, cfg.n_rows);
    };
    // Eval row choices are a pure function of (seed, sample), so eval losses
    // are comparable across epochs.
    auto eval_rows = [&](std::size_t s) {
        std::mt19937_64 rng(mix_seed(mix_seed(cfg.seed, 4), s));
        return rows_for(s, rng);
    };

    const std::vector<std::size_t>& eval_set = eval_ids.empty() ? train_ids : eval_ids;
    auto eval_pass = [&]() {
        double total = 0.0;
        for (std::size_t s : eval_set) {
            const std::vector<std::size_t> rows = eval_rows(s);
            total += pretext_forward(grid, head, cfg, dataset[s], geom[s], rows, nullptr);
        }
        return total / static_cast<double>(eval_set.size());
    };

    TrainReport report;
    report.seed = cfg.seed;
    report.config_echo = describe_config(cfg);
    report.train_indices = train_ids;
    report.eval_indices = eval_ids;
    report.initial_eval_loss = eval_pass();

    // Optimizer state: grid block first (when trained), then head blocks.
    std::vector<std::size_t> block_sizes;
    if (train_grid) block_sizes.push_back(grid.values.size());
    for (const DenseLayer& l : head.layers) {
        block_sizes.push_back(l.w.size());
        block_sizes.push_back(l.b.size());
    }
    AdamState adam = make_adam_state(block_sizes);

    PretextGrads accum = make_pretext_grads(grid, head, train_grid);
    std::mt19937_64 order_rng(mix_seed(cfg.seed, 2));
    std::mt19937_64 row_rng(mix_seed(cfg.seed, 3));

    report.lr.reserve(cfg.epochs);
    report.train_loss.reserve(cfg.epochs);
    report.eval_loss.reserve(cfg.epochs);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        report.lr.push_back(lr);
        std::vector<std::size_t> order = train_ids;
        std::shuffle(order.begin(), order.end(), order_rng);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            zero_grads(accum);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t s = order[b];
                const std::vector<std::size_t> rows = rows_for(s, row_rng);
                ForwardTrace trace;
                loss_sum += pretext_forward(grid, head, cfg, dataset[s], geom[s], rows, &trace);
                pretext_backward(grid, head, cfg, dataset[s], trace, accum);
            }
            scale_grads(accum, 1.0 / static_cast<double>(stop - start));

            std::vector<std::span<double>> params;
            std::vector<std::span<const double>> grads;
            if (train_grid) {
                params.emplace_back(grid.values);
                grads.emplace_back(accum.grid.values);
            }
            for (DenseLayer& l : head.layers) {
                params.emplace_back(l.w);
                params.emplace_back(l.b);
            }
            for (const DenseLayer& l : accum.head.layers) {
                grads.emplace_back(l.w);
                grads.emplace_back(l.b);
            }
            adam_step(adam, params, grads, lr);
        }
        report.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
        report.eval_loss.push_back(eval_pass());
        if (on_epoch) on_epoch(epoch, lr, report.train_loss.back(), report.eval_loss.back());
    }

    // Task metric on the eval split with the final parameters.
    switch (cfg.task) {
        case PretextTask::reconstruction:
            report.final_metric = report.eval_loss.empty() ? report.initial_eval_loss
                                                           : report.eval_loss.back();
            break;
        case PretextTask::normal_estimation:
            report.final_metric = 1.0 - (report.eval_loss.empty() ? report.initial_eval_loss
                                                                  : report.eval_loss.back());
            break;
        case PretextTask::supervised: {
            std::size_t correct = 0;
            for (std::size_t s : eval_set) {
                const std::vector<std::size_t> rows = eval_rows(s);
                ForwardTrace trace;
                pretext_forward(grid, head, cfg, dataset[s], geom[s], rows, &trace);
                const auto best = std::max_element(trace.log_probs.begin(), trace.log_probs.end());
                const auto pred = static_cast<int>(best - trace.log_probs.begin());
                if (pred == dataset[s].label) ++correct;
            }
            report.final_metric =
                static_cast<double>(correct) / static_cast<double>(eval_set.size());
            break;
        }
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    TrainResult result;
    result.grid = std::move(grid);
    result.head = std::move(head);
    result.report = std::move(report);
    return result;
}

}  // namespace sfield
