#pragma once

// Self-contained pretraining for the field: small dense heads with
// hand-rolled reverse-mode gradients, Adam, and a deterministic training
// loop. Three pretext tasks share one pipeline: embed selected points,
// concatenate each embedding with its point's coordinates, run a head,
// score a loss, and push gradients back into the head and (unless frozen)
// the grid itself. No threading, fixed summation orders: a given
// (dataset, config, seed) triple reproduces results bit for bit.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>

#include "sfield/geometry.hpp"
#include "sfield/grid.hpp"
#include "sfield/matrix.hpp"

namespace sfield {

// Derive an independent RNG stream seed from (seed, stream id).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Dense heads

enum class Activation : std::uint8_t { identity, relu };

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w;  // out x in, row-major
    std::vector<double> b;  // out
    Activation act = Activation::identity;
};

// An MLP with an optional channel-wise max-pool in the middle: layers
// [0, shared_count) are applied to every input row independently; if any
// layers remain, the rows are max-pooled into one vector first. A head
// with shared_count == layers.size() never pools (per-row output).
struct MLPParams {
    std::vector<DenseLayer> layers;
    std::size_t shared_count = 0;
};

void validate_mlp(const MLPParams& p);
std::size_t param_count(const MLPParams& p);

// Fan-in-scaled uniform init (bound sqrt(6/fan_in)), zero biases.
DenseLayer make_dense_layer(std::size_t in, std::size_t out, Activation act, std::mt19937_64& rng);

// Point-set decoder: (C+3) -> 64 -> 128 -> 256 per row, max-pool,
// 256 -> 512 -> 3*n_out; predicts n_out points.
MLPParams make_recon_decoder(std::size_t channels, std::size_t n_out, std::uint64_t seed);
// Per-point normal regressor: (C+3) -> 64 -> 64 -> 3, rows L2-normalized.
MLPParams make_normal_head(std::size_t channels, std::uint64_t seed);
// Shape classifier: decoder trunk, then 256 -> 128 -> n_classes log-probs.
MLPParams make_classifier_head(std::size_t channels, std::size_t n_classes, std::uint64_t seed);

// Everything the backward pass needs from one forward evaluation.
struct LayerTape {
    Matrix input;
    Matrix preact;
};
struct MLPTape {
    std::vector<LayerTape> shared;
    std::size_t pool_rows = 0;               // rows entering the pool (0 = no pool)
    std::vector<std::uint32_t> pool_argmax;  // winning row per pooled channel
    std::vector<LayerTape> tail;
    Matrix raw_out;                       // decoder: 1 x 3n; normals: pre-normalization rows; classifier: logits
    std::vector<std::uint8_t> norm_guard;  // rows where the normal head's epsilon guard fired
};

// Core forward: shared stack, optional pool, tail stack. Output is
// 1 x out when pooled, rows x out otherwise.
Matrix mlp_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape = nullptr);
// Reverse of mlp_forward. d_out must match the forward output shape.
// Parameter gradients accumulate into `grads` (same shapes as p); the
// return value is d(loss)/d(rows).
Matrix mlp_backward(const MLPParams& p, const MLPTape& tape, const Matrix& d_out,
                    MLPParams& grads);

// Task heads on top of the core.
PointCloud recon_decoder_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape = nullptr);
Matrix normal_head_forward(const MLPParams& p, const Matrix& rows, MLPTape* tape = nullptr);
std::vector<double> classify_forward(const MLPParams& p, const Matrix& rows,
                                     MLPTape* tape = nullptr);

// ---------------------------------------------------------------------------
// Losses (means over points/rows) and their input gradients.

double loss_chamfer(const PointCloud& pred, const PointCloud& target,
                    ChamferMatch* match = nullptr);
// Treats the recorded nearest-neighbor matching as constant.
Matrix chamfer_backward(const PointCloud& pred, const PointCloud& target,
                        const ChamferMatch& match);

// mean(1 - cos(pred, target)); orientation-sensitive by default, the
// sign-invariant variant scores mean(1 - |cos|). Targets are assumed unit.
double loss_normal_cosine(const Matrix& pred_units, const std::vector<Point3>& target,
                          bool sign_invariant = false);
Matrix normal_cosine_backward(const Matrix& pred_units, const std::vector<Point3>& target,
                              bool sign_invariant = false);
// Gradient through the row L2 normalization of the normal head.
Matrix normal_head_backward(const MLPParams& p, const MLPTape& tape, const Matrix& d_units,
                            MLPParams& grads);

double loss_nll(std::span<const double> log_probs, std::size_t label);
// Gradient of NLL through the log-softmax, i.e. softmax - onehot.
std::vector<double> nll_logits_backward(std::span<const double> log_probs, std::size_t label);
// Backward for classify_forward given d(loss)/d(logits).
Matrix classify_backward(const MLPParams& p, const MLPTape& tape,
                         std::span<const double> d_logits, MLPParams& grads);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<double>> m;  // one slot per parameter block
    std::vector<std::vector<double>> v;
};

AdamState make_adam_state(const std::vector<std::size_t>& block_sizes, double beta1 = 0.9,
                          double beta2 = 0.999, double epsilon = 1e-8);

// One bias-corrected update: p -= lr * m_hat / (sqrt(v_hat) + epsilon).
// Block shapes must match the state they were created with.
void adam_step(AdamState& state, const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, double lr);

// Parameter blocks of a head in a fixed order (w, b per layer).
std::vector<std::span<double>> mlp_param_blocks(MLPParams& p);
std::vector<std::span<const double>> mlp_param_blocks(const MLPParams& p);

// ---------------------------------------------------------------------------
// Training

enum class PretextTask { reconstruction, normal_estimation, supervised };
enum class WeightMode { train_grid, freeze_grid };

struct PretextConfig {
    PretextTask task = PretextTask::reconstruction;
    std::size_t epochs = 150;
    double base_lr = 1e-3;
    double lr_decay = 0.2;          // multiplied in every lr_decay_every epochs
    std::size_t lr_decay_every = 50;
    std::size_t n_rows = 24;        // points embedded per shape for decoder/classifier input
    std::size_t n_out = 256;        // points the decoder reconstructs
    std::size_t k = 0;              // neighborhood size; 0 = adaptive per cloud
    std::size_t batch_size = 8;
    double eval_fraction = 0.2;
    std::uint64_t seed = 0;
    WeightMode weight_mode = WeightMode::train_grid;
    std::size_t n_classes = 0;      // supervised only; 0 = infer as max label + 1
    bool sign_invariant_normals = false;
};

// Step-decay schedule: base_lr * lr_decay^floor(epoch / lr_decay_every).
double lr_at(std::size_t epoch, const PretextConfig& cfg);

struct TrainSample {
    PointCloud cloud;
    std::vector<Point3> normals;  // per point; required for normal_estimation
    int label = -1;               // required for supervised
};

// Per-cloud neighbor indices, grid-independent; computed once per sample so
// grid updates between epochs never re-run the O(N^2) searches.
struct SampleGeometry {
    std::size_t k = 0;
    std::vector<std::vector<std::size_t>> knn;  // per point: (distance, index)-ordered
};
SampleGeometry sample_geometry(const PointCloud& cloud, std::size_t k = 0);

// Recorded forward pass of one sample through embed -> head -> loss.
struct ForwardTrace {
    std::vector<std::size_t> rows;      // embedded point indices
    std::vector<InterpTape> embed;      // one per embedded row
    Matrix head_in;                     // rows x (C+3)
    MLPTape mlp;
    PointCloud pred_points;             // reconstruction
    ChamferMatch match;
    Matrix pred_normals;                // normal estimation
    std::vector<double> log_probs;      // supervised
};

// Loss of one sample. row_indices picks which points feed the head (the
// normal task embeds every point; callers pass all indices there). Pass a
// trace to keep the tapes for pretext_backward.
double pretext_forward(const FieldGrid& grid, const MLPParams& head, const PretextConfig& cfg,
                       const TrainSample& sample, const SampleGeometry& geom,
                       std::span<const std::size_t> row_indices, ForwardTrace* trace = nullptr);

struct PretextGrads {
    FieldGrid grid;  // zero-sized when the grid is frozen
    MLPParams head;
};
PretextGrads make_pretext_grads(const FieldGrid& grid, const MLPParams& head, bool want_grid);

// Accumulate d(loss)/d(params) for one traced sample into `accum`.
void pretext_backward(const FieldGrid& grid, const MLPParams& head, const PretextConfig& cfg,
                      const TrainSample& sample, const ForwardTrace& trace, PretextGrads& accum);

struct TrainReport {
    std::vector<double> lr;          // per epoch
    std::vector<double> train_loss;  // per epoch, mean over visited samples
    std::vector<double> eval_loss;   // per epoch, held-out split
    double initial_eval_loss = 0.0;  // eval loss before the first update
    double final_metric = 0.0;       // chamfer / mean cosine / accuracy on the eval split
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    std::string config_echo;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> eval_indices;
};

struct TrainResult {
    FieldGrid grid;
    MLPParams head;
    TrainReport report;
};

// Full pretraining run. The grid argument is the starting field (train_grid
// updates it; freeze_grid returns it bit-identical). The head is built
// internally from the config and grid channel count. on_epoch, when set, is
// called after each epoch with (epoch, lr, train_loss, eval_loss); it has no
// effect on the computation.
using EpochCallback = std::function<void(std::size_t, double, double, double)>;
TrainResult train_pretext(const std::vector<TrainSample>& dataset, const PretextConfig& cfg,
                          FieldGrid grid, const EpochCallback& on_epoch = {});

std::string describe_config(const PretextConfig& cfg);

}  // namespace sfield
