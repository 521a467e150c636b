#include "sfield/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sfield/adapters.hpp"
#include "sfield/geometry.hpp"
#include "sfield/grid.hpp"
#include "sfield/io.hpp"
#include "sfield/pretrain.hpp"
#include "sfield/probes.hpp"

namespace sfield {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Bad invocation discovered after flag parsing (e.g. a broken --config file).
// Maps to exit code 1, like any other usage mistake.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

PretextTask task_from(const std::string& name) {
    if (name == "recon") return PretextTask::reconstruction;
    if (name == "normal") return PretextTask::normal_estimation;
    if (name == "supervised") return PretextTask::supervised;
    throw UsageError("unknown task '" + name + "' (expected recon, normal, or supervised)");
}

InitScheme scheme_from(const std::string& name) {
    if (name == "uniform") return InitScheme::uniform;
    if (name == "normal") return InitScheme::normal;
    throw UsageError("unknown init scheme '" + name + "' (expected uniform or normal)");
}

GridPrecision precision_from(const std::string& name) {
    if (name == "f32") return GridPrecision::f32;
    if (name == "f64") return GridPrecision::f64;
    throw UsageError("unknown precision '" + name + "' (expected f32 or f64)");
}

Axis axis_from(const std::string& name) {
    if (name == "x") return Axis::x;
    if (name == "y") return Axis::y;
    if (name == "z") return Axis::z;
    throw UsageError("unknown axis '" + name + "' (expected x, y, or z)");
}

ProbeMode probe_mode_from(const std::string& name) {
    if (name == "max_fc") return ProbeMode::max_fc;
    if (name == "pointwise") return ProbeMode::pointwise_fc_max_fc;
    if (name == "flatten") return ProbeMode::flatten_fc;
    throw UsageError("unknown probe mode '" + name + "' (expected max_fc, pointwise, or flatten)");
}

// ---------------------------------------------------------------------------
// pretrain

struct PretrainOpts {
    std::string data;
    std::string out;
    std::string report;
    std::string config;
    std::string task = "recon";
    std::string init = "uniform";
    std::string init_grid;
    std::string precision = "f64";
    std::size_t r = 16;
    std::size_t c = 32;
    double init_param = 0.1;
    std::size_t epochs = 150;
    double lr = 1e-3;
    double decay = 0.2;
    std::size_t decay_every = 50;
    std::size_t rows = 24;
    std::size_t n_out = 256;
    std::size_t k = 0;
    std::size_t batch = 8;
    double eval_frac = 0.2;
    std::uint64_t seed = 0;
    std::size_t n_classes = 0;
    bool freeze_grid = false;
    bool sign_invariant = false;
    bool quiet = false;
};

// Option pointers so --config can tell explicit flags from defaults.
struct PretrainFlags {
    CLI::Option* task = nullptr;
    CLI::Option* init = nullptr;
    CLI::Option* init_grid = nullptr;
    CLI::Option* precision = nullptr;
    CLI::Option* r = nullptr;
    CLI::Option* c = nullptr;
    CLI::Option* init_param = nullptr;
    CLI::Option* epochs = nullptr;
    CLI::Option* lr = nullptr;
    CLI::Option* decay = nullptr;
    CLI::Option* decay_every = nullptr;
    CLI::Option* rows = nullptr;
    CLI::Option* n_out = nullptr;
    CLI::Option* k = nullptr;
    CLI::Option* batch = nullptr;
    CLI::Option* eval_frac = nullptr;
    CLI::Option* seed = nullptr;
    CLI::Option* n_classes = nullptr;
    CLI::Option* freeze_grid = nullptr;
    CLI::Option* sign_invariant = nullptr;
};

// Fill unset options from a JSON config file. Explicit flags win; unknown
// keys are rejected so typos don't silently fall back to defaults.
void apply_config_file(PretrainOpts& o, const PretrainFlags& f) {
    if (o.config.empty()) return;
    if (!fs::exists(o.config)) throw UsageError("config file not found: " + o.config);
    json j;
    try {
        j = json::parse(read_file(o.config));
    } catch (const json::exception& e) {
        throw UsageError("config file " + o.config + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("config file " + o.config + ": expected a JSON object");

    static const std::set<std::string> known = {
        "task",   "init",       "init_grid", "precision",  "r",         "c",
        "init_param", "epochs", "lr",        "decay",      "decay_every", "rows",
        "n_out",  "k",          "batch",     "eval_frac",  "seed",      "n_classes",
        "freeze_grid", "sign_invariant"};
    for (const auto& item : j.items())
        if (!known.contains(item.key()))
            throw UsageError("config file " + o.config + ": unknown key '" + item.key() + "'");

    try {
        auto pull = [&](const char* key, auto& var, CLI::Option* opt) {
            if (opt->count() == 0 && j.contains(key))
                var = j.at(key).get<std::decay_t<decltype(var)>>();
        };
        pull("task", o.task, f.task);
        pull("init", o.init, f.init);
        pull("init_grid", o.init_grid, f.init_grid);
        pull("precision", o.precision, f.precision);
        pull("r", o.r, f.r);
        pull("c", o.c, f.c);
        pull("init_param", o.init_param, f.init_param);
        pull("epochs", o.epochs, f.epochs);
        pull("lr", o.lr, f.lr);
        pull("decay", o.decay, f.decay);
        pull("decay_every", o.decay_every, f.decay_every);
        pull("rows", o.rows, f.rows);
        pull("n_out", o.n_out, f.n_out);
        pull("k", o.k, f.k);
        pull("batch", o.batch, f.batch);
        pull("eval_frac", o.eval_frac, f.eval_frac);
        pull("seed", o.seed, f.seed);
        pull("n_classes", o.n_classes, f.n_classes);
        pull("freeze_grid", o.freeze_grid, f.freeze_grid);
        pull("sign_invariant", o.sign_invariant, f.sign_invariant);
    } catch (const json::exception& e) {
        throw UsageError("config file " + o.config + ": " + e.what());
    }
}

int run_pretrain(const PretrainOpts& o) {
    const Dataset ds = load_dataset_dir(o.data);

    PretextConfig cfg;
    cfg.task = task_from(o.task);
    cfg.epochs = o.epochs;
    cfg.base_lr = o.lr;
    cfg.lr_decay = o.decay;
    cfg.lr_decay_every = o.decay_every;
    cfg.n_rows = o.rows;
    cfg.n_out = o.n_out;
    cfg.k = o.k;
    cfg.batch_size = o.batch;
    cfg.eval_fraction = o.eval_frac;
    cfg.seed = o.seed;
    cfg.weight_mode = o.freeze_grid ? WeightMode::freeze_grid : WeightMode::train_grid;
    cfg.n_classes = o.n_classes;
    cfg.sign_invariant_normals = o.sign_invariant;

    FieldGrid grid = o.init_grid.empty()
                         ? init_grid(o.r, o.c, scheme_from(o.init), o.init_param, o.seed)
                         : read_grid(o.init_grid);

    EpochCallback progress;
    if (!o.quiet) {
        const std::size_t total = cfg.epochs;
        progress = [total](std::size_t epoch, double lr, double train, double eval) {
            std::fprintf(stderr, "epoch %zu/%zu  lr %.3g  train %.6g  eval %.6g\n", epoch + 1,
                         total, lr, train, eval);
        };
    }

    TrainResult result = train_pretext(ds.samples, cfg, std::move(grid), progress);

    write_grid(o.out, result.grid, precision_from(o.precision));
    if (!o.report.empty()) write_train_report(o.report, result.report);

    std::fprintf(stderr, "trained on %zu shapes in %.1f s; final metric %.6g; grid -> %s\n",
                 ds.samples.size(), result.report.wall_seconds, result.report.final_metric,
                 o.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// embed

struct EmbedOpts {
    std::string grid;
    std::string input;
    std::string repr;
    std::string out;
    std::size_t k = 0;
    std::size_t samples = 0;  // 0 = max(2048, 4 * vertex count) for meshes
    std::size_t radius_voxels = 4;
    std::uint64_t seed = 0;
};

int run_embed(const EmbedOpts& o) {
    const FieldGrid grid = read_grid(o.grid);
    Matrix m;
    if (o.repr == "cloud") {
        const XyzData data = read_xyz(o.input);
        m = embed_cloud(grid, data.points, o.k);
    } else if (o.repr == "mesh-vertex" || o.repr == "mesh-edge" || o.repr == "mesh-face") {
        const TriMesh mesh = read_off(o.input);
        const std::size_t n_samples =
            o.samples != 0 ? o.samples : std::max<std::size_t>(2048, 4 * mesh.vertices.size());
        const MeshElementKind kind = o.repr == "mesh-vertex" ? MeshElementKind::vertex
                                     : o.repr == "mesh-edge" ? MeshElementKind::edge_midpoint
                                                             : MeshElementKind::face_barycenter;
        m = mesh_element_embeddings(grid, mesh, kind, n_samples, o.seed, o.k);
    } else if (o.repr == "voxel") {
        const VoxelVolume vol = read_voxels(o.input);
        VoxelEmbeddings ve = voxel_embeddings(grid, vol, o.radius_voxels);
        m.rows = ve.size * ve.size * ve.size;
        m.cols = ve.channels;
        m.values = std::move(ve.values);
    } else {
        throw UsageError("unknown representation '" + o.repr +
                         "' (expected cloud, mesh-vertex, mesh-edge, mesh-face, or voxel)");
    }
    write_matrix_csv(o.out, m);
    std::fprintf(stderr, "embedded %zu elements x %zu channels -> %s\n", m.rows, m.cols,
                 o.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// probe-ellipsoid

struct ProbeEllipsoidOpts {
    std::string grid;
    std::string axis;
    std::string out;
    std::string spearman_out;  // default: <out stem>_spearman<ext>
    std::size_t n_theta = 32;
    std::size_t n_phi = 64;
};

int run_probe_ellipsoid(const ProbeEllipsoidOpts& o) {
    const FieldGrid grid = read_grid(o.grid);
    const Matrix response = curvature_response(grid, axis_from(o.axis), o.n_theta, o.n_phi);
    write_matrix_csv(o.out, response);

    fs::path spath = o.spearman_out;
    if (spath.empty()) {
        fs::path base(o.out);
        spath = base.parent_path() / (base.stem().string() + "_spearman" + base.extension().string());
    }
    const std::vector<double> rho = spearman_vs_radius(response);
    Matrix sm;
    sm.rows = rho.size();
    sm.cols = 2;
    sm.values.resize(sm.rows * sm.cols);
    for (std::size_t c = 0; c < rho.size(); ++c) {
        sm.at(c, 0) = static_cast<double>(c);
        sm.at(c, 1) = rho[c];
    }
    write_matrix_csv(spath, sm);
    std::fprintf(stderr, "response %zu x %zu -> %s (rank correlations -> %s)\n", response.rows,
                 response.cols, o.out.c_str(), spath.string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// export-slices

struct ExportSlicesOpts {
    std::string grid;
    std::string axis = "z";
    std::string outdir;
};

int run_export_slices(const ExportSlicesOpts& o) {
    const FieldGrid grid = read_grid(o.grid);
    const std::vector<Matrix> slices = weight_slices(grid, axis_from(o.axis));
    fs::create_directories(o.outdir);

    Matrix ranges;
    ranges.rows = slices.size();
    ranges.cols = 3;
    ranges.values.resize(ranges.rows * ranges.cols);
    for (std::size_t c = 0; c < slices.size(); ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_c%02zu.pgm", c);
        const auto [lo, hi] = write_matrix_pgm(fs::path(o.outdir) / name, slices[c]);
        ranges.at(c, 0) = static_cast<double>(c);
        ranges.at(c, 1) = lo;
        ranges.at(c, 2) = hi;
    }
    write_matrix_csv(fs::path(o.outdir) / "ranges.csv", ranges);
    std::fprintf(stderr, "wrote %zu slice images + ranges.csv -> %s\n", slices.size(),
                 o.outdir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// linear-probe

struct LinearProbeOpts {
    std::string grid;
    std::string data;
    std::string mode = "max_fc";
    std::string out;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    bool raw = false;
};

int run_linear_probe(const LinearProbeOpts& o) {
    if (!o.raw && o.grid.empty())
        throw UsageError("linear-probe needs --grid unless --raw is given");

    const Dataset ds = load_dataset_dir(o.data);
    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        if (ds.samples[i].label < 0)
            throw ParseError("dataset sample '" + ds.names[i] + "' has no label (labels.txt needed)");
        labels.push_back(ds.samples[i].label);
    }

    std::optional<FieldGrid> grid;
    if (!o.raw) grid = read_grid(o.grid);

    std::vector<Matrix> features;
    features.reserve(ds.samples.size());
    for (const TrainSample& s : ds.samples) {
        if (o.raw) {
            Matrix m;
            m.rows = s.cloud.size();
            m.cols = 3;
            m.values.resize(m.rows * m.cols);
            for (std::size_t r = 0; r < s.cloud.size(); ++r) {
                m.at(r, 0) = s.cloud[r].x;
                m.at(r, 1) = s.cloud[r].y;
                m.at(r, 2) = s.cloud[r].z;
            }
            features.push_back(std::move(m));
        } else {
            features.push_back(embed_cloud(*grid, s.cloud, o.k));
        }
    }

    const ProbeReport report = linear_probe(features, labels, probe_mode_from(o.mode), o.seed);

    json j;
    j["mode"] = o.mode;
    j["features"] = o.raw ? "raw_coordinates" : "field_embeddings";
    j["accuracy"] = report.accuracy;
    j["train_accuracy"] = report.train_accuracy;
    j["n_train"] = report.n_train;
    j["n_eval"] = report.n_eval;
    j["n_classes"] = report.n_classes;
    j["seed"] = o.seed;
    atomic_write(o.out, j.dump(2) + "\n");
    std::fprintf(stderr, "probe accuracy %.4f (train %.4f) on %zu eval shapes -> %s\n",
                 report.accuracy, report.train_accuracy, report.n_eval, o.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// gen-synthetic

struct GenSyntheticOpts {
    std::string outdir;
    std::size_t n_per_class = 20;
    std::size_t points = 512;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

int run_gen_synthetic(const GenSyntheticOpts& o) {
    const std::vector<TrainSample> samples =
        gen_synthetic_dataset(o.n_per_class, o.points, o.noise, o.seed);
    fs::create_directories(o.outdir);

    std::string labels;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "shape_%04zu.xyz", i);
        atomic_write(fs::path(o.outdir) / name, format_xyz(samples[i].cloud, &samples[i].normals));
        labels += name;
        labels += ' ';
        labels += std::to_string(samples[i].label);
        labels += '\n';
    }
    atomic_write(fs::path(o.outdir) / "labels.txt", labels);
    std::fprintf(stderr, "wrote %zu shapes (%zu per class) -> %s\n", samples.size(), o.n_per_class,
                 o.outdir.c_str());
    return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
    CLI::App app{"shape-field toolkit: pretrain, embed, and probe 3D shape embeddings"};
    app.require_subcommand(1);

    PretrainOpts po;
    PretrainFlags pf;
    CLI::App* pre = app.add_subcommand("pretrain", "train a field on a dataset directory");
    pre->add_option("--data", po.data, "dataset directory of .xyz files")->required();
    pre->add_option("--out", po.out, "output grid file")->required();
    pre->add_option("--report", po.report, "write a JSONL training report here");
    pre->add_option("--config", po.config, "JSON config file (explicit flags win)");
    pf.task = pre->add_option("--task", po.task, "recon, normal, or supervised")
                  ->check(CLI::IsMember({"recon", "normal", "supervised"}));
    pf.r = pre->add_option("--r", po.r, "grid resolution per axis (default 16)");
    pf.c = pre->add_option("--c", po.c, "embedding channels (default 32)");
    pf.init = pre->add_option("--init", po.init, "grid init scheme: uniform or normal")
                  ->check(CLI::IsMember({"uniform", "normal"}));
    pf.init_param = pre->add_option("--init-param", po.init_param, "init range / stddev");
    pf.init_grid = pre->add_option("--init-grid", po.init_grid, "start from this grid file");
    pf.precision = pre->add_option("--precision", po.precision, "output precision: f32 or f64")
                       ->check(CLI::IsMember({"f32", "f64"}));
    pf.epochs = pre->add_option("--epochs", po.epochs, "training epochs (default 150)");
    pf.lr = pre->add_option("--lr", po.lr, "base learning rate (default 1e-3)");
    pf.decay = pre->add_option("--decay", po.decay, "lr decay factor (default 0.2)");
    pf.decay_every = pre->add_option("--decay-every", po.decay_every, "epochs per decay step");
    pf.rows = pre->add_option("--rows", po.rows, "embedded points per shape (default 24)");
    pf.n_out = pre->add_option("--n-out", po.n_out, "reconstructed points (default 256)");
    pf.k = pre->add_option("--k", po.k, "neighborhood size; 0 = adaptive");
    pf.batch = pre->add_option("--batch", po.batch, "minibatch size (default 8)");
    pf.eval_frac = pre->add_option("--eval-frac", po.eval_frac, "held-out fraction (default 0.2)");
    pf.seed = pre->add_option("--seed", po.seed, "RNG seed (default 0)");
    pf.n_classes = pre->add_option("--n-classes", po.n_classes, "class count; 0 = infer");
    pf.freeze_grid = pre->add_flag("--freeze-grid", po.freeze_grid, "train only the head");
    pf.sign_invariant =
        pre->add_flag("--sign-invariant", po.sign_invariant, "score normals up to sign");
    pre->add_flag("--quiet", po.quiet, "suppress per-epoch progress");

    EmbedOpts eo;
    CLI::App* emb = app.add_subcommand("embed", "embed a shape file to per-element CSV rows");
    emb->add_option("--grid", eo.grid, "trained grid file")->required();
    emb->add_option("--input", eo.input, "shape file (.xyz, .off, or voxel text)")->required();
    emb->add_option("--repr", eo.repr, "cloud, mesh-vertex, mesh-edge, mesh-face, or voxel")
        ->required()
        ->check(CLI::IsMember({"cloud", "mesh-vertex", "mesh-edge", "mesh-face", "voxel"}));
    emb->add_option("--out", eo.out, "output CSV")->required();
    emb->add_option("--k", eo.k, "neighborhood size; 0 = adaptive");
    emb->add_option("--samples", eo.samples, "mesh surface samples; 0 = max(2048, 4*V)");
    emb->add_option("--radius-voxels", eo.radius_voxels, "voxel L1 radius in cells (default 4)");
    emb->add_option("--seed", eo.seed, "mesh sampling seed (default 0)");

    ProbeEllipsoidOpts qo;
    CLI::App* prb = app.add_subcommand("probe-ellipsoid",
                                       "sweep semi-ellipsoid curvature and record responses");
    prb->add_option("--grid", qo.grid, "trained grid file")->required();
    prb->add_option("--axis", qo.axis, "ellipsoid axis to sweep: x, y, or z")
        ->required()
        ->check(CLI::IsMember({"x", "y", "z"}));
    prb->add_option("--out", qo.out, "response CSV (20 radii x C channels)")->required();
    prb->add_option("--spearman-out", qo.spearman_out,
                    "rank-correlation CSV (default <out>_spearman.csv)");
    prb->add_option("--n-theta", qo.n_theta, "polar rings (default 32)");
    prb->add_option("--n-phi", qo.n_phi, "azimuthal steps (default 64)");

    ExportSlicesOpts xo;
    CLI::App* exp = app.add_subcommand("export-slices", "write per-channel max-projection images");
    exp->add_option("--grid", xo.grid, "trained grid file")->required();
    exp->add_option("--axis", xo.axis, "projection axis (default z)")
        ->check(CLI::IsMember({"x", "y", "z"}));
    exp->add_option("--outdir", xo.outdir, "output directory")->required();

    LinearProbeOpts lo;
    CLI::App* lin = app.add_subcommand("linear-probe", "classify shapes from frozen embeddings");
    lin->add_option("--grid", lo.grid, "trained grid file (optional with --raw)");
    lin->add_option("--data", lo.data, "labeled dataset directory (needs labels.txt)")->required();
    lin->add_option("--mode", lo.mode, "max_fc, pointwise, or flatten")
        ->check(CLI::IsMember({"max_fc", "pointwise", "flatten"}));
    lin->add_option("--out", lo.out, "output JSON report")->required();
    lin->add_option("--k", lo.k, "neighborhood size; 0 = adaptive");
    lin->add_option("--seed", lo.seed, "probe seed (default 0)");
    lin->add_flag("--raw", lo.raw, "probe raw point coordinates instead of embeddings");

    GenSyntheticOpts go;
    CLI::App* gen = app.add_subcommand("gen-synthetic", "generate a labeled shape dataset");
    gen->add_option("--outdir", go.outdir, "output directory")->required();
    gen->add_option("--n-per-class", go.n_per_class, "shapes per class (default 20)");
    gen->add_option("--points", go.points, "points per shape (default 512)");
    gen->add_option("--noise", go.noise, "Gaussian noise sigma (default 0)");
    gen->add_option("--seed", go.seed, "RNG seed (default 0)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (pre->parsed()) {
            PretrainFlags flags = pf;
            apply_config_file(po, flags);
            return run_pretrain(po);
        }
        if (emb->parsed()) return run_embed(eo);
        if (prb->parsed()) return run_probe_ellipsoid(qo);
        if (exp->parsed()) return run_export_slices(xo);
        if (lin->parsed()) return run_linear_probe(lo);
        if (gen->parsed()) return run_gen_synthetic(go);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;  // unreachable with require_subcommand(1)
}

int cli_dispatch(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.emplace_back("sfield");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sfield
