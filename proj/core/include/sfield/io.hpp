#pragma once

// File formats and parsers. Writers are atomic (temp file + rename) so a
// failed run never leaves a partial file behind; numeric text output uses
// shortest-round-trip formatting.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "sfield/adapters.hpp"
#include "sfield/grid.hpp"
#include "sfield/matrix.hpp"
#include "sfield/pretrain.hpp"

namespace sfield {

// Malformed external data. `line` is 1-based where known, 0 otherwise.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what, std::size_t line = 0);
    std::size_t line() const { return line_; }

private:
    std::size_t line_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Write via a sibling temporary file, then rename over the target.
void atomic_write(const std::filesystem::path& path, std::string_view content);

// --- Meshes (OFF) ----------------------------------------------------------
// '#' comments and blank lines are ignored; polygons with more than three
// sides are fan-triangulated; trailing face color tokens are skipped.
TriMesh parse_off(std::string_view text);
TriMesh read_off(const std::filesystem::path& path);

// --- Point lists (XYZ) ------------------------------------------------------
// 3 columns (x y z) or 6 (x y z nx ny nz); the first data line fixes the
// column count for the whole file.
struct XyzData {
    PointCloud points;
    std::vector<Point3> normals;  // empty for 3-column files
};
XyzData parse_xyz(std::string_view text);
XyzData read_xyz(const std::filesystem::path& path);
std::string format_xyz(const PointCloud& points, const std::vector<Point3>* normals = nullptr);

// --- Voxel occupancy (text) -------------------------------------------------
// Header "VOXN <N>", then N*N rows of N characters '0'/'1': planes in z
// order, rows in y order, x along each row.
VoxelVolume parse_voxels(std::string_view text);
VoxelVolume read_voxels(const std::filesystem::path& path);
std::string format_voxels(const VoxelVolume& vol);

// --- Field grid container ---------------------------------------------------
// Binary layout (16-byte header): magic "RASF", u32 version (1), u16
// resolution, u16 channels, u8 precision (4 = f32, 8 = f64), 3 zero bytes,
// then R^3*C little-endian values in [ix][iy][iz][c] order. Values
// round-trip bit-exactly at the stored precision.
enum class GridPrecision : std::uint8_t { f32 = 4, f64 = 8 };
std::string format_grid(const FieldGrid& grid, GridPrecision precision = GridPrecision::f64);
FieldGrid parse_grid(std::string_view bytes);
void write_grid(const std::filesystem::path& path, const FieldGrid& grid,
                GridPrecision precision = GridPrecision::f64);
FieldGrid read_grid(const std::filesystem::path& path);

// --- Matrices (CSV) ---------------------------------------------------------
std::string format_matrix_csv(const Matrix& m);
Matrix parse_matrix_csv(std::string_view text);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

// --- Images (plain PGM) -----------------------------------------------------
// 8-bit P2 image of a matrix, min-max normalized (a flat matrix maps to
// all zeros). Returns the (min, max) used.
std::pair<double, double> format_matrix_pgm(const Matrix& m, std::string& out);
std::pair<double, double> write_matrix_pgm(const std::filesystem::path& path, const Matrix& m);

// --- Training reports -------------------------------------------------------
// Line-delimited JSON: one run record (config echo, seed, split, initial
// eval loss, final metric), then one record per epoch with epoch, lr,
// train_loss, eval_loss. Wall-clock time is deliberately not serialized so
// identical runs produce identical bytes.
std::string format_train_report(const TrainReport& report);
void write_train_report(const std::filesystem::path& path, const TrainReport& report);

// --- Labeled dataset directories ---------------------------------------------
// A directory of .xyz files. If labels.txt exists, each of its lines names
// a file and an integer label; otherwise every *.xyz file is loaded in
// name order with label -1.
struct Dataset {
    std::vector<TrainSample> samples;
    std::vector<std::string> names;
};
Dataset load_dataset_dir(const std::filesystem::path& dir);

}  // namespace sfield
