#include "sfield/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace sfield {

namespace {

std::string with_line(const std::string& what, std::size_t line) {
    if (line == 0) return what;
    return what + " (line " + std::to_string(line) + ")";
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line)
    : std::runtime_error(with_line(what, line)), line_(line) {}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw ParseError("read failed for " + path.string());
    return content;
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot create " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw std::runtime_error("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Number and line helpers

namespace {

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view tok, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw ParseError("bad number '" + std::string(tok) + "'", line);
    return v;
}

std::uint64_t parse_uint(std::string_view tok, std::size_t line) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw ParseError("bad count '" + std::string(tok) + "'", line);
    return v;
}

struct Line {
    std::size_t number;  // 1-based
    std::string_view text;
};

// Split into lines, strip '\r' and '#' comments, drop blank lines.
std::vector<Line> content_lines(std::string_view text, bool strip_comments = true) {
    std::vector<Line> out;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, (nl == std::string_view::npos ? text.size() : nl) - pos);
        ++lineno;
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;

        if (strip_comments) {
            const std::size_t hash = line.find('#');
            if (hash != std::string_view::npos) line = line.substr(0, hash);
        }
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
            line.remove_suffix(1);
        while (!line.empty() && (line.front() == ' ' || line.front() == '\t'))
            line.remove_prefix(1);
        if (!line.empty()) out.push_back({lineno, line});
    }
    return out;
}

std::vector<std::string_view> tokens_of(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// OFF meshes

TriMesh parse_off(std::string_view text) {
    const std::vector<Line> lines = content_lines(text);
    if (lines.empty()) throw ParseError("empty OFF file");

    std::size_t cursor = 0;
    std::vector<std::string_view> head = tokens_of(lines[0].text);
    if (head.empty() || head[0] != "OFF") throw ParseError("missing OFF header", lines[0].number);

    std::uint64_t nv = 0, nf = 0;
    if (head.size() == 4) {  // counts on the header line
        nv = parse_uint(head[1], lines[0].number);
        nf = parse_uint(head[2], lines[0].number);
        cursor = 1;
    } else if (head.size() == 1) {
        if (lines.size() < 2) throw ParseError("missing element counts", lines[0].number);
        const std::vector<std::string_view> counts = tokens_of(lines[1].text);
        if (counts.size() != 3) throw ParseError("expected 3 element counts", lines[1].number);
        nv = parse_uint(counts[0], lines[1].number);
        nf = parse_uint(counts[1], lines[1].number);
        cursor = 2;
    } else {
        throw ParseError("malformed OFF header", lines[0].number);
    }
    if (nv == 0) throw ParseError("OFF mesh has no vertices");
    if (nv > 0xFFFFFFFFull) throw ParseError("vertex count too large");

    TriMesh mesh;
    mesh.vertices.reserve(nv);
    for (std::uint64_t i = 0; i < nv; ++i, ++cursor) {
        if (cursor >= lines.size()) throw ParseError("unexpected end of file in vertex list");
        const std::vector<std::string_view> t = tokens_of(lines[cursor].text);
        if (t.size() != 3) throw ParseError("expected 3 vertex coordinates", lines[cursor].number);
        mesh.vertices.push_back({parse_double(t[0], lines[cursor].number),
                                 parse_double(t[1], lines[cursor].number),
                                 parse_double(t[2], lines[cursor].number)});
    }

    for (std::uint64_t f = 0; f < nf; ++f, ++cursor) {
        if (cursor >= lines.size()) throw ParseError("unexpected end of file in face list");
        const std::size_t lineno = lines[cursor].number;
        const std::vector<std::string_view> t = tokens_of(lines[cursor].text);
        if (t.empty()) throw ParseError("empty face record", lineno);
        const std::uint64_t n = parse_uint(t[0], lineno);
        if (n < 3) throw ParseError("face with fewer than 3 vertices", lineno);
        if (t.size() < n + 1) throw ParseError("face lists too few indices", lineno);
        // Tokens past the index list are color attributes; ignore them.
        std::vector<std::uint32_t> idx(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint64_t v = parse_uint(t[i + 1], lineno);
            if (v >= nv) throw ParseError("face index out of range", lineno);
            idx[i] = static_cast<std::uint32_t>(v);
        }
        for (std::uint64_t i = 1; i + 1 < n; ++i) {  // fan triangulation
            const std::array<std::uint32_t, 3> tri{idx[0], idx[i], idx[i + 1]};
            if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
                throw ParseError("degenerate face (repeated vertex)", lineno);
            mesh.faces.push_back(tri);
        }
    }
    if (cursor != lines.size()) throw ParseError("trailing content", lines[cursor].number);
    return mesh;
}

TriMesh read_off(const std::filesystem::path& path) { return parse_off(read_file(path)); }

// ---------------------------------------------------------------------------
// XYZ point lists

XyzData parse_xyz(std::string_view text) {
    const std::vector<Line> lines = content_lines(text);
    if (lines.empty()) throw ParseError("empty point file");

    XyzData data;
    std::size_t width = 0;
    for (const Line& line : lines) {
        const std::vector<std::string_view> t = tokens_of(line.text);
        if (width == 0) {
            if (t.size() != 3 && t.size() != 6)
                throw ParseError("expected 3 or 6 columns", line.number);
            width = t.size();
        } else if (t.size() != width) {
            throw ParseError("inconsistent column count", line.number);
        }
        const Point3 p{parse_double(t[0], line.number), parse_double(t[1], line.number),
                       parse_double(t[2], line.number)};
        if (!is_finite(p)) throw ParseError("non-finite coordinate", line.number);
        data.points.push_back(p);
        if (width == 6) {
            const Point3 n{parse_double(t[3], line.number), parse_double(t[4], line.number),
                           parse_double(t[5], line.number)};
            if (!is_finite(n)) throw ParseError("non-finite normal", line.number);
            data.normals.push_back(n);
        }
    }
    return data;
}

XyzData read_xyz(const std::filesystem::path& path) { return parse_xyz(read_file(path)); }

std::string format_xyz(const PointCloud& points, const std::vector<Point3>* normals) {
    if (normals && !normals->empty() && normals->size() != points.size())
        throw std::invalid_argument("format_xyz: normals do not match points");
    const bool with_normals = normals && !normals->empty();

    std::string out;
    out.reserve(points.size() * 48);
    for (std::size_t i = 0; i < points.size(); ++i) {
        out += fmt_double(points[i].x);
        out += ' ';
        out += fmt_double(points[i].y);
        out += ' ';
        out += fmt_double(points[i].z);
        if (with_normals) {
            out += ' ';
            out += fmt_double((*normals)[i].x);
            out += ' ';
            out += fmt_double((*normals)[i].y);
            out += ' ';
            out += fmt_double((*normals)[i].z);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Voxel occupancy text

VoxelVolume parse_voxels(std::string_view text) {
    const std::vector<Line> lines = content_lines(text, /*strip_comments=*/false);
    if (lines.empty()) throw ParseError("empty voxel file");

    const std::vector<std::string_view> head = tokens_of(lines[0].text);
    if (head.size() != 2 || head[0] != "VOXN")
        throw ParseError("missing VOXN header", lines[0].number);
    const std::uint64_t n = parse_uint(head[1], lines[0].number);
    if (n < 1) throw ParseError("voxel size must be >= 1", lines[0].number);
    if (n > 512) throw ParseError("voxel size too large", lines[0].number);

    const std::size_t size = static_cast<std::size_t>(n);
    if (lines.size() != 1 + size * size)
        throw ParseError("expected " + std::to_string(size * size) + " occupancy rows, found " +
                         std::to_string(lines.size() - 1));

    VoxelVolume vol(size);
    for (std::size_t row = 0; row < size * size; ++row) {
        const Line& line = lines[1 + row];
        if (line.text.size() != size) throw ParseError("row length mismatch", line.number);
        const std::size_t z = row / size;
        const std::size_t y = row % size;
        for (std::size_t x = 0; x < size; ++x) {
            const char ch = line.text[x];
            if (ch != '0' && ch != '1') throw ParseError("occupancy must be 0 or 1", line.number);
            vol.set(x, y, z, ch == '1');
        }
    }
    return vol;
}

VoxelVolume read_voxels(const std::filesystem::path& path) { return parse_voxels(read_file(path)); }

std::string format_voxels(const VoxelVolume& vol) {
    if (vol.size == 0 || vol.occupancy.size() != vol.size * vol.size * vol.size)
        throw std::invalid_argument("format_voxels: malformed volume");
    std::string out = "VOXN " + std::to_string(vol.size) + "\n";
    out.reserve(out.size() + vol.size * vol.size * (vol.size + 1));
    for (std::size_t z = 0; z < vol.size; ++z)
        for (std::size_t y = 0; y < vol.size; ++y) {
            for (std::size_t x = 0; x < vol.size; ++x)
                out += vol.occupied(x, y, z) ? '1' : '0';
            out += '\n';
        }
    return out;
}

// ---------------------------------------------------------------------------
// Field grid container

namespace {

// 16-byte header: magic "RASF", u32 version, u16 resolution, u16 channels,
// u8 precision (4 = f32, 8 = f64), 3 reserved zero bytes. All little-endian.
constexpr char kGridMagic[4] = {'R', 'A', 'S', 'F'};
constexpr std::uint32_t kGridVersion = 1;
constexpr std::size_t kGridHeaderSize = 16;

void put_u16(std::string& out, std::uint16_t v) {
    out += static_cast<char>(v & 0xFF);
    out += static_cast<char>((v >> 8) & 0xFF);
}

void put_u32(std::string& out, std::uint32_t v) {
    out += static_cast<char>(v & 0xFF);
    out += static_cast<char>((v >> 8) & 0xFF);
    out += static_cast<char>((v >> 16) & 0xFF);
    out += static_cast<char>((v >> 24) & 0xFF);
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out += static_cast<char>((v >> s) & 0xFF);
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

}  // namespace

std::string format_grid(const FieldGrid& grid, GridPrecision precision) {
    if (grid.resolution < 2 || grid.channels < 1)
        throw std::invalid_argument("format_grid: uninitialized grid");
    if (grid.resolution > 0xFFFF || grid.channels > 0xFFFF)
        throw std::invalid_argument("format_grid: dimensions exceed the format");

    const std::size_t width = static_cast<std::size_t>(precision);
    std::string out;
    out.reserve(kGridHeaderSize + grid.values.size() * width);
    out.append(kGridMagic, 4);
    put_u32(out, kGridVersion);
    put_u16(out, static_cast<std::uint16_t>(grid.resolution));
    put_u16(out, static_cast<std::uint16_t>(grid.channels));
    out += static_cast<char>(precision);
    out += '\0';
    out += '\0';
    out += '\0';

    if (precision == GridPrecision::f32) {
        for (double v : grid.values)
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
        for (double v : grid.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

FieldGrid parse_grid(std::string_view bytes) {
    if (bytes.size() < kGridHeaderSize) throw ParseError("grid file too short");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (std::memcmp(p, kGridMagic, 4) != 0) throw ParseError("bad grid magic");
    const std::uint32_t version = get_u32(p + 4);
    if (version != kGridVersion)
        throw ParseError("unsupported grid version " + std::to_string(version));
    const std::uint16_t r = get_u16(p + 8);
    const std::uint16_t c = get_u16(p + 10);
    const std::uint8_t precision = p[12];
    if (p[13] != 0 || p[14] != 0 || p[15] != 0) throw ParseError("reserved bytes must be zero");
    if (r < 2 || r > 4096) throw ParseError("grid resolution out of range");
    if (c < 1) throw ParseError("grid channel count out of range");
    if (precision != 4 && precision != 8) throw ParseError("unknown grid precision");

    const std::uint64_t count =
        static_cast<std::uint64_t>(r) * r * r * static_cast<std::uint64_t>(c);
    const std::uint64_t expect = kGridHeaderSize + count * precision;
    if (bytes.size() != expect)
        throw ParseError("grid payload size mismatch: expected " + std::to_string(expect) +
                         " bytes, got " + std::to_string(bytes.size()));

    FieldGrid grid(r, c);
    const unsigned char* data = p + kGridHeaderSize;
    if (precision == 4) {
        for (std::size_t i = 0; i < count; ++i)
            grid.values[i] = std::bit_cast<float>(get_u32(data + 4 * i));
    } else {
        for (std::size_t i = 0; i < count; ++i)
            grid.values[i] = std::bit_cast<double>(get_u64(data + 8 * i));
    }
    return grid;
}

void write_grid(const std::filesystem::path& path, const FieldGrid& grid,
                GridPrecision precision) {
    atomic_write(path, format_grid(grid, precision));
}

FieldGrid read_grid(const std::filesystem::path& path) { return parse_grid(read_file(path)); }

// ---------------------------------------------------------------------------
// Matrices

std::string format_matrix_csv(const Matrix& m) {
    std::string out;
    out.reserve(m.values.size() * 24);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (c) out += ',';
            out += fmt_double(m.at(r, c));
        }
        out += '\n';
    }
    return out;
}

Matrix parse_matrix_csv(std::string_view text) {
    std::vector<std::vector<double>> rows;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string_view line =
            text.substr(pos, (nl == std::string_view::npos ? text.size() : nl) - pos);
        pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;

        std::vector<double> row;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            const std::string_view cell =
                line.substr(start, (comma == std::string_view::npos ? line.size() : comma) - start);
            row.push_back(parse_double(cell, lineno));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && row.size() != rows[0].size())
            throw ParseError("inconsistent column count", lineno);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParseError("empty matrix");

    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    return m;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
    atomic_write(path, format_matrix_csv(m));
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
    return parse_matrix_csv(read_file(path));
}

// ---------------------------------------------------------------------------
// PGM images

std::pair<double, double> format_matrix_pgm(const Matrix& m, std::string& out) {
    if (m.rows == 0 || m.cols == 0) throw std::invalid_argument("format_matrix_pgm: empty matrix");

    double lo = m.values[0], hi = m.values[0];
    for (double v : m.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double range = hi - lo;

    out.clear();
    out += "P2\n";
    out += std::to_string(m.cols) + " " + std::to_string(m.rows) + "\n255\n";
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            long pixel = 0;
            if (range > 0.0)
                pixel = std::lround(255.0 * (m.at(r, c) - lo) / range);
            pixel = std::clamp(pixel, 0L, 255L);
            if (c) out += ' ';
            out += std::to_string(pixel);
        }
        out += '\n';
    }
    return {lo, hi};
}

std::pair<double, double> write_matrix_pgm(const std::filesystem::path& path, const Matrix& m) {
    std::string content;
    const auto range = format_matrix_pgm(m, content);
    atomic_write(path, content);
    return range;
}

// ---------------------------------------------------------------------------
// Training reports

std::string format_train_report(const TrainReport& report) {
    nlohmann::json run{{"record", "run"},
                       {"seed", report.seed},
                       {"config", report.config_echo},
                       {"initial_eval_loss", report.initial_eval_loss},
                       {"final_metric", report.final_metric},
                       {"epochs", report.train_loss.size()},
                       {"train_indices", report.train_indices},
                       {"eval_indices", report.eval_indices}};
    std::string out = run.dump();
    out += '\n';
    for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
        nlohmann::json rec{{"epoch", e},
                           {"lr", e < report.lr.size() ? report.lr[e] : 0.0},
                           {"train_loss", report.train_loss[e]},
                           {"eval_loss", e < report.eval_loss.size() ? report.eval_loss[e] : 0.0}};
        out += rec.dump();
        out += '\n';
    }
    return out;
}

void write_train_report(const std::filesystem::path& path, const TrainReport& report) {
    atomic_write(path, format_train_report(report));
}

// ---------------------------------------------------------------------------
// Dataset directories

Dataset load_dataset_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw ParseError("not a directory: " + dir.string());

    Dataset ds;
    const std::filesystem::path labels_path = dir / "labels.txt";
    if (std::filesystem::exists(labels_path)) {
        const std::string labels_text = read_file(labels_path);  // keeps the views below alive
        const std::vector<Line> lines = content_lines(labels_text);
        for (const Line& line : lines) {
            const std::vector<std::string_view> t = tokens_of(line.text);
            if (t.size() != 2) throw ParseError("expected '<file> <label>'", line.number);
            const std::string name(t[0]);
            const std::uint64_t label = parse_uint(t[1], line.number);
            if (label > 0x7FFFFFFFull) throw ParseError("label out of range", line.number);

            const XyzData xyz = read_xyz(dir / name);
            TrainSample sample;
            sample.cloud = xyz.points;
            sample.normals = xyz.normals;
            sample.label = static_cast<int>(label);
            ds.samples.push_back(std::move(sample));
            ds.names.push_back(name);
        }
    } else {
        std::vector<std::string> names;
        for (const auto& entry : std::filesystem::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".xyz")
                names.push_back(entry.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const std::string& name : names) {
            const XyzData xyz = read_xyz(dir / name);
            TrainSample sample;
            sample.cloud = xyz.points;
            sample.normals = xyz.normals;
            ds.samples.push_back(std::move(sample));
            ds.names.push_back(name);
        }
    }
    if (ds.samples.empty()) throw ParseError("no samples in " + dir.string());
    return ds;
}

}  // namespace sfield
