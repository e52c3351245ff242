#pragma once

// Point cloud container, file I/O (xyz text / pcsq binary), unit-sphere
// normalization, subsampling and synthetic dataset generation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pcsq {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Vec3 = Eigen::Vector3d;

struct PointCloud {
    std::vector<Vec3> points;

    PointCloud() = default;
    explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    const Vec3& operator[](std::size_t i) const { return points[i]; }
    Vec3& operator[](std::size_t i) { return points[i]; }

    bool all_finite() const {
        for (const auto& p : points)
            if (!p.allFinite()) return false;
        return true;
    }

    // Rows are points, columns x/y/z.
    Eigen::MatrixXd matrix() const {
        Eigen::MatrixXd m(points.size(), 3);
        for (std::size_t i = 0; i < points.size(); ++i) m.row(i) = points[i].transpose();
        return m;
    }
    static PointCloud from_matrix(const Eigen::MatrixXd& m) {
        PointCloud pc;
        pc.points.resize(static_cast<std::size_t>(m.rows()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) pc.points[static_cast<std::size_t>(i)] = m.row(i).transpose();
        return pc;
    }
};

enum class CloudFormat { XyzText, PcsqBinary };

inline CloudFormat format_from_path(const std::string& path) {
    auto dot = path.rfind('.');
    std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    return ext == "pcsq" ? CloudFormat::PcsqBinary : CloudFormat::XyzText;
}

namespace detail {
constexpr char kPcsqMagic[5] = {'P', 'C', 'S', 'Q', '1'};

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("pcsq: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32_le(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32_le(os, bits);
}
inline float get_f32_le(std::istream& is, std::size_t offset_hint) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("pcsq: truncated payload at byte " + std::to_string(offset_hint));
    std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}
}  // namespace detail

inline PointCloud load_pointcloud(std::istream& is, CloudFormat fmt) {
    PointCloud pc;
    if (fmt == CloudFormat::XyzText) {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos || line[first] == '#') continue;
            std::istringstream ls(line);
            double x, y, z;
            if (!(ls >> x >> y >> z))
                throw ParseError("xyz: malformed line " + std::to_string(lineno));
            std::string extra;
            // A trailing label column (group export) is tolerated.
            pc.points.emplace_back(x, y, z);
        }
    } else {
        char magic[5];
        is.read(magic, 5);
        if (!is || std::memcmp(magic, detail::kPcsqMagic, 5) != 0)
            throw ParseError("pcsq: bad magic at byte 0");
        std::uint32_t n = detail::get_u32_le(is);
        pc.points.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            std::size_t off = 9 + static_cast<std::size_t>(i) * 12;
            float x = detail::get_f32_le(is, off);
            float y = detail::get_f32_le(is, off + 4);
            float z = detail::get_f32_le(is, off + 8);
            pc.points.emplace_back(x, y, z);
        }
    }
    return pc;
}

inline PointCloud load_pointcloud(const std::string& path, CloudFormat fmt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return load_pointcloud(f, fmt);
}
inline PointCloud load_pointcloud(const std::string& path) {
    return load_pointcloud(path, format_from_path(path));
}

inline void save_pointcloud(const PointCloud& pc, std::ostream& os, CloudFormat fmt) {
    if (fmt == CloudFormat::XyzText) {
        os.precision(6);
        for (const auto& p : pc.points) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    } else {
        os.write(detail::kPcsqMagic, 5);
        detail::put_u32_le(os, static_cast<std::uint32_t>(pc.size()));
        for (const auto& p : pc.points) {
            detail::put_f32_le(os, static_cast<float>(p.x()));
            detail::put_f32_le(os, static_cast<float>(p.y()));
            detail::put_f32_le(os, static_cast<float>(p.z()));
        }
    }
    if (!os) throw IoError("write failure");
}

inline void save_pointcloud(const PointCloud& pc, const std::string& path, CloudFormat fmt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    save_pointcloud(pc, f, fmt);
    f.flush();
    if (!f) throw IoError("write failure: " + path);
}
inline void save_pointcloud(const PointCloud& pc, const std::string& path) {
    save_pointcloud(pc, path, format_from_path(path));
}

// Translate centroid to the origin, then scale so the farthest point has
// norm 1. A cloud of identical points has no defined scale.
inline PointCloud normalize_unit_sphere(const PointCloud& pc) {
    if (pc.empty()) throw DomainError("normalize: empty cloud");
    Vec3 c = Vec3::Zero();
    for (const auto& p : pc.points) c += p;
    c /= static_cast<double>(pc.size());
    double maxnorm = 0.0;
    for (const auto& p : pc.points) maxnorm = std::max(maxnorm, (p - c).norm());
    if (maxnorm < 1e-12) throw DomainError("normalize: degenerate cloud (all points identical)");
    PointCloud out;
    out.points.reserve(pc.size());
    for (const auto& p : pc.points) out.points.push_back((p - c) / maxnorm);
    return out;
}

// Uniform draw of n points: without replacement when n <= N, with
// replacement otherwise.
inline PointCloud subsample(const PointCloud& pc, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw DomainError("subsample: n must be >= 1");
    if (pc.empty()) throw DomainError("subsample: empty cloud");
    std::mt19937_64 rng(seed);
    PointCloud out;
    out.points.reserve(n);
    if (n <= pc.size()) {
        std::vector<std::size_t> idx(pc.size());
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> d(i, idx.size() - 1);
            std::swap(idx[i], idx[d(rng)]);
            out.points.push_back(pc.points[idx[i]]);
        }
    } else {
        std::uniform_int_distribution<std::size_t> d(0, pc.size() - 1);
        for (std::size_t i = 0; i < n; ++i) out.points.push_back(pc.points[d(rng)]);
    }
    return out;
}

enum class ShapeFamily { Ellipsoid, Box, TwoLobe };

inline ShapeFamily shape_family_from_string(const std::string& s) {
    if (s == "ellipsoid") return ShapeFamily::Ellipsoid;
    if (s == "box") return ShapeFamily::Box;
    if (s == "two-lobe" || s == "two_lobe") return ShapeFamily::TwoLobe;
    throw DomainError("unknown shape family: " + s);
}

struct ShapeDataset {
    std::vector<PointCloud> samples;
    std::string split;
    std::uint64_t seed = 0;
};

namespace detail {

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(g(rng), g(rng), g(rng));
    } while (v.norm() < 1e-9);
    return v / v.norm();
}

inline PointCloud sample_ellipsoid(std::mt19937_64& rng, std::size_t n, const Vec3& axes) {
    PointCloud pc;
    pc.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 u = random_unit(rng);
        pc.points.push_back(u.cwiseProduct(axes));
    }
    return pc;
}

inline PointCloud sample_box(std::mt19937_64& rng, std::size_t n, const Vec3& half) {
    // Area-weighted face sampling of an axis-aligned box surface.
    std::array<double, 3> area = {half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
    std::discrete_distribution<int> face({area[0], area[0], area[1], area[1], area[2], area[2]});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointCloud pc;
    pc.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        int f = face(rng);
        int axis = f / 2;
        double sign = (f % 2 == 0) ? 1.0 : -1.0;
        Vec3 p(u(rng) * half.x(), u(rng) * half.y(), u(rng) * half.z());
        p[axis] = sign * half[axis];
        pc.points.push_back(p);
    }
    return pc;
}

inline PointCloud sample_two_lobe(std::mt19937_64& rng, std::size_t n, double sep, double r1, double r2) {
    PointCloud pc;
    pc.points.reserve(n);
    std::bernoulli_distribution side(0.5);
    for (std::size_t i = 0; i < n; ++i) {
        bool first = side(rng);
        double r = first ? r1 : r2;
        Vec3 c(first ? -sep : sep, 0.0, 0.0);
        pc.points.push_back(c + r * random_unit(rng));
    }
    return pc;
}

}  // namespace detail

// Desk-scale stand-in for a real category: random parameterizations of one
// family, surface-sampled and normalized to the unit sphere.
inline ShapeDataset synth_dataset(ShapeFamily family, std::size_t count, std::size_t points_per_shape,
                                  std::uint64_t seed, const std::string& split = "train") {
    if (count < 1) throw DomainError("synth_dataset: count must be >= 1");
    std::mt19937_64 rng(seed);
    ShapeDataset ds;
    ds.split = split;
    ds.seed = seed;
    ds.samples.reserve(count);
    std::uniform_real_distribution<double> scale(0.4, 1.0);
    for (std::size_t i = 0; i < count; ++i) {
        PointCloud pc;
        switch (family) {
            case ShapeFamily::Ellipsoid:
                pc = detail::sample_ellipsoid(rng, points_per_shape, Vec3(scale(rng), scale(rng), scale(rng)));
                break;
            case ShapeFamily::Box:
                pc = detail::sample_box(rng, points_per_shape, Vec3(scale(rng), scale(rng), scale(rng)));
                break;
            case ShapeFamily::TwoLobe:
                pc = detail::sample_two_lobe(rng, points_per_shape, 0.3 + 0.4 * scale(rng), scale(rng),
                                             0.4 + 0.4 * scale(rng));
                break;
        }
        ds.samples.push_back(normalize_unit_sphere(pc));
    }
    return ds;
}

}  // namespace pcsq
