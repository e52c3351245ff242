#pragma once

// Depth images for conditional generation: plain-text PGM I/O and a simple
// orthographic renderer used to pair training shapes with conditions.

#include <fstream>
#include <sstream>

#include "pcsq/pcio.hpp"

namespace pcsq {

struct DepthImage {
    Eigen::MatrixXd values;  // in [0, 1]; 0 = background / far

    Eigen::Index height() const { return values.rows(); }
    Eigen::Index width() const { return values.cols(); }
};

// Plain (P2) PGM, values rescaled to [0, 1].
inline DepthImage load_depth_pgm(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P2") throw ParseError("pgm: expected P2 magic");
    long w, h, maxval;
    f >> w >> h >> maxval;
    if (!f || w <= 0 || h <= 0 || maxval <= 0) throw ParseError("pgm: bad header");
    DepthImage img;
    img.values.resize(h, w);
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            long v;
            if (!(f >> v)) throw ParseError("pgm: truncated pixel data");
            img.values(r, c) = static_cast<double>(v) / static_cast<double>(maxval);
        }
    return img;
}

inline void save_depth_pgm(const DepthImage& img, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "P2\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (Eigen::Index r = 0; r < img.height(); ++r) {
        for (Eigen::Index c = 0; c < img.width(); ++c)
            f << static_cast<int>(std::lround(std::clamp(img.values(r, c), 0.0, 1.0) * 255.0))
              << (c + 1 == img.width() ? '\n' : ' ');
    }
}

// Orthographic z-buffer along +z over [-1,1]^2; nearer surfaces map to
// larger values, background stays 0.
inline DepthImage render_depth(const PointCloud& pc, long resolution) {
    if (resolution <= 0) throw DomainError("render_depth: resolution must be positive");
    DepthImage img;
    img.values = Eigen::MatrixXd::Zero(resolution, resolution);
    for (const auto& p : pc.points) {
        long c = static_cast<long>(std::floor((p.x() + 1.0) / 2.0 * static_cast<double>(resolution)));
        long r = static_cast<long>(std::floor((1.0 - (p.y() + 1.0) / 2.0) * static_cast<double>(resolution)));
        if (c < 0 || c >= resolution || r < 0 || r >= resolution) continue;
        double d = std::clamp((p.z() + 1.0) / 2.0, 0.0, 1.0);
        img.values(r, c) = std::max(img.values(r, c), d);
    }
    return img;
}

}  // namespace pcsq
