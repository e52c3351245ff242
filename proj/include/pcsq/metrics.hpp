#pragma once

// Generative-evaluation suite: MMD, COV, 1-NNA and TMD over sets of point
// clouds, with the pre-metric unit-sphere normalization applied inside the
// harness so callers cannot skip it.

#include <fstream>
#include <map>
#include <vector>

#include "pcsq/geometry.hpp"

namespace pcsq {

enum class MetricDistance { CD, EMD };

inline double metric_distance(const PointCloud& a, const PointCloud& b, MetricDistance d) {
    if (d == MetricDistance::CD) return chamfer_distance(a, b);
    EmdMode mode = (a.size() <= 256) ? EmdMode::Exact : EmdMode::Approximate;
    return emd(a, b, mode);
}

namespace detail {
inline std::vector<PointCloud> normalized(const std::vector<PointCloud>& set, bool raw) {
    if (raw) return set;
    std::vector<PointCloud> out;
    out.reserve(set.size());
    for (const auto& pc : set) out.push_back(normalize_unit_sphere(pc));
    return out;
}

inline Eigen::MatrixXd cross_distances(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref,
                                       MetricDistance d) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(gen.size()), static_cast<Eigen::Index>(ref.size()));
    for (std::size_t i = 0; i < gen.size(); ++i)
        for (std::size_t j = 0; j < ref.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = metric_distance(gen[i], ref[j], d);
    return m;
}
}  // namespace detail

// Mean over reference samples of the distance to the nearest generated one.
inline double mmd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref, MetricDistance d,
                  bool raw = false) {
    if (gen.empty() || ref.empty()) throw DomainError("mmd: empty set");
    auto g = detail::normalized(gen, raw);
    auto r = detail::normalized(ref, raw);
    Eigen::MatrixXd dist = detail::cross_distances(g, r, d);
    double total = 0.0;
    for (Eigen::Index j = 0; j < dist.cols(); ++j) total += dist.col(j).minCoeff();
    return total / static_cast<double>(dist.cols());
}

// Fraction of reference samples that are the nearest reference neighbor of
// at least one generated sample. Ties favor the lower reference index.
inline double cov(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref, MetricDistance d,
                  bool raw = false) {
    if (gen.empty() || ref.empty()) throw DomainError("cov: empty set");
    auto g = detail::normalized(gen, raw);
    auto r = detail::normalized(ref, raw);
    Eigen::MatrixXd dist = detail::cross_distances(g, r, d);
    std::vector<char> matched(ref.size(), 0);
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < dist.cols(); ++j)
            if (dist(i, j) < dist(i, best)) best = j;
        matched[static_cast<std::size_t>(best)] = 1;
    }
    long count = 0;
    for (char c : matched) count += c;
    return static_cast<double>(count) / static_cast<double>(ref.size());
}

// Leave-one-out 1-NN two-sample accuracy over the labeled union. Distance
// ties resolve to the lower global index (gen block first).
inline double one_nna(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref, MetricDistance d,
                      bool raw = false) {
    if (gen.size() < 2 || ref.size() < 2) throw DomainError("one_nna: both sets need at least 2 samples");
    auto g = detail::normalized(gen, raw);
    auto r = detail::normalized(ref, raw);
    std::vector<const PointCloud*> all;
    std::vector<int> label;
    for (const auto& pc : g) {
        all.push_back(&pc);
        label.push_back(0);
    }
    for (const auto& pc : r) {
        all.push_back(&pc);
        label.push_back(1);
    }
    const std::size_t n = all.size();
    Eigen::MatrixXd dist(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.0;
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = metric_distance(*all[i], *all[j], d);
            dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            dist(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
        }
    }
    long correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            if (dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <
                dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(best)))
                best = j;
        }
        if (label[best] == label[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

// Total mutual difference: sum over shapes of the average Chamfer distance
// to the other k-1 shapes.
inline double tmd(const std::vector<PointCloud>& shapes, bool raw = false) {
    if (shapes.size() < 2) throw DomainError("tmd: need at least 2 shapes");
    auto s = detail::normalized(shapes, raw);
    const std::size_t k = s.size();
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            if (j != i) sum += chamfer_distance(s[i], s[j]);
        total += sum / static_cast<double>(k - 1);
    }
    return total;
}

struct MetricReport {
    double mmd_cd = 0.0, mmd_emd = 0.0;
    double cov_cd = 0.0, cov_emd = 0.0;
    double nna_cd = 0.0, nna_emd = 0.0;
    double tmd_value = 0.0;
    bool has_tmd = false;
    std::size_t gen_count = 0, ref_count = 0;
    std::string emd_mode = "exact";

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw IoError("cannot write report " + path);
        f.precision(10);
        f << "mmd_cd " << mmd_cd << "\nmmd_emd " << mmd_emd << "\ncov_cd " << cov_cd << "\ncov_emd " << cov_emd
          << "\nnna_cd " << nna_cd << "\nnna_emd " << nna_emd << '\n';
        if (has_tmd) f << "tmd " << tmd_value << '\n';
        f << "gen_count " << gen_count << "\nref_count " << ref_count << "\nemd_mode " << emd_mode << '\n';
    }
};

inline MetricReport evaluate_sets(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref,
                                  bool raw = false) {
    MetricReport rep;
    rep.gen_count = gen.size();
    rep.ref_count = ref.size();
    rep.mmd_cd = mmd(gen, ref, MetricDistance::CD, raw);
    rep.mmd_emd = mmd(gen, ref, MetricDistance::EMD, raw);
    rep.cov_cd = cov(gen, ref, MetricDistance::CD, raw);
    rep.cov_emd = cov(gen, ref, MetricDistance::EMD, raw);
    rep.nna_cd = one_nna(gen, ref, MetricDistance::CD, raw);
    rep.nna_emd = one_nna(gen, ref, MetricDistance::EMD, raw);
    bool big = false;
    for (const auto& pc : gen) big = big || pc.size() > 256;
    for (const auto& pc : ref) big = big || pc.size() > 256;
    rep.emd_mode = big ? "approximate" : "exact";
    return rep;
}

}  // namespace pcsq
