#pragma once

// Canonical sphere construction, spiral serialization order, and the two
// reconstruction distances (Chamfer, Earth Mover's).

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "pcsq/pcio.hpp"

namespace pcsq {

struct CanonicalSphere {
    std::vector<Vec3> points;  // spiral order from the north pole
    std::size_t size() const { return points.size(); }
    const Vec3& operator[](std::size_t i) const { return points[i]; }

    PointCloud as_cloud() const { return PointCloud(points); }
};

// Fibonacci lattice: z_i = 1 - 2(i+0.5)/M, azimuth steps by the golden
// angle pi(3 - sqrt 5). Index order is the spiral serialization order.
inline CanonicalSphere fibonacci_sphere(std::size_t m) {
    if (m < 1) throw DomainError("fibonacci_sphere: M must be >= 1");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    CanonicalSphere s;
    s.points.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(m);
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = static_cast<double>(i) * golden_angle;
        s.points.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    return s;
}

// Index of the nearest canonical point; ties go to the lower index.
inline std::size_t spiral_rank(const CanonicalSphere& sphere, const Vec3& p) {
    if (std::abs(p.norm() - 1.0) > 1e-3) throw DomainError("spiral_rank: input is not a unit vector");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sphere.size(); ++i) {
        double d = (sphere.points[i] - p).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// Symmetric Chamfer distance with squared Euclidean terms, averaged per set:
//   (1/|x|) sum_i min_j |x_i-y_j|^2 + (1/|y|) sum_j min_i |x_i-y_j|^2
inline double chamfer_distance(const PointCloud& x, const PointCloud& y) {
    if (x.empty() || y.empty()) throw DomainError("chamfer: empty cloud");
    double sx = 0.0, sy = 0.0;
    std::vector<double> min_y(y.size(), std::numeric_limits<double>::infinity());
    for (const auto& xi : x.points) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < y.size(); ++j) {
            double d = (xi - y.points[j]).squaredNorm();
            if (d < best) best = d;
            if (d < min_y[j]) min_y[j] = d;
        }
        sx += best;
    }
    for (double d : min_y) sy += d;
    return sx / static_cast<double>(x.size()) + sy / static_cast<double>(y.size());
}

namespace detail {

// Shortest-augmenting-path assignment (Hungarian with potentials), O(n^3).
// Returns the column assigned to each row.
inline std::vector<int> solve_assignment(const Eigen::MatrixXd& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

// Forward auction with epsilon scaling. Produces a complete assignment whose
// cost is within n*eps_final of the optimum.
inline std::vector<int> auction_assignment(const Eigen::MatrixXd& cost, double eps_final) {
    const int n = static_cast<int>(cost.rows());
    std::vector<double> price(n, 0.0);
    std::vector<int> row_of_col(n, -1), col_of_row(n, -1);
    double cmax = cost.maxCoeff();
    double eps = std::max(eps_final, cmax / 2.0 + eps_final);
    while (true) {
        std::fill(row_of_col.begin(), row_of_col.end(), -1);
        std::fill(col_of_row.begin(), col_of_row.end(), -1);
        std::vector<int> unassigned;
        for (int i = 0; i < n; ++i) unassigned.push_back(i);
        while (!unassigned.empty()) {
            int i = unassigned.back();
            unassigned.pop_back();
            // Benefit of column j to bidder i is -cost; find best and second best.
            int best_j = -1;
            double best_v = -std::numeric_limits<double>::infinity();
            double second_v = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < n; ++j) {
                double val = -cost(i, j) - price[j];
                if (val > best_v) {
                    second_v = best_v;
                    best_v = val;
                    best_j = j;
                } else if (val > second_v) {
                    second_v = val;
                }
            }
            double bid = best_v - second_v + eps;
            price[best_j] += bid;
            if (row_of_col[best_j] >= 0) {
                col_of_row[row_of_col[best_j]] = -1;
                unassigned.push_back(row_of_col[best_j]);
            }
            row_of_col[best_j] = i;
            col_of_row[i] = best_j;
        }
        if (eps <= eps_final) break;
        eps = std::max(eps_final, eps / 4.0);
    }
    return col_of_row;
}

}  // namespace detail

enum class EmdMode { Exact, Approximate };

struct EmdResult {
    double value = 0.0;
    std::vector<int> matching;  // matching[i] = index in y paired with x_i
    EmdMode mode = EmdMode::Exact;
};

// Minimum average matched (unsquared) Euclidean distance under a bijection.
inline EmdResult emd_with_matching(const PointCloud& x, const PointCloud& y, EmdMode mode = EmdMode::Exact) {
    if (x.size() != y.size()) throw DomainError("emd: clouds must have equal size");
    if (x.empty()) throw DomainError("emd: empty cloud");
    const int n = static_cast<int>(x.size());
    Eigen::MatrixXd cost(n, n);
    double diameter = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            cost(i, j) = (x.points[static_cast<std::size_t>(i)] - y.points[static_cast<std::size_t>(j)]).norm();
            diameter = std::max(diameter, cost(i, j));
        }
    EmdResult r;
    r.mode = mode;
    if (mode == EmdMode::Exact) {
        r.matching = detail::solve_assignment(cost);
    } else {
        // eps-scaled auction; final assignment cost <= optimal + n*eps with
        // eps = 1e-3 * diameter, i.e. reported average <= optimal average + 1e-3*diameter.
        double eps = std::max(1e-3 * diameter, 1e-12);
        r.matching = detail::auction_assignment(cost, eps / n);
    }
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, r.matching[static_cast<std::size_t>(i)]);
    r.value = total / n;
    return r;
}

inline double emd(const PointCloud& x, const PointCloud& y, EmdMode mode = EmdMode::Exact) {
    return emd_with_matching(x, y, mode).value;
}

}  // namespace pcsq
