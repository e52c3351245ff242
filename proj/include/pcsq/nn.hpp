#pragma once

// Parameter storage, initialization and the Adam optimizer, plus the two
// layer helpers (linear, batch norm) shared by all trainable stages.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pcsq/autodiff.hpp"

namespace pcsq::nn {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct ParamStore {
    struct Entry {
        std::string name;
        Mat value;
        Mat m, v;  // Adam moments
        bool trainable = true;
    };
    std::vector<Entry> entries;

    int add(std::string name, Mat init, bool trainable = true) {
        Entry e;
        e.name = std::move(name);
        e.m = Mat::Zero(init.rows(), init.cols());
        e.v = Mat::Zero(init.rows(), init.cols());
        e.value = std::move(init);
        e.trainable = trainable;
        entries.push_back(std::move(e));
        return static_cast<int>(entries.size()) - 1;
    }

    Mat& operator[](int idx) { return entries[static_cast<std::size_t>(idx)].value; }
    const Mat& operator[](int idx) const { return entries[static_cast<std::size_t>(idx)].value; }

    Var use(Tape& t, int idx) const { return t.param((*this)[idx], idx); }
    Var use_frozen(Tape& t, int idx) const { return t.constant((*this)[idx]); }
};

inline Mat glorot(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-s, s);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = u(rng);
    return m;
}

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
    return m;
}

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 5.0;  // global gradient-norm clip; <=0 disables
    long step = 0;

    void apply(ParamStore& store, const Tape& tape) {
        ++step;
        // A parameter may be bound several times on one tape (batched
        // forwards); sum those gradients before the update.
        std::map<int, Mat> grads;
        for (auto [idx, node] : tape.param_bindings()) {
            const Mat& g = tape.grad(Var{const_cast<Tape*>(&tape), node});
            if (g.size() == 0) continue;
            auto it = grads.find(idx);
            if (it == grads.end())
                grads.emplace(idx, g);
            else
                it->second += g;
        }
        double total_sq = 0.0;
        for (const auto& [idx, g] : grads) total_sq += g.squaredNorm();
        double scale = 1.0;
        if (clip_norm > 0.0) {
            double norm = std::sqrt(total_sq);
            if (norm > clip_norm) scale = clip_norm / norm;
        }
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (const auto& [idx, graw] : grads) {
            auto& e = store.entries[static_cast<std::size_t>(idx)];
            if (!e.trainable) continue;
            Mat g = graw * scale;
            e.m = beta1 * e.m + (1.0 - beta1) * g;
            e.v = beta2 * e.v + (1.0 - beta2) * g.cwiseProduct(g);
            Mat mhat = e.m / bc1;
            Mat vhat = e.v / bc2;
            e.value -= lr * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps).matrix());
        }
    }
};

struct Linear {
    int w = -1, b = -1;

    Linear() = default;
    Linear(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
        w = store.add(name + ".w", glorot(in, out, rng));
        b = store.add(name + ".b", Mat::Zero(1, out));
    }

    Var operator()(Tape& t, const ParamStore& store, Var x, bool frozen = false) const {
        Var W = frozen ? store.use_frozen(t, w) : store.use(t, w);
        Var B = frozen ? store.use_frozen(t, b) : store.use(t, b);
        return t.add_rowvec(t.matmul(x, W), B);
    }
};

// Batch normalization over rows. Batch statistics are used in training mode
// and folded into running averages; inference uses the running averages.
struct BatchNorm {
    int gamma = -1, beta = -1, run_mean = -1, run_var = -1;
    double momentum = 0.9;
    double eps = 1e-5;

    BatchNorm() = default;
    BatchNorm(ParamStore& store, const std::string& name, Eigen::Index dim) {
        gamma = store.add(name + ".gamma", Mat::Ones(1, dim));
        beta = store.add(name + ".beta", Mat::Zero(1, dim));
        run_mean = store.add(name + ".run_mean", Mat::Zero(1, dim), false);
        run_var = store.add(name + ".run_var", Mat::Ones(1, dim), false);
    }

    Var operator()(Tape& t, ParamStore& store, Var x, bool training, bool frozen = false) const {
        Var xhat;
        if (training) {
            Eigen::RowVectorXd mu, var;
            xhat = t.standardize_cols(x, eps, &mu, &var);
            store[run_mean] = momentum * store[run_mean] + (1.0 - momentum) * mu.matrix();
            store[run_var] = momentum * store[run_var] + (1.0 - momentum) * var.matrix();
        } else {
            Mat istd = (store[run_var].array() + eps).rsqrt();
            xhat = t.mul_rowvec(t.sub(x, t.constant(store[run_mean].replicate(t.value(x).rows(), 1))),
                                t.constant(istd));
        }
        Var G = frozen ? store.use_frozen(t, gamma) : store.use(t, gamma);
        Var B = frozen ? store.use_frozen(t, beta) : store.use(t, beta);
        return t.add_rowvec(t.mul_rowvec(xhat, G), B);
    }
};

}  // namespace pcsq::nn
