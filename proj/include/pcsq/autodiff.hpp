#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
// A Tape owns the computation graph of one forward pass; backward() walks it
// in reverse creation order. Values are double precision throughout so the
// finite-difference checks in the test suite are meaningful.

#include <cassert>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pcsq/geometry.hpp"

namespace pcsq::ad {

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

class Tape {
    struct Node {
        Mat value;
        Mat grad;
        bool needs_grad = false;
        std::function<void(Tape&, const Mat&)> back;  // routes incoming grad to parents
    };
    std::vector<Node> nodes_;
    std::vector<std::pair<int, int>> param_bindings_;  // (store index, node id)

    int push(Mat v, bool needs_grad, std::function<void(Tape&, const Mat&)> back = {}) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

public:
    const Mat& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

    void accumulate(int id, const Mat& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad += g;
    }

    Var constant(Mat v) { return {this, push(std::move(v), false)}; }
    Var leaf(Mat v) { return {this, push(std::move(v), true)}; }

    // Leaf bound to an external parameter slot; bindings are consumed by the
    // optimizer after backward().
    Var param(Mat v, int store_index) {
        Var out = leaf(std::move(v));
        param_bindings_.emplace_back(store_index, out.id);
        return out;
    }
    const std::vector<std::pair<int, int>>& param_bindings() const { return param_bindings_; }

    void backward(Var root) {
        Node& r = nodes_[static_cast<std::size_t>(root.id)];
        assert(r.value.rows() == 1 && r.value.cols() == 1);
        accumulate(root.id, Mat::Ones(1, 1));
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back && n.grad.size() != 0) n.back(*this, n.grad);
        }
    }

    // --- elementwise / structural ops -------------------------------------

    Var add(Var a, Var b) {
        Mat v = value(a) + value(b);
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        return {this, push(std::move(v), ng, [ia, ib](Tape& t, const Mat& g) {
                    t.accumulate(ia, g);
                    t.accumulate(ib, g);
                })};
    }

    Var sub(Var a, Var b) {
        Mat v = value(a) - value(b);
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        return {this, push(std::move(v), ng, [ia, ib](Tape& t, const Mat& g) {
                    t.accumulate(ia, g);
                    t.accumulate(ib, -g);
                })};
    }

    Var cmul(Var a, Var b) {
        Mat va = value(a), vb = value(b);
        Mat v = va.cwiseProduct(vb);
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        return {this, push(std::move(v), ng, [ia, ib, va, vb](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.cwiseProduct(vb));
                    t.accumulate(ib, g.cwiseProduct(va));
                })};
    }

    Var scale(Var a, double s) {
        Mat v = value(a) * s;
        int ia = a.id;
        return {this, push(std::move(v), needs_grad(a), [ia, s](Tape& t, const Mat& g) { t.accumulate(ia, g * s); })};
    }

    Var matmul(Var a, Var b) {
        Mat va = value(a), vb = value(b);
        Mat v = va * vb;
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        return {this, push(std::move(v), ng, [ia, ib, va, vb](Tape& t, const Mat& g) {
                    t.accumulate(ia, g * vb.transpose());
                    t.accumulate(ib, va.transpose() * g);
                })};
    }

    // a * b^T
    Var matmul_nt(Var a, Var b) {
        Mat va = value(a), vb = value(b);
        Mat v = va * vb.transpose();
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        return {this, push(std::move(v), ng, [ia, ib, va, vb](Tape& t, const Mat& g) {
                    t.accumulate(ia, g * vb);
                    t.accumulate(ib, g.transpose() * va);
                })};
    }

    // a^T * b
    Var matmul_tn(Var a, Var b) {
        Mat va = value(a), vb = value(b);
        Mat v = va.transpose() * vb;
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        return {this, push(std::move(v), ng, [ia, ib, va, vb](Tape& t, const Mat& g) {
                    t.accumulate(ia, vb * g.transpose());
                    t.accumulate(ib, va * g);
                })};
    }

    Var add_rowvec(Var a, Var v1c) {
        Mat v = value(a).rowwise() + value(v1c).row(0);
        bool ng = needs_grad(a) || needs_grad(v1c);
        int ia = a.id, iv = v1c.id;
        return {this, push(std::move(v), ng, [ia, iv](Tape& t, const Mat& g) {
                    t.accumulate(ia, g);
                    t.accumulate(iv, g.colwise().sum());
                })};
    }

    Var mul_rowvec(Var a, Var v1c) {
        Mat va = value(a);
        Eigen::RowVectorXd vv = value(v1c).row(0);
        Mat v = va.array().rowwise() * vv.array();
        bool ng = needs_grad(a) || needs_grad(v1c);
        int ia = a.id, iv = v1c.id;
        return {this, push(std::move(v), ng, [ia, iv, va, vv](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.array().rowwise() * vv.array());
                    t.accumulate(iv, (g.cwiseProduct(va)).colwise().sum());
                })};
    }

    Var div_rowvec(Var a, Var v1c) {
        Mat va = value(a);
        Eigen::RowVectorXd vv = value(v1c).row(0);
        Mat out = va.array().rowwise() / vv.array();
        bool ng = needs_grad(a) || needs_grad(v1c);
        int ia = a.id, iv = v1c.id;
        Mat out_copy = out;
        return {this, push(std::move(out), ng, [ia, iv, vv, out_copy](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.array().rowwise() / vv.array());
                    Eigen::RowVectorXd gv =
                        -((g.cwiseProduct(out_copy)).colwise().sum().array() / vv.array());
                    t.accumulate(iv, gv);
                })};
    }

    Var colsum(Var a) {
        Mat v = value(a).colwise().sum();
        int ia = a.id;
        Eigen::Index rows = value(a).rows();
        return {this, push(std::move(v), needs_grad(a), [ia, rows](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.replicate(rows, 1));
                })};
    }

    Var sum_all(Var a) {
        Mat v(1, 1);
        v(0, 0) = value(a).sum();
        int ia = a.id;
        Eigen::Index r = value(a).rows(), c = value(a).cols();
        return {this, push(std::move(v), needs_grad(a), [ia, r, c](Tape& t, const Mat& g) {
                    t.accumulate(ia, Mat::Constant(r, c, g(0, 0)));
                })};
    }

    Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size())); }

    Var relu(Var a) {
        Mat va = value(a);
        Mat v = va.cwiseMax(0.0);
        int ia = a.id;
        return {this, push(std::move(v), needs_grad(a), [ia, va](Tape& t, const Mat& g) {
                    t.accumulate(ia, (va.array() > 0.0).cast<double>().matrix().cwiseProduct(g));
                })};
    }

    Var leaky_relu(Var a, double alpha) {
        Mat va = value(a);
        Mat v = va.cwiseMax(va * alpha);
        int ia = a.id;
        return {this, push(std::move(v), needs_grad(a), [ia, va, alpha](Tape& t, const Mat& g) {
                    Mat m = (va.array() > 0.0).cast<double>().matrix();
                    t.accumulate(ia, (m + (Mat::Ones(m.rows(), m.cols()) - m) * alpha).cwiseProduct(g));
                })};
    }

    Var tanh(Var a) {
        Mat v = value(a).array().tanh();
        int ia = a.id;
        Mat vc = v;
        return {this, push(std::move(v), needs_grad(a), [ia, vc](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.cwiseProduct((1.0 - vc.array().square()).matrix()));
                })};
    }

    Var rowwise_softmax(Var a) {
        Mat x = value(a);
        Mat out(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            Eigen::RowVectorXd e = (x.row(r).array() - x.row(r).maxCoeff()).exp();
            out.row(r) = e / e.sum();
        }
        int ia = a.id;
        Mat oc = out;
        return {this, push(std::move(out), needs_grad(a), [ia, oc](Tape& t, const Mat& g) {
                    Mat gx(g.rows(), g.cols());
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                        double dot = g.row(r).dot(oc.row(r));
                        gx.row(r) = oc.row(r).cwiseProduct(g.row(r).array().matrix() -
                                                           Eigen::RowVectorXd::Constant(g.cols(), dot));
                    }
                    t.accumulate(ia, gx);
                })};
    }

    Var rowwise_log_softmax(Var a) {
        Mat x = value(a);
        Mat out(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            double mx = x.row(r).maxCoeff();
            double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
            out.row(r) = x.row(r).array() - lse;
        }
        int ia = a.id;
        Mat oc = out;
        return {this, push(std::move(out), needs_grad(a), [ia, oc](Tape& t, const Mat& g) {
                    Mat gx(g.rows(), g.cols());
                    for (Eigen::Index r = 0; r < g.rows(); ++r) {
                        Eigen::RowVectorXd sm = oc.row(r).array().exp();
                        gx.row(r) = g.row(r) - sm * g.row(r).sum();
                    }
                    t.accumulate(ia, gx);
                })};
    }

    // Rows gathered by index; index -1 selects an implicit zero row (used for
    // zero padding in convolutions).
    Var gather_rows(Var a, std::vector<int> idx) {
        const Mat& va = value(a);
        Mat v(static_cast<Eigen::Index>(idx.size()), va.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (idx[i] < 0)
                v.row(static_cast<Eigen::Index>(i)).setZero();
            else
                v.row(static_cast<Eigen::Index>(i)) = va.row(idx[i]);
        int ia = a.id;
        Eigen::Index rows = va.rows(), cols = va.cols();
        return {this, push(std::move(v), needs_grad(a), [ia, idx, rows, cols](Tape& t, const Mat& g) {
                    Mat ga = Mat::Zero(rows, cols);
                    for (std::size_t i = 0; i < idx.size(); ++i)
                        if (idx[i] >= 0) ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                    t.accumulate(ia, ga);
                })};
    }

    // Max over rows sharing a segment id. Empty segments produce zero rows.
    Var segment_max(Var a, const std::vector<int>& seg, int n_seg) {
        const Mat& va = value(a);
        Mat v = Mat::Zero(n_seg, va.cols());
        Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(n_seg, static_cast<int>(va.cols()), -1);
        for (Eigen::Index i = 0; i < va.rows(); ++i) {
            int s = seg[static_cast<std::size_t>(i)];
            for (Eigen::Index c = 0; c < va.cols(); ++c) {
                if (arg(s, c) < 0 || va(i, c) > v(s, c)) {
                    v(s, c) = va(i, c);
                    arg(s, c) = static_cast<int>(i);
                }
            }
        }
        int ia = a.id;
        Eigen::Index rows = va.rows(), cols = va.cols();
        return {this, push(std::move(v), needs_grad(a), [ia, arg, rows, cols](Tape& t, const Mat& g) {
                    Mat ga = Mat::Zero(rows, cols);
                    for (Eigen::Index s = 0; s < arg.rows(); ++s)
                        for (Eigen::Index c = 0; c < cols; ++c)
                            if (arg(s, c) >= 0) ga(arg(s, c), c) += g(s, c);
                    t.accumulate(ia, ga);
                })};
    }

    Var concat_cols(Var a, Var b) {
        const Mat& va = value(a);
        const Mat& vb = value(b);
        Mat v(va.rows(), va.cols() + vb.cols());
        v << va, vb;
        bool ng = needs_grad(a) || needs_grad(b);
        int ia = a.id, ib = b.id;
        Eigen::Index ca = va.cols(), cb = vb.cols();
        return {this, push(std::move(v), ng, [ia, ib, ca, cb](Tape& t, const Mat& g) {
                    t.accumulate(ia, g.leftCols(ca));
                    t.accumulate(ib, g.rightCols(cb));
                })};
    }

    Var vstack(const std::vector<Var>& parts) {
        Eigen::Index rows = 0, cols = value(parts.front()).cols();
        for (Var p : parts) rows += value(p).rows();
        Mat v(rows, cols);
        std::vector<std::pair<int, Eigen::Index>> layout;  // (id, row count)
        Eigen::Index at = 0;
        bool ng = false;
        for (Var p : parts) {
            const Mat& vp = value(p);
            v.middleRows(at, vp.rows()) = vp;
            layout.emplace_back(p.id, vp.rows());
            at += vp.rows();
            ng = ng || needs_grad(p);
        }
        return {this, push(std::move(v), ng, [layout](Tape& t, const Mat& g) {
                    Eigen::Index at2 = 0;
                    for (auto [id, r] : layout) {
                        t.accumulate(id, g.middleRows(at2, r));
                        at2 += r;
                    }
                })};
    }

    // Row-major reshape: element at flat position r*cols+c keeps its rank.
    Var reshape_rowmajor(Var a, Eigen::Index r, Eigen::Index c) {
        const Mat& va = value(a);
        assert(va.size() == r * c);
        Mat v(r, c);
        Eigen::Index oc = va.cols();
        for (Eigen::Index i = 0; i < va.size(); ++i) v(i / c, i % c) = va(i / oc, i % oc);
        int ia = a.id;
        Eigen::Index orows = va.rows();
        return {this, push(std::move(v), needs_grad(a), [ia, orows, oc, c](Tape& t, const Mat& g) {
                    Mat ga(orows, oc);
                    for (Eigen::Index i = 0; i < ga.size(); ++i) ga(i / oc, i % oc) = g(i / c, i % c);
                    t.accumulate(ia, ga);
                })};
    }

    Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
        Mat v = value(a).middleRows(start, n);
        int ia = a.id;
        Eigen::Index rows = value(a).rows(), cols = value(a).cols();
        return {this, push(std::move(v), needs_grad(a), [ia, start, n, rows, cols](Tape& t, const Mat& g) {
                    Mat ga = Mat::Zero(rows, cols);
                    ga.middleRows(start, n) = g;
                    t.accumulate(ia, ga);
                })};
    }

    // Standardize each column by its batch mean/variance. Returns the
    // normalized matrix; batch statistics are exposed for running averages.
    Var standardize_cols(Var a, double eps, Eigen::RowVectorXd* mean_out = nullptr,
                         Eigen::RowVectorXd* var_out = nullptr) {
        const Mat& x = value(a);
        const double n = static_cast<double>(x.rows());
        Eigen::RowVectorXd mu = x.colwise().mean();
        Eigen::RowVectorXd var = ((x.rowwise() - mu).array().square().colwise().sum() / n).matrix();
        if (mean_out) *mean_out = mu;
        if (var_out) *var_out = var;
        Eigen::RowVectorXd istd = (var.array() + eps).rsqrt();
        Mat xhat = (x.rowwise() - mu).array().rowwise() * istd.array();
        int ia = a.id;
        Mat xh = xhat;
        return {this, push(std::move(xhat), needs_grad(a), [ia, xh, istd, n](Tape& t, const Mat& g) {
                    Eigen::RowVectorXd gsum = g.colwise().sum();
                    Eigen::RowVectorXd gdot = (g.cwiseProduct(xh)).colwise().sum();
                    Mat gx = (g * n).rowwise() - gsum;
                    gx -= (xh.array().rowwise() * gdot.array()).matrix();
                    gx = ((gx / n).array().rowwise() * istd.array()).matrix();
                    t.accumulate(ia, gx);
                })};
    }

    // Standardize each row by its own mean/variance (layer-norm core).
    Var standardize_rows(Var a, double eps) {
        const Mat& x = value(a);
        const double c = static_cast<double>(x.cols());
        Eigen::VectorXd mu = x.rowwise().mean();
        Mat centered = x.colwise() - mu;
        Eigen::VectorXd istd = (centered.array().square().rowwise().sum() / c + eps).rsqrt();
        Mat xhat = centered.array().colwise() * istd.array();
        int ia = a.id;
        Mat xh = xhat;
        return {this, push(std::move(xhat), needs_grad(a), [ia, xh, istd, c](Tape& t, const Mat& g) {
                    Eigen::VectorXd gsum = g.rowwise().sum();
                    Eigen::VectorXd gdot = (g.cwiseProduct(xh)).rowwise().sum();
                    Mat gx = (g * c).colwise() - gsum;
                    gx -= (xh.array().colwise() * gdot.array()).matrix();
                    gx = ((gx / c).array().colwise() * istd.array()).matrix();
                    t.accumulate(ia, gx);
                })};
    }

    Var select(Var a, Eigen::Index r, Eigen::Index c) {
        Mat v(1, 1);
        v(0, 0) = value(a)(r, c);
        int ia = a.id;
        Eigen::Index rows = value(a).rows(), cols = value(a).cols();
        return {this, push(std::move(v), needs_grad(a), [ia, r, c, rows, cols](Tape& t, const Mat& g) {
                    Mat ga = Mat::Zero(rows, cols);
                    ga(r, c) = g(0, 0);
                    t.accumulate(ia, ga);
                })};
    }

    // Negative mean log-likelihood of per-row targets; `a` holds log-probs.
    Var nll_rows(Var a, const std::vector<int>& targets) {
        const Mat& la = value(a);
        double s = 0.0;
        for (Eigen::Index r = 0; r < la.rows(); ++r) s -= la(r, targets[static_cast<std::size_t>(r)]);
        Mat v(1, 1);
        v(0, 0) = s / static_cast<double>(la.rows());
        int ia = a.id;
        Eigen::Index rows = la.rows(), cols = la.cols();
        return {this, push(std::move(v), needs_grad(a), [ia, targets, rows, cols](Tape& t, const Mat& g) {
                    Mat ga = Mat::Zero(rows, cols);
                    for (Eigen::Index r = 0; r < rows; ++r)
                        ga(r, targets[static_cast<std::size_t>(r)]) = -g(0, 0) / static_cast<double>(rows);
                    t.accumulate(ia, ga);
                })};
    }

    // Identity for gradients, arbitrary value for the forward pass. The
    // straight-through estimator at the quantization step.
    Var straight_through(Var src, Mat forward_value) {
        assert(forward_value.rows() == value(src).rows() && forward_value.cols() == value(src).cols());
        int is = src.id;
        return {this,
                push(std::move(forward_value), needs_grad(src), [is](Tape& t, const Mat& g) { t.accumulate(is, g); })};
    }

    // out(i,:) = sum_t alpha(i,t) * feats(i*k + t, :)
    Var weighted_neighbor_sum(Var alpha, Var feats) {
        const Mat& va = value(alpha);
        const Mat& vf = value(feats);
        const Eigen::Index n = va.rows(), k = va.cols();
        Mat v = Mat::Zero(n, vf.cols());
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index t = 0; t < k; ++t) v.row(i) += va(i, t) * vf.row(i * k + t);
        bool ng = needs_grad(alpha) || needs_grad(feats);
        int ia = alpha.id, iff = feats.id;
        Mat vac = va, vfc = vf;
        return {this, push(std::move(v), ng, [ia, iff, vac, vfc, n, k](Tape& t, const Mat& g) {
                    Mat galpha = Mat::Zero(n, k);
                    Mat gfeats = Mat::Zero(vfc.rows(), vfc.cols());
                    for (Eigen::Index i = 0; i < n; ++i)
                        for (Eigen::Index j = 0; j < k; ++j) {
                            galpha(i, j) = g.row(i).dot(vfc.row(i * k + j));
                            gfeats.row(i * k + j) += vac(i, j) * g.row(i);
                        }
                    t.accumulate(ia, galpha);
                    t.accumulate(iff, gfeats);
                })};
    }

    // --- point-cloud losses ------------------------------------------------

    // Symmetric averaged squared-distance Chamfer loss of predicted rows
    // against a fixed target cloud. Nearest neighbors are held fixed in the
    // backward pass (the usual subgradient).
    Var chamfer_loss(Var pred, const PointCloud& target) {
        const Mat& p = value(pred);
        const Eigen::Index m = p.rows();
        const Eigen::Index n = static_cast<Eigen::Index>(target.size());
        std::vector<int> nn_pred(static_cast<std::size_t>(m));    // target index nearest to pred row
        std::vector<int> nn_target(static_cast<std::size_t>(n));  // pred row nearest to target point
        double sp = 0.0, st = 0.0;
        std::vector<double> best_t(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
        for (Eigen::Index i = 0; i < m; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j) {
                double d = (p.row(i).transpose() - target.points[static_cast<std::size_t>(j)]).squaredNorm();
                if (d < best) {
                    best = d;
                    nn_pred[static_cast<std::size_t>(i)] = static_cast<int>(j);
                }
                if (d < best_t[static_cast<std::size_t>(j)]) {
                    best_t[static_cast<std::size_t>(j)] = d;
                    nn_target[static_cast<std::size_t>(j)] = static_cast<int>(i);
                }
            }
            sp += best;
        }
        for (double d : best_t) st += d;
        Mat v(1, 1);
        v(0, 0) = sp / static_cast<double>(m) + st / static_cast<double>(n);
        int ip = pred.id;
        Mat pc = p;
        PointCloud tgt = target;
        return {this, push(std::move(v), needs_grad(pred),
                           [ip, pc, tgt, nn_pred, nn_target, m, n](Tape& t, const Mat& g) {
                               Mat gp = Mat::Zero(m, 3);
                               for (Eigen::Index i = 0; i < m; ++i) {
                                   const Vec3& tp = tgt.points[static_cast<std::size_t>(nn_pred[static_cast<std::size_t>(i)])];
                                   gp.row(i) += (2.0 / static_cast<double>(m)) * (pc.row(i) - tp.transpose());
                               }
                               for (Eigen::Index j = 0; j < n; ++j) {
                                   int i = nn_target[static_cast<std::size_t>(j)];
                                   gp.row(i) += (2.0 / static_cast<double>(n)) *
                                                (pc.row(i) - tgt.points[static_cast<std::size_t>(j)].transpose());
                               }
                               t.accumulate(ip, gp * g(0, 0));
                           })};
    }

    // Average matched distance under the optimal assignment; the assignment
    // is held fixed in the backward pass.
    Var emd_loss(Var pred, const PointCloud& target, EmdMode mode = EmdMode::Exact) {
        PointCloud pcloud = PointCloud::from_matrix(value(pred));
        EmdResult r = emd_with_matching(pcloud, target, mode);
        Mat v(1, 1);
        v(0, 0) = r.value;
        int ip = pred.id;
        Mat pc = value(pred);
        PointCloud tgt = target;
        const Eigen::Index m = pc.rows();
        return {this, push(std::move(v), needs_grad(pred), [ip, pc, tgt, r, m](Tape& t, const Mat& g) {
                    Mat gp = Mat::Zero(m, 3);
                    for (Eigen::Index i = 0; i < m; ++i) {
                        Vec3 d = pc.row(i).transpose() - tgt.points[static_cast<std::size_t>(r.matching[static_cast<std::size_t>(i)])];
                        double nrm = d.norm();
                        if (nrm > 1e-12) gp.row(i) = (d / (nrm * static_cast<double>(m))).transpose();
                    }
                    t.accumulate(ip, gp * g(0, 0));
                })};
    }
};

}  // namespace pcsq::ad
