#include "lapddpm/autodiff.hpp"

#include "lapddpm/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace lapddpm::ad {

Var Tape::push(Mat v, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), false, std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int id, const Mat& g) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        n.has_grad = true;
    }
    n.grad += g;
}

const Mat& Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.has_grad) throw std::runtime_error("gradient not computed for this node");
    return n.grad;
}

Var Tape::constant(Mat v) { return push(std::move(v)); }

Var Tape::param(const std::string& name, const Mat& v) {
    Var out = push(v);
    params_.emplace_back(name, out.id);
    return out;
}

Var Tape::matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows()) throw std::invalid_argument("matmul shape mismatch");
    Mat y = val(a) * val(b);
    return push(std::move(y), [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        t.accum(a.id, g * t.val(b).transpose());
        t.accum(b.id, t.val(a).transpose() * g);
    });
}

Var Tape::add(Var a, Var b) {
    Mat y = val(a) + val(b);
    return push(std::move(y), [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        t.accum(a.id, g);
        t.accum(b.id, g);
    });
}

Var Tape::sub(Var a, Var b) {
    Mat y = val(a) - val(b);
    return push(std::move(y), [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        t.accum(a.id, g);
        t.accum(b.id, -g);
    });
}

Var Tape::hadamard(Var a, Var b) {
    Mat y = val(a).cwiseProduct(val(b));
    return push(std::move(y), [a, b, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        t.accum(a.id, g.cwiseProduct(t.val(b)));
        t.accum(b.id, g.cwiseProduct(t.val(a)));
    });
}

Var Tape::scale(Var a, double c) {
    Mat y = c * val(a);
    return push(std::move(y), [a, c, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        t.accum(a.id, c * t.grad_ref(self.id));
    });
}

Var Tape::add_const(Var a, double c) {
    Mat y = val(a).array() + c;
    return push(std::move(y), [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        t.accum(a.id, t.grad_ref(self.id));
    });
}

Var Tape::mul_const(Var a, const Mat& c) {
    if (val(a).rows() != c.rows() || val(a).cols() != c.cols())
        throw std::invalid_argument("mul_const shape mismatch");
    Mat y = val(a).cwiseProduct(c);
    return push(std::move(y), [a, c, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        t.accum(a.id, t.grad_ref(self.id).cwiseProduct(c));
    });
}

Var Tape::add_row(Var a, Var row) {
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
        throw std::invalid_argument("add_row shape mismatch");
    Mat y = val(a).rowwise() + val(row).row(0);
    return push(std::move(y), [a, row, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        t.accum(a.id, g);
        t.accum(row.id, g.colwise().sum());
    });
}

Var Tape::row_scale(Var a, const Vec& s) {
    if (val(a).rows() != s.size()) throw std::invalid_argument("row_scale length mismatch");
    Mat y = s.asDiagonal() * val(a);
    return push(std::move(y), [a, s, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        t.accum(a.id, s.asDiagonal() * t.grad_ref(self.id));
    });
}

Var Tape::silu(Var a) {
    const Mat& x = val(a);
    Mat sig = (1.0 + (-x.array()).exp()).inverse();
    Mat y = x.cwiseProduct(sig);
    return push(std::move(y),
                [a, sig = std::move(sig), self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
                    const Mat& x = t.val(a);
                    Mat d = sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
                    t.accum(a.id, t.grad_ref(self.id).cwiseProduct(d));
                });
}

Var Tape::exp(Var a) {
    Mat y = val(a).array().exp();
    return push(std::move(y), [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        t.accum(a.id, t.grad_ref(self.id).cwiseProduct(t.val(self)));
    });
}

Var Tape::clamp(Var a, double lo, double hi) {
    const Mat& x = val(a);
    Mat y = x.array().max(lo).min(hi);
    return push(std::move(y), [a, lo, hi, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& x = t.val(a);
        Mat pass = ((x.array() > lo) && (x.array() < hi)).cast<double>();
        t.accum(a.id, t.grad_ref(self.id).cwiseProduct(pass));
    });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const Eigen::Index rows = val(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        if (val(p).rows() != rows) throw std::invalid_argument("concat_cols row mismatch");
        cols += val(p).cols();
    }
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        y.middleCols(at, val(p).cols()) = val(p);
        at += val(p).cols();
    }
    return push(std::move(y), [parts, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        Eigen::Index at = 0;
        for (Var p : parts) {
            const Eigen::Index w = t.val(p).cols();
            t.accum(p.id, g.middleCols(at, w));
            at += w;
        }
    });
}

Var Tape::layernorm_rows(Var a, Var gamma, Var beta, Mat* normalized_out) {
    const Mat& x = val(a);
    const Eigen::Index n = x.rows(), d = x.cols();
    if (val(gamma).rows() != 1 || val(gamma).cols() != d || val(beta).rows() != 1 ||
        val(beta).cols() != d)
        throw std::invalid_argument("layernorm affine shape mismatch");
    constexpr double kEps = 1e-12;

    Mat xhat(n, d);
    Vec istd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        istd(i) = 1.0 / std::sqrt(var + kEps);
        xhat.row(i) = (x.row(i).array() - mean) * istd(i);
    }
    if (normalized_out) *normalized_out = xhat;

    Mat y = (xhat * val(gamma).row(0).asDiagonal()).rowwise() + val(beta).row(0);
    return push(std::move(y), [a, gamma, beta, xhat = std::move(xhat), istd = std::move(istd),
                               self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const Mat& g = t.grad_ref(self.id);
        const Eigen::Index n = g.rows(), d = g.cols();
        Mat ghat = g * t.val(gamma).row(0).asDiagonal();
        Mat dx(n, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double m1 = ghat.row(i).mean();
            const double m2 = ghat.row(i).cwiseProduct(xhat.row(i)).mean();
            dx.row(i) = istd(i) * (ghat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
        t.accum(a.id, dx);
        t.accum(gamma.id, g.cwiseProduct(xhat).colwise().sum());
        t.accum(beta.id, g.colwise().sum());
    });
}

Var Tape::embed_rows(Var table, Var null_row, const std::vector<int>& ids,
                     const std::vector<std::uint8_t>& drop) {
    const Mat& tab = val(table);
    const Mat& nul = val(null_row);
    if (nul.rows() != 1 || nul.cols() != tab.cols())
        throw std::invalid_argument("null embedding shape mismatch");
    if (ids.size() != drop.size()) throw std::invalid_argument("ids/drop length mismatch");
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    Mat y(n, tab.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (drop[i]) {
            y.row(i) = nul.row(0);
        } else {
            if (ids[i] < 0 || ids[i] >= tab.rows())
                throw std::out_of_range("label id out of range: " + std::to_string(ids[i]));
            y.row(i) = tab.row(ids[i]);
        }
    }
    return push(std::move(y),
                [table, null_row, ids, drop, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
                    const Mat& g = t.grad_ref(self.id);
                    Mat dtab = Mat::Zero(t.val(table).rows(), t.val(table).cols());
                    Mat dnul = Mat::Zero(1, t.val(null_row).cols());
                    for (Eigen::Index i = 0; i < g.rows(); ++i) {
                        if (drop[i])
                            dnul.row(0) += g.row(i);
                        else
                            dtab.row(ids[i]) += g.row(i);
                    }
                    t.accum(table.id, dtab);
                    t.accum(null_row.id, dnul);
                });
}

Var Tape::scaled_laplacian_apply(std::shared_ptr<const graph::AdjacencyView> view, Var a) {
    Mat y = -view->norm_adj_apply(val(a));
    return push(std::move(y), [view, a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        t.accum(a.id, -view->norm_adj_apply(t.grad_ref(self.id)));
    });
}

Var Tape::sum_all(Var a) {
    Mat y(1, 1);
    y(0, 0) = val(a).sum();
    return push(std::move(y), [a, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const double g = t.grad_ref(self.id)(0, 0);
        t.accum(a.id, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g));
    });
}

Var Tape::mean_all(Var a) {
    const double inv = 1.0 / static_cast<double>(val(a).size());
    Mat y(1, 1);
    y(0, 0) = val(a).sum() * inv;
    return push(std::move(y), [a, inv, self = Var{static_cast<int>(nodes_.size())}](Tape& t) {
        const double g = t.grad_ref(self.id)(0, 0) * inv;
        t.accum(a.id, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g));
    });
}

void Tape::backward(Var root) {
    if (val(root).rows() != 1 || val(root).cols() != 1)
        throw std::invalid_argument("backward root must be a scalar");
    if (!std::isfinite(val(root)(0, 0))) throw NumericalError("non-finite loss");
    accum(root.id, Mat::Constant(1, 1, 1.0));
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.has_grad && n.back) n.back(*this);
    }
}

ParamStore Tape::param_grads() const {
    ParamStore out;
    for (const auto& [name, id] : params_) {
        const Node& n = nodes_[id];
        out.insert(name, n.has_grad ? n.grad : Mat::Zero(n.val.rows(), n.val.cols()));
    }
    return out;
}

}  // namespace lapddpm::ad
