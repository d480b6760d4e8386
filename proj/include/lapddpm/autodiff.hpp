#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lapddpm/graph.hpp"
#include "lapddpm/tensor.hpp"

namespace lapddpm::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Tape-based reverse-mode differentiation over dense matrix operations.
// Values are computed eagerly; backward closures are recorded per node and
// replayed in reverse order by backward().
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves.
    Var constant(Mat v);                               // untracked input
    Var param(const std::string& name, const Mat& v);  // tracked leaf

    const Mat& val(Var v) const { return nodes_[v.id].val; }
    const Mat& grad(Var v) const;

    // Elementwise and linear-algebra ops.
    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var mul_const(Var a, const Mat& c);   // elementwise by a constant matrix
    Var add_row(Var a, Var row);          // broadcast a 1 x m row over n rows
    Var row_scale(Var a, const Vec& s);   // row i scaled by constant s(i)
    Var silu(Var a);
    Var exp(Var a);
    Var clamp(Var a, double lo, double hi);
    Var concat_cols(const std::vector<Var>& parts);
    Var layernorm_rows(Var a, Var gamma, Var beta, Mat* normalized_out = nullptr);
    // y[i] = drop[i] ? null_row : table[ids[i]]
    Var embed_rows(Var table, Var null_row, const std::vector<int>& ids,
                   const std::vector<std::uint8_t>& drop);
    // y = -(D^{-1/2} A D^{-1/2}) x applied column-wise; the operator for the
    // shifted Chebyshev Laplacian L_norm - I. Symmetric, so backward reuses it.
    Var scaled_laplacian_apply(std::shared_ptr<const graph::AdjacencyView> view, Var a);
    // Reductions to 1 x 1.
    Var sum_all(Var a);
    Var mean_all(Var a);

    // Reverse sweep from a scalar (1 x 1) node.
    void backward(Var root);

    // Gradients of all tracked params, in registration order.
    ParamStore param_grads() const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat val;
        Mat grad;
        bool has_grad = false;
        std::function<void(Tape&)> back;  // empty for leaves
    };

    Var push(Mat v, std::function<void(Tape&)> back = {});
    // Accumulate into a node's gradient, allocating it on first touch.
    void accum(int id, const Mat& g);
    Mat& grad_ref(int id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
    std::vector<std::pair<std::string, int>> params_;
};

}  // namespace lapddpm::ad
