#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "stpformer/tensor.hpp"

namespace stpformer {

// A learnable tensor paired with its gradient accumulator. Gradients are
// never overwritten, only added to, so repeated backward passes (or a
// parameter used twice in one graph) accumulate as expected.
struct DualTensor {
    Tensor value;
    Tensor grad;

    explicit DualTensor(Tensor v) : value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

// Named parameter registry. std::map keeps iteration order stable and
// addresses of entries valid for the life of the store, which the tape and
// optimizer both rely on.
class ParameterStore {
public:
    DualTensor& add(const std::string& name, Tensor init);
    DualTensor& at(const std::string& name);
    const DualTensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return items_.count(name) != 0; }

    std::size_t count() const { return items_.size(); }
    std::size_t total_coords() const;
    void zero_grads();
    void fill_values(double v);

    std::map<std::string, DualTensor>& items() { return items_; }
    const std::map<std::string, DualTensor>& items() const { return items_; }

private:
    std::map<std::string, DualTensor> items_;
};

// Handle to a value on a Tape.
struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Forward calls record nodes; backward replays them in
// reverse creation order (a topological order by construction) and pushes
// gradients into parents. Leaves registered through param() additionally
// deposit their gradient into the owning DualTensor.
//
// A tape built with grad_enabled=false records values only; backward on it
// is a StateError. Use that mode for evaluation and finite-difference
// probes, where the closure bookkeeping would be wasted work.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t node_count() const { return nodes_.size(); }

    Var constant(Tensor v);
    Var param(DualTensor& p);

    const Tensor& val(Var v) const;
    Tensor grad(Var v) const; // zeros if the node never received one

    // structure
    Var reshape(Var x, Shape shape);
    Var permute(Var x, std::vector<std::size_t> axes);
    Var transpose_last(Var x);
    Var concat_last(Var a, Var b);
    Var broadcast_to(Var x, Shape target);
    Var lookup_rows(Var table, std::vector<std::size_t> idx);

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double s);
    Var relu(Var x);
    Var sigmoid(Var x);
    Var tanh_v(Var x);
    Var abs_v(Var x);
    Var huber(Var x, double delta);

    // contractions / reductions
    Var matmul(Var a, Var b);
    Var softmax_last(Var x);
    Var mean_axis(Var x, std::size_t axis);
    Var sum_all(Var x);
    Var mean_all(Var x);

    // fused blocks
    Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
    // x: (batch, steps, d_in); weights laid out for row-vector math with
    // gate order [input, forget, cell, output]. Zero initial state.
    Var lstm_scan(Var x, Var w_ih, Var w_hh, Var bias);

    // Seeds d(root)=1 (root must hold exactly one element) and propagates.
    void backward(Var root);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool needs_grad = false;
        DualTensor* sink = nullptr;
        std::function<void(Tape&, const Tensor&)> back;
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&, const Tensor&)> back);
    void accum(Var v, const Tensor& g);
    bool needs(Var v) const { return nodes_[v.id].needs_grad; }
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    std::unordered_map<const DualTensor*, std::int32_t> param_ids_;
    bool grad_enabled_;
    bool ran_backward_ = false;
};

} // namespace stpformer
