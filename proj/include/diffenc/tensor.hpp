#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "diffenc/error.hpp"

// Minimal reverse-mode differentiation over dense row-major 2-D tensors.
//
// A Graph records every operation applied to Vars; `backward` walks the record in reverse
// insertion order, which is a valid topological order because nodes can only reference
// earlier nodes. Subgraphs built purely from constants never get a backward closure.

namespace diffenc::nn {

struct Tensor {
    std::vector<std::size_t> shape{0, 0};
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0) : shape{rows, cols}, data(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values) : shape{rows, cols}, data(std::move(values)) {
        if (data.size() != rows * cols) throw ConfigError("tensor data length does not match shape");
    }

    static Tensor row(std::span<const double> v) { return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end())); }
    static Tensor column(std::span<const double> v) { return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end())); }

    std::size_t rows() const noexcept { return shape[0]; }
    std::size_t cols() const noexcept { return shape[1]; }
    std::size_t size() const noexcept { return data.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    std::span<const double> row_span(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
    std::span<double> row_span(std::size_t r) { return {data.data() + r * cols(), cols()}; }

    bool same_shape(const Tensor& o) const noexcept { return shape == o.shape; }
    bool all_finite() const noexcept {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor&) const = default;
};

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
inline MutMap as_matrix(Tensor& t) { return MutMap(t.data.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value) { return push("constant", std::move(value), false, {}); }

    /// Leaf for a named parameter; repeated requests return the same node so that gradients
    /// from every use accumulate in one slot.
    Var parameter(const std::string& name, const Tensor& value) {
        if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var{this, it->second};
        Var v = push("parameter", value, true, {});
        param_nodes_.emplace(name, v.id);
        return v;
    }

    std::optional<std::size_t> parameter_node(const std::string& name) const {
        if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return it->second;
        return std::nullopt;
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // ---- operations -------------------------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor& A = a.value();
        const Tensor& B = b.value();
        if (A.cols() != B.rows()) throw ConfigError("matmul: inner dimensions differ");
        Tensor out(A.rows(), B.cols());
        as_matrix(out).noalias() = as_matrix(A) * as_matrix(B);
        return push("matmul", std::move(out), any_grad(a, b), [a, b](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            if (g.needs(a)) as_matrix(g.grad_slot(a)).noalias() += as_matrix(G) * as_matrix(b.value()).transpose();
            if (g.needs(b)) as_matrix(g.grad_slot(b)).noalias() += as_matrix(a.value()).transpose() * as_matrix(G);
        });
    }

    /// a[n, m] + bias[1, m] broadcast over rows.
    Var add_bias(Var a, Var bias) {
        const Tensor& A = a.value();
        const Tensor& b = bias.value();
        if (b.rows() != 1 || b.cols() != A.cols()) throw ConfigError("add_bias: bias must be [1, cols]");
        Tensor out = A;
        as_matrix(out).rowwise() += as_matrix(b).row(0);
        return push("add_bias", std::move(out), any_grad(a, bias), [a, bias](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            if (g.needs(a)) as_matrix(g.grad_slot(a)) += as_matrix(G);
            if (g.needs(bias)) as_matrix(g.grad_slot(bias)) += as_matrix(G).colwise().sum();
        });
    }

    Var add(Var a, Var b) { return binary("add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0); }
    Var sub(Var a, Var b) { return binary("sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0); }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        Tensor out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
        return push("mul", std::move(out), any_grad(a, b), [a, b](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            if (g.needs(a)) {
                Tensor& ga = g.grad_slot(a);
                for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += G.data[i] * b.value().data[i];
            }
            if (g.needs(b)) {
                Tensor& gb = g.grad_slot(b);
                for (std::size_t i = 0; i < G.size(); ++i) gb.data[i] += G.data[i] * a.value().data[i];
            }
        });
    }

    Var scale(Var a, double k) {
        Tensor out = a.value();
        for (double& v : out.data) v *= k;
        return push("scale", std::move(out), any_grad(a), [a, k](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            Tensor& ga = g.grad_slot(a);
            for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += k * G.data[i];
        });
    }

    /// Row r multiplied by k[r].
    Var row_scale(Var a, std::vector<double> k) {
        const Tensor& A = a.value();
        if (k.size() != A.rows()) throw ConfigError("row_scale: one factor per row required");
        Tensor out = A;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (double& v : out.row_span(r)) v *= k[r];
        return push("row_scale", std::move(out), any_grad(a), [a, k = std::move(k)](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            Tensor& ga = g.grad_slot(a);
            const std::size_t cols = G.cols();
            for (std::size_t r = 0; r < G.rows(); ++r)
                for (std::size_t c = 0; c < cols; ++c) ga.data[r * cols + c] += k[r] * G.data[r * cols + c];
        });
    }

    /// x * logistic(x).
    Var silu(Var a) {
        Tensor out = a.value();
        for (double& v : out.data) v = v / (1.0 + std::exp(-v));
        return push("silu", std::move(out), any_grad(a), [a](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            Tensor& ga = g.grad_slot(a);
            const Tensor& x = a.value();
            for (std::size_t i = 0; i < G.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
                ga.data[i] += G.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
            }
        });
    }

    Var concat_cols(Var a, Var b) {
        const Tensor& A = a.value();
        const Tensor& B = b.value();
        if (A.rows() != B.rows()) throw ConfigError("concat_cols: row counts differ");
        Tensor out(A.rows(), A.cols() + B.cols());
        for (std::size_t r = 0; r < A.rows(); ++r) {
            auto dst = out.row_span(r);
            std::copy(A.row_span(r).begin(), A.row_span(r).end(), dst.begin());
            std::copy(B.row_span(r).begin(), B.row_span(r).end(), dst.begin() + long(A.cols()));
        }
        return push("concat_cols", std::move(out), any_grad(a, b), [a, b](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            const std::size_t ca = a.value().cols();
            const std::size_t cb = b.value().cols();
            for (std::size_t r = 0; r < G.rows(); ++r) {
                if (g.needs(a)) {
                    Tensor& ga = g.grad_slot(a);
                    for (std::size_t c = 0; c < ca; ++c) ga(r, c) += G(r, c);
                }
                if (g.needs(b)) {
                    Tensor& gb = g.grad_slot(b);
                    for (std::size_t c = 0; c < cb; ++c) gb(r, c) += G(r, ca + c);
                }
            }
        });
    }

    /// [n, m] -> [n, 1] sum of each row.
    Var row_sum(Var a) {
        const Tensor& A = a.value();
        Tensor out(A.rows(), 1);
        for (std::size_t r = 0; r < A.rows(); ++r)
            for (double v : A.row_span(r)) out.data[r] += v;
        return push("row_sum", std::move(out), any_grad(a), [a](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            Tensor& ga = g.grad_slot(a);
            for (std::size_t r = 0; r < ga.rows(); ++r)
                for (double& v : ga.row_span(r)) v += G.data[r];
        });
    }

    /// Scalar [1, 1] mean of all entries.
    Var mean(Var a) {
        const Tensor& A = a.value();
        if (A.size() == 0) throw ConfigError("mean of empty tensor");
        const double n = static_cast<double>(A.size());
        Tensor out(1, 1, std::accumulate(A.data.begin(), A.data.end(), 0.0) / n);
        return push("mean", std::move(out), any_grad(a), [a, n](Graph& g, std::size_t self) {
            const double G = g.nodes_[self].grad.data[0];
            for (double& v : g.grad_slot(a).data) v += G / n;
        });
    }

    Var square(Var a) { return mul(a, a); }

    /// Fills in gradients of the scalar `loss` with respect to every node that requires them.
    void backward(Var loss) {
        if (loss.value().size() != 1) throw ConfigError("backward requires a scalar loss");
        for (auto& n : nodes_)
            if (n.requires_grad) n.grad = Tensor(n.value.rows(), n.value.cols());
        if (!nodes_[loss.id].requires_grad) return;
        nodes_[loss.id].grad.data[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.requires_grad && n.backward) n.backward(*this, i);
        }
    }

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Graph&, std::size_t)> backward;
    };

    Var push(const char* op, Tensor value, bool requires_grad, std::function<void(Graph&, std::size_t)> bw) {
        if (!value.all_finite()) {
            throw NumericalError(std::string("non-finite value produced by op '") + op + "' (node " +
                                 std::to_string(nodes_.size()) + ")");
        }
        nodes_.push_back(Node{op, std::move(value), Tensor{}, requires_grad, requires_grad ? std::move(bw) : nullptr});
        return Var{this, nodes_.size() - 1};
    }

    template <typename... V>
    bool any_grad(V... v) const {
        return (nodes_[v.id].requires_grad || ...);
    }
    bool needs(Var v) const { return nodes_[v.id].requires_grad; }
    Tensor& grad_slot(Var v) { return nodes_[v.id].grad; }

    void check_same(Var a, Var b, const char* op) const {
        if (!a.value().same_shape(b.value())) throw ConfigError(std::string(op) + ": shapes differ");
    }

    template <typename F>
    Var binary(const char* op, Var a, Var b, F f, double da, double db) {
        check_same(a, b, op);
        Tensor out = a.value();
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(out.data[i], b.value().data[i]);
        return push(op, std::move(out), any_grad(a, b), [a, b, da, db](Graph& g, std::size_t self) {
            const Tensor& G = g.nodes_[self].grad;
            if (g.needs(a)) {
                Tensor& ga = g.grad_slot(a);
                for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += da * G.data[i];
            }
            if (g.needs(b)) {
                Tensor& gb = g.grad_slot(b);
                for (std::size_t i = 0; i < G.size(); ++i) gb.data[i] += db * G.data[i];
            }
        });
    }

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return graph->value(id); }

inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }
inline Var operator*(double k, Var a) { return a.graph->scale(a, k); }

}  // namespace diffenc::nn
