#ifndef UNICTRL_AUTOGRAD_HPP
#define UNICTRL_AUTOGRAD_HPP

#include <array>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "unictrl/tensor.hpp"

namespace unictrl {

// Reverse-mode tape. Nodes are appended in execution order, so node ids are a
// topological order and the backward pass walks them in exact reverse.
class GradTape {
  public:
    struct Var {
        int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    Var parameter(Tensor t) {
        Var v = push(Op::leaf, std::move(t), {-1, -1});
        params_.push_back(v.id);
        return v;
    }

    Var constant(Tensor t) { return push(Op::leaf, std::move(t), {-1, -1}); }

    const Tensor& value(Var v) const { return nodes_[size_t(v.id)].value; }

    size_t node_count() const { return nodes_.size(); }
    size_t parameter_count() const { return params_.size(); }

    Var add(Var a, Var b) { return push(Op::add, unictrl::add(value(a), value(b)), {a.id, b.id}); }
    Var sub(Var a, Var b) { return push(Op::sub, unictrl::sub(value(a), value(b)), {a.id, b.id}); }
    Var mul(Var a, Var b) { return push(Op::mul, unictrl::mul(value(a), value(b)), {a.id, b.id}); }

    Var scale(Var a, float s) {
        Var v = push(Op::scale, unictrl::scale(value(a), s), {a.id, -1});
        nodes_.back().scalar = s;
        return v;
    }

    Var add_bias(Var x, Var b) {
        return push(Op::add_bias, unictrl::add_bias(value(x), value(b)), {x.id, b.id});
    }

    Var matmul(Var a, Var b) {
        return push(Op::matmul, unictrl::matmul(value(a), value(b)), {a.id, b.id});
    }

    Var matmul_nt(Var a, Var b) {
        return push(Op::matmul_nt, unictrl::matmul_nt(value(a), value(b)), {a.id, b.id});
    }

    Var softmax_last(Var x) {
        return push(Op::softmax_last, unictrl::softmax_last(value(x)), {x.id, -1});
    }

    Var silu(Var x) { return push(Op::silu, unictrl::silu(value(x)), {x.id, -1}); }

    Var rmsnorm(Var x, Var gain) {
        return push(Op::rmsnorm, unictrl::rmsnorm(value(x), value(gain)), {x.id, gain.id});
    }

    Var reshape(Var x, Shape shape) {
        return push(Op::reshape, unictrl::reshape(value(x), std::move(shape)), {x.id, -1});
    }

    Var permute(Var x, IndexMap map, Shape out_shape) {
        Var v = push(Op::permute, unictrl::permute_elements(value(x), map, std::move(out_shape)),
                     {x.id, -1});
        nodes_.back().map = std::move(map);
        return v;
    }

    Var gather_rows(Var table, std::vector<int64_t> ids) {
        Var v = push(Op::gather_rows, unictrl::gather_rows(value(table), ids), {table.id, -1});
        nodes_.back().ids = std::make_shared<std::vector<int64_t>>(std::move(ids));
        return v;
    }

    Var mean_all(Var x) { return push(Op::mean_all, unictrl::mean_all(value(x)), {x.id, -1}); }

    // d(loss)/d(parameter) for every registered parameter, in registration
    // order. A parameter the loss does not depend on gets an all-zero
    // gradient; a non-scalar loss is an error.
    std::vector<Tensor> gradients(Var loss) const {
        if (!loss.valid() || loss.id >= int32_t(nodes_.size())) {
            fail_shape("backward: loss is not on this tape");
        }
        if (nodes_[size_t(loss.id)].value.numel() != 1) {
            fail_shape("backward: loss must be scalar, got " +
                       shape_str(nodes_[size_t(loss.id)].value.shape()));
        }
        std::vector<Tensor> grads(nodes_.size());
        std::vector<char> touched(nodes_.size(), 0);

        auto ensure = [&](int32_t id) -> float* {
            if (!touched[size_t(id)]) {
                grads[size_t(id)] = Tensor(nodes_[size_t(id)].value.shape());
                touched[size_t(id)] = 1;
            }
            return grads[size_t(id)].mutable_data();
        };
        auto acc_tensor = [&](int32_t id, const Tensor& d, float w) {
            float* g = ensure(id);
            const float* pd = d.data();
            for (int64_t i = 0; i < d.numel(); ++i) g[i] += w * pd[i];
        };

        ensure(loss.id)[0] = 1.0f;

        for (int32_t id = loss.id; id >= 0; --id) {
            if (!touched[size_t(id)]) continue;
            const Node& n = nodes_[size_t(id)];
            if (n.op == Op::leaf) continue;
            const Tensor& g = grads[size_t(id)];
            backprop(n, g, ensure, acc_tensor);
        }

        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (int32_t pid : params_) {
            if (touched[size_t(pid)]) {
                out.push_back(std::move(grads[size_t(pid)]));
            } else {
                out.push_back(Tensor(nodes_[size_t(pid)].value.shape()));
            }
        }
        return out;
    }

  private:
    enum class Op {
        leaf,
        add,
        sub,
        mul,
        scale,
        add_bias,
        matmul,
        matmul_nt,
        softmax_last,
        silu,
        rmsnorm,
        reshape,
        permute,
        gather_rows,
        mean_all,
    };

    struct Node {
        Op op;
        Tensor value;
        std::array<int32_t, 2> in{-1, -1};
        float scalar = 0.0f;
        IndexMap map;
        std::shared_ptr<std::vector<int64_t>> ids;
    };

    Var push(Op op, Tensor value, std::array<int32_t, 2> in) {
        Node n;
        n.op = op;
        n.value = std::move(value);
        n.in = in;
        nodes_.push_back(std::move(n));
        return Var{int32_t(nodes_.size()) - 1};
    }

    const Tensor& in_value(const Node& n, int which) const {
        return nodes_[size_t(n.in[size_t(which)])].value;
    }

    // Folds `src` into the shape of a matmul operand that was shared across
    // the batch: rank-2 targets sum over all leading axes, same-rank targets
    // sum over every axis whose target extent is 1.
    template <typename Ensure>
    static void acc_summed(const Tensor& src, const Shape& target_shape, int32_t id,
                           const Ensure& ensure) {
        float* g = ensure(id);
        const float* ps = src.data();
        const int64_t tn = shape_numel(target_shape);
        if (target_shape.size() != src.shape().size()) {
            const int64_t rows = src.numel() / tn;
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < tn; ++j) g[j] += ps[r * tn + j];
            }
            return;
        }
        const int rank = int(src.shape().size());
        std::vector<int64_t> tstride(static_cast<size_t>(rank));
        int64_t s = 1;
        for (int d = rank - 1; d >= 0; --d) {
            tstride[size_t(d)] = target_shape[size_t(d)] == 1 ? 0 : s;
            s *= target_shape[size_t(d)];
        }
        std::vector<int64_t> coord(size_t(rank), 0);
        for (int64_t i = 0; i < src.numel(); ++i) {
            int64_t ti = 0;
            for (int d = 0; d < rank; ++d) ti += coord[size_t(d)] * tstride[size_t(d)];
            g[ti] += ps[i];
            for (int d = rank - 1; d >= 0; --d) {
                if (++coord[size_t(d)] < src.shape()[size_t(d)]) break;
                coord[size_t(d)] = 0;
            }
        }
    }

    template <typename Ensure, typename AccTensor>
    void backprop(const Node& n, const Tensor& g, const Ensure& ensure,
                  const AccTensor& acc_tensor) const {
        switch (n.op) {
            case Op::leaf:
                break;
            case Op::add:
                acc_tensor(n.in[0], g, 1.0f);
                acc_tensor(n.in[1], g, 1.0f);
                break;
            case Op::sub:
                acc_tensor(n.in[0], g, 1.0f);
                acc_tensor(n.in[1], g, -1.0f);
                break;
            case Op::mul: {
                const Tensor& va = in_value(n, 0);
                const Tensor& vb = in_value(n, 1);
                float* ga = ensure(n.in[0]);
                float* gb = ensure(n.in[1]);
                const float* pg = g.data();
                for (int64_t i = 0; i < g.numel(); ++i) {
                    ga[i] += pg[i] * vb.data()[i];
                    gb[i] += pg[i] * va.data()[i];
                }
                break;
            }
            case Op::scale:
                acc_tensor(n.in[0], g, n.scalar);
                break;
            case Op::add_bias:
                acc_tensor(n.in[0], g, 1.0f);
                acc_tensor(n.in[1], sum_to_last_axis(g), 1.0f);
                break;
            case Op::matmul: {
                const Tensor& a = in_value(n, 0);
                const Tensor& b = in_value(n, 1);
                acc_tensor(n.in[0], unictrl::matmul_nt(g, b), 1.0f);
                Tensor db = unictrl::matmul_tn(a, g);
                if (db.numel() == b.numel()) {
                    acc_tensor(n.in[1], db, 1.0f);
                } else {
                    acc_summed(db, b.shape(), n.in[1], ensure);
                }
                break;
            }
            case Op::matmul_nt: {
                const Tensor& a = in_value(n, 0);
                const Tensor& b = in_value(n, 1);
                acc_tensor(n.in[0], unictrl::matmul(g, b), 1.0f);
                Tensor db = unictrl::matmul_tn(g, a);
                if (db.numel() == b.numel()) {
                    acc_tensor(n.in[1], db, 1.0f);
                } else {
                    acc_summed(db, b.shape(), n.in[1], ensure);
                }
                break;
            }
            case Op::softmax_last: {
                const Tensor& y = n.value;
                const int64_t cols = y.dim(y.rank() - 1);
                const int64_t rows = y.numel() / cols;
                float* gx = ensure(n.in[0]);
                const float* py = y.data();
                const float* pg = g.data();
                for (int64_t r = 0; r < rows; ++r) {
                    const float* yr = py + r * cols;
                    const float* gr = pg + r * cols;
                    double dot = 0.0;
                    for (int64_t j = 0; j < cols; ++j) dot += double(gr[j]) * double(yr[j]);
                    for (int64_t j = 0; j < cols; ++j) {
                        gx[r * cols + j] += (gr[j] - float(dot)) * yr[j];
                    }
                }
                break;
            }
            case Op::silu: {
                const Tensor& x = in_value(n, 0);
                float* gx = ensure(n.in[0]);
                const float* px = x.data();
                const float* pg = g.data();
                for (int64_t i = 0; i < x.numel(); ++i) {
                    const float s = sigmoid(px[i]);
                    gx[i] += pg[i] * s * (1.0f + px[i] * (1.0f - s));
                }
                break;
            }
            case Op::rmsnorm: {
                const Tensor& x = in_value(n, 0);
                const Tensor& gain = in_value(n, 1);
                const int64_t cols = gain.dim(0);
                const int64_t rows = x.numel() / cols;
                float* gx = ensure(n.in[0]);
                float* gg = ensure(n.in[1]);
                const float* px = x.data();
                const float* pgn = gain.data();
                const float* pg = g.data();
                for (int64_t r = 0; r < rows; ++r) {
                    const float* xr = px + r * cols;
                    const float* gr = pg + r * cols;
                    double ss = 0.0;
                    for (int64_t j = 0; j < cols; ++j) ss += double(xr[j]) * double(xr[j]);
                    const double ms = ss / double(cols) + double(kRmsNormEps);
                    const double inv = 1.0 / std::sqrt(ms);
                    double dot = 0.0;  // sum_j g_j * gain_j * x_j
                    for (int64_t j = 0; j < cols; ++j) {
                        dot += double(gr[j]) * double(pgn[j]) * double(xr[j]);
                    }
                    const double c = dot * inv * inv * inv / double(cols);
                    for (int64_t j = 0; j < cols; ++j) {
                        gx[r * cols + j] += float(double(gr[j]) * double(pgn[j]) * inv -
                                                  double(xr[j]) * c);
                        gg[j] += float(double(gr[j]) * double(xr[j]) * inv);
                    }
                }
                break;
            }
            case Op::reshape:
                acc_tensor(n.in[0], unictrl::reshape(g, in_value(n, 0).shape()), 1.0f);
                break;
            case Op::permute: {
                float* gx = ensure(n.in[0]);
                const float* pg = g.data();
                const int64_t* m = n.map->data();
                for (int64_t i = 0; i < g.numel(); ++i) gx[m[i]] += pg[i];
                break;
            }
            case Op::gather_rows: {
                const Tensor& table = in_value(n, 0);
                const int64_t cols = table.dim(1);
                float* gt = ensure(n.in[0]);
                const float* pg = g.data();
                const auto& ids = *n.ids;
                for (size_t i = 0; i < ids.size(); ++i) {
                    for (int64_t j = 0; j < cols; ++j) {
                        gt[ids[i] * cols + j] += pg[int64_t(i) * cols + j];
                    }
                }
                break;
            }
            case Op::mean_all: {
                const Tensor& x = in_value(n, 0);
                const float w = g.data()[0] / float(x.numel());
                float* gx = ensure(n.in[0]);
                for (int64_t i = 0; i < x.numel(); ++i) gx[i] += w;
                break;
            }
        }
    }

    std::vector<Node> nodes_;
    std::vector<int32_t> params_;
};

inline std::vector<Tensor> backward(const GradTape& tape, GradTape::Var loss) {
    return tape.gradients(loss);
}

// ---------------------------------------------------------------------------
// Engines: the model forward pass is written once, generic over the engine.
// EvalEngine computes plain tensors; TapeEngine records the same kernels onto
// a GradTape. Both route through identical kernel code, so inference and
// training see bit-identical forward arithmetic.
// ---------------------------------------------------------------------------

struct EvalEngine {
    using V = Tensor;
    V constant(Tensor t) const { return t; }
    const Tensor& value(const V& v) const { return v; }
    V add(const V& a, const V& b) const { return unictrl::add(a, b); }
    V sub(const V& a, const V& b) const { return unictrl::sub(a, b); }
    V mul(const V& a, const V& b) const { return unictrl::mul(a, b); }
    V scale(const V& a, float s) const { return unictrl::scale(a, s); }
    V add_bias(const V& x, const V& b) const { return unictrl::add_bias(x, b); }
    V matmul(const V& a, const V& b) const { return unictrl::matmul(a, b); }
    V matmul_nt(const V& a, const V& b) const { return unictrl::matmul_nt(a, b); }
    V softmax_last(const V& x) const { return unictrl::softmax_last(x); }
    V silu(const V& x) const { return unictrl::silu(x); }
    V rmsnorm(const V& x, const V& g) const { return unictrl::rmsnorm(x, g); }
    V reshape(const V& x, Shape s) const { return unictrl::reshape(x, std::move(s)); }
    V permute(const V& x, const IndexMap& m, Shape s) const {
        return unictrl::permute_elements(x, m, std::move(s));
    }
    V gather_rows(const V& t, std::vector<int64_t> ids) const {
        return unictrl::gather_rows(t, ids);
    }
    V mean_all(const V& x) const { return unictrl::mean_all(x); }
};

struct TapeEngine {
    GradTape* tape;
    using V = GradTape::Var;
    V constant(Tensor t) const { return tape->constant(std::move(t)); }
    const Tensor& value(const V& v) const { return tape->value(v); }
    V add(const V& a, const V& b) const { return tape->add(a, b); }
    V sub(const V& a, const V& b) const { return tape->sub(a, b); }
    V mul(const V& a, const V& b) const { return tape->mul(a, b); }
    V scale(const V& a, float s) const { return tape->scale(a, s); }
    V add_bias(const V& x, const V& b) const { return tape->add_bias(x, b); }
    V matmul(const V& a, const V& b) const { return tape->matmul(a, b); }
    V matmul_nt(const V& a, const V& b) const { return tape->matmul_nt(a, b); }
    V softmax_last(const V& x) const { return tape->softmax_last(x); }
    V silu(const V& x) const { return tape->silu(x); }
    V rmsnorm(const V& x, const V& g) const { return tape->rmsnorm(x, g); }
    V reshape(const V& x, Shape s) const { return tape->reshape(x, std::move(s)); }
    V permute(const V& x, const IndexMap& m, Shape s) const {
        return tape->permute(x, m, std::move(s));
    }
    V gather_rows(const V& t, std::vector<int64_t> ids) const {
        return tape->gather_rows(t, std::move(ids));
    }
    V mean_all(const V& x) const { return tape->mean_all(x); }
};

}  // namespace unictrl

#endif
