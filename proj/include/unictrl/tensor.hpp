#ifndef UNICTRL_TENSOR_HPP
#define UNICTRL_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "unictrl/errors.hpp"
#include "unictrl/rng.hpp"
#include "unictrl/threading.hpp"

namespace unictrl {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major float32 tensor. Storage is shared between copies and treated
// as immutable once a tensor has been handed out; kernels always allocate
// fresh storage for their results. All reductions in this module accumulate in
// ascending index order so results do not depend on the thread count.
class Tensor {
  public:
    Tensor() : data_(std::make_shared<std::vector<float>>()) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)) {
        validate_shape();
        data_ = std::make_shared<std::vector<float>>(size_t(shape_numel(shape_)), 0.0f);
    }

    Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
        validate_shape();
        if (int64_t(values.size()) != shape_numel(shape_)) {
            fail_shape("tensor " + shape_str(shape_) + " expects " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(values.size()));
        }
        data_ = std::make_shared<std::vector<float>>(std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, float v) {
        Tensor t(std::move(shape));
        for (auto& x : *t.data_) x = v;
        return t;
    }

    static Tensor scalar(float v) { return Tensor({}, {v}); }

    const Shape& shape() const { return shape_; }
    int rank() const { return int(shape_.size()); }
    int64_t dim(int i) const { return shape_[size_t(i)]; }
    int64_t numel() const { return int64_t(data_->size()); }

    const float* data() const { return data_->data(); }
    float* mutable_data() { return data_->data(); }

    float at(std::initializer_list<int64_t> idx) const {
        int64_t off = 0;
        size_t i = 0;
        for (int64_t v : idx) {
            off = off * shape_[i] + v;
            ++i;
        }
        return (*data_)[size_t(off)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : *data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    // A same-shape tensor with freshly owned storage holding the same values.
    Tensor clone() const {
        return Tensor(shape_, *data_);
    }

    bool bit_equal(const Tensor& o) const {
        if (shape_ != o.shape_) return false;
        const float* a = data();
        const float* b = o.data();
        for (int64_t i = 0; i < numel(); ++i) {
            if (!(a[i] == b[i]) && !(std::isnan(a[i]) && std::isnan(b[i]))) return false;
        }
        return true;
    }

  private:
    void validate_shape() const {
        for (int64_t d : shape_) {
            if (d <= 0) fail_shape("tensor extents must be positive, got " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::shared_ptr<std::vector<float>> data_;
};

inline void check_finite(const Tensor& t, const char* what) {
    if (!t.all_finite()) {
        fail(ErrorCategory::numeric, std::string(what) + " produced a non-finite value");
    }
}

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

// ---------------------------------------------------------------------------
// Random fills
// ---------------------------------------------------------------------------

// I.i.d. standard normal fill; advances the stream by numel counter slots.
inline Tensor gaussian(Shape shape, RngStream& stream) {
    Tensor t(std::move(shape));
    float* out = t.mutable_data();
    const RngStream snapshot = stream;
    parallel_for(t.numel(), [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i) out[i] = normal_at(snapshot, uint64_t(i));
    });
    stream.counter += uint64_t(t.numel());
    return t;
}

// ---------------------------------------------------------------------------
// Elementwise kernels
// ---------------------------------------------------------------------------

namespace kernel_detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        fail_shape(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
    }
}

}  // namespace kernel_detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    kernel_detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    check_finite(out, "add");
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    kernel_detail::require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    check_finite(out, "sub");
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    kernel_detail::require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    check_finite(out, "mul");
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out(a.shape());
    const float* pa = a.data();
    float* po = out.mutable_data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * s;
    check_finite(out, "scale");
    return out;
}

// x[..., j] + b[j], broadcast over all leading axes.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() < 1 || b.rank() != 1 || x.dim(x.rank() - 1) != b.dim(0)) {
        fail_shape("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                   shape_str(b.shape()));
    }
    Tensor out(x.shape());
    const int64_t n = b.dim(0);
    const int64_t rows = x.numel() / n;
    const float* px = x.data();
    const float* pb = b.data();
    float* po = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = px + r * n;
        float* orow = po + r * n;
        for (int64_t j = 0; j < n; ++j) orow[j] = xr[j] + pb[j];
    }
    check_finite(out, "add_bias");
    return out;
}

// ---------------------------------------------------------------------------
// Matrix products, batched over leading axes.
//
// a is [*, M, K]. b may be rank 2 ([K, N] etc., shared across the batch), have
// leading extents equal to a's, or have leading extents that are all 1
// (shared). Accumulation over K runs in ascending order.
// ---------------------------------------------------------------------------

namespace kernel_detail {

// Leading axes of `a` define the batch. `b` may be rank 2 (one matrix shared
// by every batch element) or have the same rank with each leading extent
// equal to a's or 1 (shared along that axis).
struct BatchLayout {
    int64_t batch = 1;
    int64_t a_rows = 0, a_cols = 0;
    int64_t b_rows = 0, b_cols = 0;
    std::vector<int64_t> a_lead;       // leading extents of a
    std::vector<int64_t> b_mat_stride; // per leading axis, in units of b matrices
    Shape out_shape;

    int64_t b_matrix_index(int64_t bi) const {
        int64_t off = 0;
        for (size_t d = a_lead.size(); d-- > 0;) {
            const int64_t coord = bi % a_lead[d];
            bi /= a_lead[d];
            off += coord * b_mat_stride[d];
        }
        return off;
    }
};

inline BatchLayout batch_layout(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rank() < 2 || b.rank() < 2) {
        fail_shape(std::string(op) + ": operands must have rank >= 2, got " +
                   shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    BatchLayout l;
    l.a_rows = a.dim(a.rank() - 2);
    l.a_cols = a.dim(a.rank() - 1);
    l.b_rows = b.dim(b.rank() - 2);
    l.b_cols = b.dim(b.rank() - 1);
    for (int i = 0; i < a.rank() - 2; ++i) {
        l.a_lead.push_back(a.dim(i));
        l.batch *= a.dim(i);
    }
    l.b_mat_stride.assign(l.a_lead.size(), 0);
    if (b.rank() == a.rank()) {
        int64_t stride = 1;
        for (int i = b.rank() - 3; i >= 0; --i) {
            if (b.dim(i) == a.dim(i)) {
                l.b_mat_stride[size_t(i)] = stride;
                stride *= b.dim(i);
            } else if (b.dim(i) == 1) {
                l.b_mat_stride[size_t(i)] = 0;
            } else {
                fail_shape(std::string(op) + ": batch extents of " + shape_str(b.shape()) +
                           " match neither " + shape_str(a.shape()) + " nor a broadcast");
            }
        }
    } else if (b.rank() != 2) {
        fail_shape(std::string(op) + ": rank of " + shape_str(b.shape()) +
                   " is incompatible with " + shape_str(a.shape()));
    }
    l.out_shape.assign(a.shape().begin(), a.shape().end() - 2);
    return l;
}

}  // namespace kernel_detail

// C = A . B with A [*, M, K], B [K, N].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    auto l = kernel_detail::batch_layout(a, b, "matmul");
    if (l.a_cols != l.b_rows) {
        fail_shape("matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
    }
    const int64_t M = l.a_rows, K = l.a_cols, N = l.b_cols;
    l.out_shape.push_back(M);
    l.out_shape.push_back(N);
    Tensor out(l.out_shape);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.mutable_data();
    parallel_for(l.batch * M, [&](int64_t begin, int64_t end) {
        for (int64_t r = begin; r < end; ++r) {
            const int64_t bi = r / M;
            const int64_t i = r % M;
            const float* arow = pa + bi * M * K + i * K;
            const float* bmat = pb + l.b_matrix_index(bi) * K * N;
            float* orow = po + r * N;
            for (int64_t j = 0; j < N; ++j) orow[j] = 0.0f;
            for (int64_t k = 0; k < K; ++k) {
                const float av = arow[k];
                const float* brow = bmat + k * N;
                for (int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    });
    check_finite(out, "matmul");
    return out;
}

// C = A . B^T with A [*, M, K], B [*, N, K]. Each B matrix is transposed once
// so the accumulation runs k-ascending over contiguous rows, same as matmul.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    auto l = kernel_detail::batch_layout(a, b, "matmul_nt");
    if (l.a_cols != l.b_cols) {
        fail_shape("matmul_nt: inner extents disagree, " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
    }
    const int64_t M = l.a_rows, K = l.a_cols, N = l.b_rows;
    l.out_shape.push_back(M);
    l.out_shape.push_back(N);
    Tensor out(l.out_shape);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.mutable_data();

    const int64_t b_mats = b.numel() / (N * K);
    std::vector<float> bt(size_t(b.numel()));
    for (int64_t m = 0; m < b_mats; ++m) {
        const float* src = pb + m * N * K;
        float* dst = bt.data() + m * N * K;
        for (int64_t n = 0; n < N; ++n) {
            for (int64_t k = 0; k < K; ++k) dst[k * N + n] = src[n * K + k];
        }
    }

    parallel_for(l.batch * M, [&](int64_t begin, int64_t end) {
        for (int64_t r = begin; r < end; ++r) {
            const int64_t bi = r / M;
            const int64_t i = r % M;
            const float* arow = pa + bi * M * K + i * K;
            const float* bmat = bt.data() + l.b_matrix_index(bi) * N * K;
            float* orow = po + r * N;
            for (int64_t j = 0; j < N; ++j) orow[j] = 0.0f;
            for (int64_t k = 0; k < K; ++k) {
                const float av = arow[k];
                const float* brow = bmat + k * N;
                for (int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    });
    check_finite(out, "matmul_nt");
    return out;
}

// C = A^T . B with A [*, K, M], B [*, K, N].
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    auto l = kernel_detail::batch_layout(a, b, "matmul_tn");
    if (l.a_rows != l.b_rows) {
        fail_shape("matmul_tn: inner extents disagree, " + shape_str(a.shape()) + " x " +
                   shape_str(b.shape()));
    }
    const int64_t K = l.a_rows, M = l.a_cols, N = l.b_cols;
    l.out_shape.push_back(M);
    l.out_shape.push_back(N);
    Tensor out(l.out_shape);
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.mutable_data();
    parallel_for(l.batch * M, [&](int64_t begin, int64_t end) {
        for (int64_t r = begin; r < end; ++r) {
            const int64_t bi = r / M;
            const int64_t i = r % M;
            const float* amat = pa + bi * K * M;
            const float* bmat = pb + l.b_matrix_index(bi) * K * N;
            float* orow = po + r * N;
            for (int64_t j = 0; j < N; ++j) orow[j] = 0.0f;
            for (int64_t k = 0; k < K; ++k) {
                const float av = amat[k * M + i];
                const float* brow = bmat + k * N;
                for (int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    });
    check_finite(out, "matmul_tn");
    return out;
}

// ---------------------------------------------------------------------------
// Softmax, nonlinearities, normalization
// ---------------------------------------------------------------------------

// Numerically stabilized softmax along `axis`.
inline Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank()) {
        fail_shape("softmax: axis " + std::to_string(axis) + " invalid for " +
                   shape_str(x.shape()));
    }
    const int64_t n = x.dim(axis);
    int64_t inner = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const int64_t outer = x.numel() / (n * inner);
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.mutable_data();
    parallel_for(outer * inner, [&](int64_t begin, int64_t end) {
        for (int64_t s = begin; s < end; ++s) {
            const int64_t o = s / inner;
            const int64_t in = s % inner;
            const int64_t base = o * n * inner + in;
            float m = px[base];
            for (int64_t k = 1; k < n; ++k) m = std::max(m, px[base + k * inner]);
            float sum = 0.0f;
            for (int64_t k = 0; k < n; ++k) {
                const float e = std::exp(px[base + k * inner] - m);
                po[base + k * inner] = e;
                sum += e;
            }
            const float inv = 1.0f / sum;
            for (int64_t k = 0; k < n; ++k) po[base + k * inner] *= inv;
        }
    });
    check_finite(out, "softmax");
    return out;
}

inline Tensor softmax_last(const Tensor& x) { return softmax(x, x.rank() - 1); }

inline Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    const float* px = x.data();
    float* po = out.mutable_data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float v = px[i];
        po[i] = v * sigmoid(v);
    }
    check_finite(out, "silu");
    return out;
}

constexpr float kRmsNormEps = 1e-6f;

// y = x / sqrt(mean(x^2) + eps) * gain over the last axis.
inline Tensor rmsnorm(const Tensor& x, const Tensor& gain) {
    if (x.rank() < 1 || gain.rank() != 1 || x.dim(x.rank() - 1) != gain.dim(0)) {
        fail_shape("rmsnorm: incompatible shapes " + shape_str(x.shape()) + " and " +
                   shape_str(gain.shape()));
    }
    const int64_t n = gain.dim(0);
    const int64_t rows = x.numel() / n;
    Tensor out(x.shape());
    const float* px = x.data();
    const float* pg = gain.data();
    float* po = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = px + r * n;
        float* orow = po + r * n;
        double ss = 0.0;
        for (int64_t j = 0; j < n; ++j) ss += double(xr[j]) * double(xr[j]);
        const float inv = 1.0f / std::sqrt(float(ss / double(n)) + kRmsNormEps);
        for (int64_t j = 0; j < n; ++j) orow[j] = xr[j] * inv * pg[j];
    }
    check_finite(out, "rmsnorm");
    return out;
}

// ---------------------------------------------------------------------------
// Data movement
// ---------------------------------------------------------------------------

// out[i] = x[(*map)[i]]. Entries must lie in [0, x.numel()); the map may be a
// permutation (reshuffle) or a strict gather (slice). Gradients scatter-add
// through the same map.
using IndexMap = std::shared_ptr<const std::vector<int64_t>>;

inline Tensor permute_elements(const Tensor& x, const IndexMap& map, Shape out_shape) {
    if (int64_t(map->size()) != shape_numel(out_shape)) {
        fail_shape("permute_elements: map size does not match output shape " +
                   shape_str(out_shape));
    }
    Tensor out(std::move(out_shape));
    const float* px = x.data();
    float* po = out.mutable_data();
    const int64_t* m = map->data();
    for (int64_t i = 0; i < out.numel(); ++i) po[i] = px[m[i]];
    return out;
}

inline IndexMap invert_index_map(const IndexMap& map) {
    auto inv = std::make_shared<std::vector<int64_t>>(map->size());
    for (int64_t i = 0; i < int64_t(map->size()); ++i) (*inv)[size_t((*map)[size_t(i)])] = i;
    return inv;
}

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        fail_shape("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return Tensor(std::move(shape), std::vector<float>(x.data(), x.data() + x.numel()));
}

// out[i, :] = table[ids[i], :]
inline Tensor gather_rows(const Tensor& table, const std::vector<int64_t>& ids) {
    if (table.rank() != 2) fail_shape("gather_rows: table must be rank 2");
    if (ids.empty()) fail_shape("gather_rows: empty id list");
    const int64_t n = table.dim(1);
    Tensor out({int64_t(ids.size()), n});
    float* po = out.mutable_data();
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.dim(0)) {
            fail_shape("gather_rows: id out of range");
        }
        const float* row = table.data() + ids[i] * n;
        for (int64_t j = 0; j < n; ++j) po[i * size_t(n) + size_t(j)] = row[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

// Scalar mean over all elements, accumulated in ascending index order.
inline Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    const float* px = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) s += double(px[i]);
    Tensor out = Tensor::scalar(float(s / double(x.numel())));
    check_finite(out, "mean_all");
    return out;
}

// Sums over all leading axes, leaving the last axis: out[j] = sum_r x[r, j].
inline Tensor sum_to_last_axis(const Tensor& x) {
    if (x.rank() < 1) fail_shape("sum_to_last_axis: rank must be >= 1");
    const int64_t n = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / n;
    Tensor out({n});
    const float* px = x.data();
    float* po = out.mutable_data();
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < n; ++j) po[j] += px[r * n + j];
    }
    check_finite(out, "sum_to_last_axis");
    return out;
}

}  // namespace unictrl

#endif
