#include "stpformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "stpformer/threading.hpp"

namespace stpformer {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
        if (e == 0) throw DimensionError("zero extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
        throw DimensionError("data size " + std::to_string(data_.size()) +
                             " does not fill shape " + shape_str(shape_));
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

namespace {

void need_rank(const Tensor& t, std::size_t r, const char* who) {
    if (t.rank() != r)
        throw DimensionError(std::string(who) + ": expected rank " + std::to_string(r) +
                             ", got shape " + shape_str(t.shape()));
}

std::vector<std::size_t> row_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

} // namespace

double& Tensor::at(std::size_t i) {
    need_rank(*this, 1, "at");
    return data_[i];
}
double& Tensor::at(std::size_t i, std::size_t j) {
    need_rank(*this, 2, "at");
    return data_[i * shape_[1] + j];
}
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
    need_rank(*this, 3, "at");
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    need_rank(*this, 4, "at");
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
}

namespace ops {

namespace {

// Odometer walk over `out_shape`, calling f(out_flat, a_flat, b_flat) where
// the a/b offsets honor stride-0 broadcast axes. Rank-generic but branch-free
// in the inner loop: the last axis is unrolled flat.
template <typename F>
void broadcast_walk(const Shape& out_shape, const Shape& a_shape, const Shape& b_shape, F&& f) {
    std::size_t rank = out_shape.size();
    auto a_st = row_strides(a_shape);
    auto b_st = row_strides(b_shape);
    std::vector<std::size_t> a_step(rank), b_step(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        a_step[i] = a_shape[i] == 1 ? 0 : a_st[i];
        b_step[i] = b_shape[i] == 1 ? 0 : b_st[i];
    }
    std::size_t total = shape_numel(out_shape);
    std::size_t last = rank - 1;
    std::vector<std::size_t> idx(rank, 0);
    std::size_t a_off = 0, b_off = 0, out = 0;
    while (out < total) {
        for (std::size_t j = 0; j < out_shape[last]; ++j)
            f(out + j, a_off + j * a_step[last], b_off + j * b_step[last]);
        out += out_shape[last];
        // carry
        for (std::size_t ax = last; ax-- > 0;) {
            a_off += a_step[ax];
            b_off += b_step[ax];
            if (++idx[ax] < out_shape[ax]) break;
            a_off -= a_step[ax] * out_shape[ax];
            b_off -= b_step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
        if (rank == 1) break;
    }
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* who) {
    if (a.rank() != b.rank())
        throw DimensionError(std::string(who) + ": rank mismatch between " +
                             shape_str(a.shape()) + " and " + shape_str(b.shape()));
    Shape out(a.rank());
    for (std::size_t i = 0; i < a.rank(); ++i) {
        std::size_t ea = a.shape()[i], eb = b.shape()[i];
        if (ea == eb) out[i] = ea;
        else if (ea == 1) out[i] = eb;
        else if (eb == 1) out[i] = ea;
        else
            throw DimensionError(std::string(who) + ": incompatible extents between " +
                                 shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    return out;
}

template <typename F>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* who, F&& f) {
    if (a.same_shape(b)) { // fast path
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        for (std::size_t i = 0, n = a.size(); i < n; ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    Shape os = broadcast_shape(a, b, who);
    Tensor out(os);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    broadcast_walk(os, a.shape(), b.shape(),
                   [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = f(pa[ia], pb[ib]); });
    return out;
}

template <typename F>
Tensor unary_op(const Tensor& x, F&& f) {
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t i = 0, n = x.size(); i < n; ++i) po[i] = f(px[i]);
    return out;
}

} // namespace

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: element count mismatch between " +
                             shape_str(x.shape()) + " and " + shape_str(shape));
    return Tensor(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
}

std::vector<std::size_t> inverse_axes(const std::vector<std::size_t>& axes) {
    std::vector<std::size_t> inv(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
    return inv;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    std::size_t rank = x.rank();
    if (axes.size() != rank)
        throw DimensionError("permute: axis list size " + std::to_string(axes.size()) +
                             " does not match shape " + shape_str(x.shape()));
    std::vector<bool> seen(rank, false);
    for (std::size_t a : axes) {
        if (a >= rank || seen[a])
            throw DimensionError("permute: invalid axis order for shape " + shape_str(x.shape()));
        seen[a] = true;
    }
    Shape os(rank);
    for (std::size_t i = 0; i < rank; ++i) os[i] = x.shape()[axes[i]];
    Tensor out(os);
    auto in_st = row_strides(x.shape());
    // stride of output axis i in the input buffer
    std::vector<std::size_t> st(rank);
    for (std::size_t i = 0; i < rank; ++i) st[i] = in_st[axes[i]];

    const double* px = x.data();
    double* po = out.data();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    std::size_t total = out.size();
    std::size_t last = rank - 1;
    for (std::size_t o = 0; o < total;) {
        for (std::size_t j = 0; j < os[last]; ++j) po[o + j] = px[src + j * st[last]];
        o += os[last];
        for (std::size_t ax = last; ax-- > 0;) {
            src += st[ax];
            if (++idx[ax] < os[ax]) break;
            src -= st[ax] * os[ax];
            idx[ax] = 0;
        }
        if (rank == 1) break;
    }
    return out;
}

Tensor transpose_last(const Tensor& x) {
    if (x.rank() < 2)
        throw DimensionError("transpose_last: need rank >= 2, got " + shape_str(x.shape()));
    std::vector<std::size_t> axes(x.rank());
    for (std::size_t i = 0; i < x.rank(); ++i) axes[i] = i;
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, axes);
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0)
        throw DimensionError("concat_last: rank mismatch between " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    for (std::size_t i = 0; i + 1 < a.rank(); ++i)
        if (a.shape()[i] != b.shape()[i])
            throw DimensionError("concat_last: leading extents differ between " +
                                 shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::size_t la = a.shape().back(), lb = b.shape().back();
    Shape os = a.shape();
    os.back() = la + lb;
    Tensor out(os);
    std::size_t rows = a.size() / la;
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(po + r * (la + lb), pa + r * la, la * sizeof(double));
        std::memcpy(po + r * (la + lb) + la, pb + r * lb, lb * sizeof(double));
    }
    return out;
}

std::pair<Tensor, Tensor> split_last(const Tensor& x, std::size_t n_first) {
    std::size_t l = x.shape().back();
    if (n_first == 0 || n_first >= l)
        throw DimensionError("split_last: split point " + std::to_string(n_first) +
                             " out of range for shape " + shape_str(x.shape()));
    Shape sa = x.shape(), sb = x.shape();
    sa.back() = n_first;
    sb.back() = l - n_first;
    Tensor a(sa), b(sb);
    std::size_t rows = x.size() / l;
    for (std::size_t r = 0; r < rows; ++r) {
        std::memcpy(a.data() + r * n_first, x.data() + r * l, n_first * sizeof(double));
        std::memcpy(b.data() + r * (l - n_first), x.data() + r * l + n_first,
                    (l - n_first) * sizeof(double));
    }
    return {std::move(a), std::move(b)};
}

Tensor take_rows(const Tensor& table, const std::vector<std::size_t>& idx) {
    need_rank(table, 2, "take_rows");
    std::size_t rows = table.shape()[0], d = table.shape()[1];
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= rows)
            throw InputError("take_rows: row " + std::to_string(idx[i]) +
                             " out of range for table " + shape_str(table.shape()));
        std::memcpy(out.data() + i * d, table.data() + idx[i] * d, d * sizeof(double));
    }
    return out;
}

Tensor broadcast_to(const Tensor& x, const Shape& target) {
    if (x.rank() != target.size())
        throw DimensionError("broadcast_to: rank mismatch between " + shape_str(x.shape()) +
                             " and " + shape_str(target));
    for (std::size_t i = 0; i < target.size(); ++i)
        if (x.shape()[i] != target[i] && x.shape()[i] != 1)
            throw DimensionError("broadcast_to: cannot expand " + shape_str(x.shape()) +
                                 " to " + shape_str(target));
    if (x.shape() == target) return x;
    Tensor out(target);
    const double* px = x.data();
    double* po = out.data();
    broadcast_walk(target, x.shape(), x.shape(),
                   [&](std::size_t o, std::size_t ia, std::size_t) { po[o] = px[ia]; });
    return out;
}

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.rank() != target.size())
        throw DimensionError("reduce_to_shape: rank mismatch between " + shape_str(g.shape()) +
                             " and " + shape_str(target));
    for (std::size_t i = 0; i < target.size(); ++i)
        if (g.shape()[i] != target[i] && target[i] != 1)
            throw DimensionError("reduce_to_shape: cannot reduce " + shape_str(g.shape()) +
                                 " to " + shape_str(target));
    if (g.shape() == target) return g;
    Tensor out(target);
    const double* pg = g.data();
    double* po = out.data();
    broadcast_walk(g.shape(), target, target,
                   [&](std::size_t o, std::size_t it, std::size_t) { po[it] += pg[o]; });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; });
}
Tensor scale(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x * s; });
}
Tensor relu(const Tensor& x) {
    return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; });
}
Tensor sigmoid(const Tensor& x) {
    return unary_op(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}
Tensor tanh_t(const Tensor& x) {
    return unary_op(x, [](double v) { return std::tanh(v); });
}
Tensor abs_t(const Tensor& x) {
    return unary_op(x, [](double v) { return std::fabs(v); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || a.rank() != b.rank())
        throw DimensionError("matmul: rank mismatch between " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    std::size_t rank = a.rank();
    std::size_t p = a.shape()[rank - 2], q = a.shape()[rank - 1];
    std::size_t qb = b.shape()[rank - 2], r = b.shape()[rank - 1];
    if (q != qb)
        throw DimensionError("matmul: inner extents differ between " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    Shape batch(rank - 2);
    for (std::size_t i = 0; i + 2 < rank; ++i) {
        std::size_t ea = a.shape()[i], eb = b.shape()[i];
        if (ea != eb && ea != 1 && eb != 1)
            throw DimensionError("matmul: batch extents differ between " + shape_str(a.shape()) +
                                 " and " + shape_str(b.shape()));
        batch[i] = ea == 1 ? eb : ea;
    }
    Shape os = batch;
    os.push_back(p);
    os.push_back(r);
    Tensor out(os);

    std::size_t n_batch = shape_numel(batch.empty() ? Shape{1} : batch);
    if (batch.empty()) n_batch = 1;
    // flat batch -> offset into a/b respecting broadcast extents
    std::vector<std::size_t> a_bst(batch.size()), b_bst(batch.size());
    {
        std::size_t sa = p * q, sb = q * r;
        for (std::size_t i = batch.size(); i-- > 0;) {
            a_bst[i] = a.shape()[i] == 1 ? 0 : sa;
            b_bst[i] = b.shape()[i] == 1 ? 0 : sb;
            sa *= a.shape()[i] == 1 ? 1 : a.shape()[i];
            sb *= b.shape()[i] == 1 ? 1 : b.shape()[i];
        }
    }
    auto batch_offsets = [&](std::size_t flat, std::size_t& ao, std::size_t& bo) {
        ao = bo = 0;
        for (std::size_t i = batch.size(); i-- > 0;) {
            std::size_t c = flat % batch[i];
            flat /= batch[i];
            ao += c * a_bst[i];
            bo += c * b_bst[i];
        }
    };

    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::size_t rows = n_batch * p;
    std::size_t flops = rows * q * r;
    parallel_for(rows, flops < 262144 ? rows + 1 : 1024 / (q * r) + 1,
                 [&](std::size_t lo, std::size_t hi) {
                     for (std::size_t row = lo; row < hi; ++row) {
                         std::size_t bi = row / p, i = row % p;
                         std::size_t ao, bo;
                         batch_offsets(bi, ao, bo);
                         const double* arow = pa + ao + i * q;
                         double* orow = po + (bi * p + i) * r;
                         for (std::size_t k = 0; k < q; ++k) {
                             double av = arow[k];
                             const double* brow = pb + bo + k * r;
                             for (std::size_t j = 0; j < r; ++j) orow[j] += av * brow[j];
                         }
                     }
                 });
    return out;
}

Tensor softmax_last(const Tensor& x) {
    if (x.rank() == 0) throw DimensionError("softmax_last: rank 0");
    std::size_t d = x.shape().back();
    std::size_t rows = x.size() / d;
    Tensor out(x.shape());
    const double* px = x.data();
    double* po = out.data();
    for (std::size_t rw = 0; rw < rows; ++rw) {
        const double* in = px + rw * d;
        double* o = po + rw * d;
        double mx = in[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        double inv = 1.0 / sum;
        for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
    }
    return out;
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw DimensionError("mean_axis: axis " + std::to_string(axis) +
                             " out of range for " + shape_str(x.shape()));
    Shape os;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) os.push_back(x.shape()[i]);
    if (os.empty()) os.push_back(1);
    Tensor out(os);
    std::size_t n = x.shape()[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
    std::size_t outer = x.size() / (n * inner);
    const double* px = x.data();
    double* po = out.data();
    double inv = 1.0 / static_cast<double>(n);
    for (std::size_t ou = 0; ou < outer; ++ou)
        for (std::size_t k = 0; k < n; ++k) {
            const double* src = px + (ou * n + k) * inner;
            double* dst = po + ou * inner;
            for (std::size_t j = 0; j < inner; ++j) dst[j] += src[j] * inv;
        }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    return Tensor({1}, {s});
}

Tensor mean_all(const Tensor& x) {
    Tensor s = sum_all(x);
    s[0] /= static_cast<double>(x.size());
    return s;
}

Tensor channel_project(const Tensor& x, const Tensor& w, const Tensor& b) {
    need_rank(x, 3, "channel_project");
    need_rank(w, 2, "channel_project");
    need_rank(b, 1, "channel_project");
    std::size_t c_in = x.shape()[0];
    std::size_t c_out = w.shape()[0];
    if (w.shape()[1] != c_in || b.shape()[0] != c_out)
        throw DimensionError("channel_project: channel mismatch between input " +
                             shape_str(x.shape()) + ", kernel " + shape_str(w.shape()) +
                             " and bias " + shape_str(b.shape()));
    std::size_t spatial = x.shape()[1] * x.shape()[2];
    Tensor out({c_out, x.shape()[1], x.shape()[2]});
    for (std::size_t co = 0; co < c_out; ++co) {
        double* dst = out.data() + co * spatial;
        for (std::size_t j = 0; j < spatial; ++j) dst[j] = b[co];
        for (std::size_t ci = 0; ci < c_in; ++ci) {
            double wv = w[co * c_in + ci];
            const double* src = x.data() + ci * spatial;
            for (std::size_t j = 0; j < spatial; ++j) dst[j] += wv * src[j];
        }
    }
    return out;
}

bool all_finite(const Tensor& x) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("max_abs_diff: shape mismatch between " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

} // namespace ops
} // namespace stpformer
