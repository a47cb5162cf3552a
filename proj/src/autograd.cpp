#include "stpformer/autograd.hpp"

#include <cmath>

namespace stpformer {

DualTensor& ParameterStore::add(const std::string& name, Tensor init) {
    if (items_.count(name))
        throw StateError("parameter '" + name + "' already registered");
    auto [it, ok] = items_.emplace(name, DualTensor(std::move(init)));
    (void)ok;
    return it->second;
}

DualTensor& ParameterStore::at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
}

const DualTensor& ParameterStore::at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParameterStore::total_coords() const {
    std::size_t n = 0;
    for (auto& [k, v] : items_) n += v.value.size();
    return n;
}

void ParameterStore::zero_grads() {
    for (auto& [k, v] : items_) v.zero_grad();
}

void ParameterStore::fill_values(double x) {
    for (auto& [k, v] : items_)
        for (std::size_t i = 0; i < v.value.size(); ++i) v.value[i] = x;
}

// ---------------------------------------------------------------------------

const Tape::Node& Tape::node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw StateError("invalid tape handle");
    return nodes_[v.id];
}

const Tensor& Tape::val(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.has_grad) return Tensor(n.value.shape());
    return n.grad;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad && grad_enabled_;
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::accum(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (!g.same_shape(n.value))
        throw DimensionError("gradient shape " + shape_str(g.shape()) +
                             " does not match value shape " + shape_str(n.value.shape()));
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        double* d = n.grad.data();
        const double* s = g.data();
        for (std::size_t i = 0, m = g.size(); i < m; ++i) d[i] += s[i];
    }
}

Var Tape::constant(Tensor v) { return push(std::move(v), false, nullptr); }

Var Tape::param(DualTensor& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var{it->second};
    Var v = push(p.value, true, nullptr);
    nodes_[v.id].sink = &p;
    param_ids_.emplace(&p, v.id);
    return v;
}

void Tape::backward(Var root) {
    if (!grad_enabled_) throw StateError("backward on a value-only tape");
    if (nodes_.empty() || !root.valid() || static_cast<std::size_t>(root.id) >= nodes_.size())
        throw StateError("backward before any forward computation");
    if (ran_backward_) throw StateError("backward already ran on this tape");
    ran_backward_ = true;
    Node& r = nodes_[root.id];
    if (r.value.size() != 1)
        throw DimensionError("backward root must hold one element, got shape " +
                             shape_str(r.value.shape()));
    if (!r.needs_grad) return; // nothing upstream depends on parameters
    r.grad = Tensor::ones(r.value.shape());
    r.has_grad = true;
    for (std::int32_t i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (!n.needs_grad || !n.has_grad) continue;
        if (n.back) n.back(*this, n.grad);
        if (n.sink) {
            double* d = n.sink->grad.data();
            const double* s = n.grad.data();
            for (std::size_t j = 0, m = n.grad.size(); j < m; ++j) d[j] += s[j];
        }
    }
}

// --- structure -------------------------------------------------------------

Var Tape::reshape(Var x, Shape shape) {
    Tensor out = ops::reshape(val(x), shape);
    Shape xs = val(x).shape();
    return push(std::move(out), needs(x), [x, xs](Tape& t, const Tensor& g) {
        t.accum(x, ops::reshape(g, xs));
    });
}

Var Tape::permute(Var x, std::vector<std::size_t> axes) {
    Tensor out = ops::permute(val(x), axes);
    return push(std::move(out), needs(x), [x, axes](Tape& t, const Tensor& g) {
        t.accum(x, ops::permute(g, ops::inverse_axes(axes)));
    });
}

Var Tape::transpose_last(Var x) {
    std::vector<std::size_t> axes(val(x).rank());
    for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
    if (axes.size() < 2)
        throw DimensionError("transpose_last: need rank >= 2, got " + shape_str(val(x).shape()));
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, std::move(axes));
}

Var Tape::concat_last(Var a, Var b) {
    Tensor out = ops::concat_last(val(a), val(b));
    std::size_t la = val(a).shape().back();
    return push(std::move(out), needs(a) || needs(b), [a, b, la](Tape& t, const Tensor& g) {
        auto [ga, gb] = ops::split_last(g, la);
        t.accum(a, ga);
        t.accum(b, gb);
    });
}

Var Tape::broadcast_to(Var x, Shape target) {
    Tensor out = ops::broadcast_to(val(x), target);
    Shape xs = val(x).shape();
    return push(std::move(out), needs(x), [x, xs](Tape& t, const Tensor& g) {
        t.accum(x, ops::reduce_to_shape(g, xs));
    });
}

Var Tape::lookup_rows(Var table, std::vector<std::size_t> idx) {
    Tensor out = ops::take_rows(val(table), idx);
    Shape ts = val(table).shape();
    return push(std::move(out), needs(table), [table, ts, idx](Tape& t, const Tensor& g) {
        Tensor gt(ts);
        std::size_t d = ts[1];
        for (std::size_t i = 0; i < idx.size(); ++i) {
            double* dst = gt.data() + idx[i] * d;
            const double* src = g.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        t.accum(table, gt);
    });
}

// --- elementwise -------------------------------------------------------------

Var Tape::add(Var a, Var b) {
    Tensor out = ops::add(val(a), val(b));
    Shape as = val(a).shape(), bs = val(b).shape();
    return push(std::move(out), needs(a) || needs(b), [a, b, as, bs](Tape& t, const Tensor& g) {
        if (t.needs(a)) t.accum(a, ops::reduce_to_shape(g, as));
        if (t.needs(b)) t.accum(b, ops::reduce_to_shape(g, bs));
    });
}

Var Tape::sub(Var a, Var b) {
    Tensor out = ops::sub(val(a), val(b));
    Shape as = val(a).shape(), bs = val(b).shape();
    return push(std::move(out), needs(a) || needs(b), [a, b, as, bs](Tape& t, const Tensor& g) {
        if (t.needs(a)) t.accum(a, ops::reduce_to_shape(g, as));
        if (t.needs(b)) t.accum(b, ops::reduce_to_shape(ops::scale(g, -1.0), bs));
    });
}

Var Tape::mul(Var a, Var b) {
    Tensor out = ops::mul(val(a), val(b));
    Shape as = val(a).shape(), bs = val(b).shape();
    return push(std::move(out), needs(a) || needs(b), [a, b, as, bs](Tape& t, const Tensor& g) {
        if (t.needs(a)) t.accum(a, ops::reduce_to_shape(ops::mul(g, t.val(b)), as));
        if (t.needs(b)) t.accum(b, ops::reduce_to_shape(ops::mul(g, t.val(a)), bs));
    });
}

Var Tape::scale(Var x, double s) {
    Tensor out = ops::scale(val(x), s);
    return push(std::move(out), needs(x), [x, s](Tape& t, const Tensor& g) {
        t.accum(x, ops::scale(g, s));
    });
}

Var Tape::relu(Var x) {
    Tensor out = ops::relu(val(x));
    return push(std::move(out), needs(x), [x](Tape& t, const Tensor& g) {
        const Tensor& v = t.val(x);
        Tensor gx(v.shape());
        for (std::size_t i = 0; i < v.size(); ++i) gx[i] = v[i] > 0.0 ? g[i] : 0.0;
        t.accum(x, gx);
    });
}

Var Tape::sigmoid(Var x) {
    Tensor out = ops::sigmoid(val(x));
    return push(std::move(out), needs(x), [x, id = nodes_.size()](Tape& t, const Tensor& g) {
        const Tensor& y = t.nodes_[id].value;
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
        t.accum(x, gx);
    });
}

Var Tape::tanh_v(Var x) {
    Tensor out = ops::tanh_t(val(x));
    return push(std::move(out), needs(x), [x, id = nodes_.size()](Tape& t, const Tensor& g) {
        const Tensor& y = t.nodes_[id].value;
        Tensor gx(y.shape());
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
        t.accum(x, gx);
    });
}

Var Tape::abs_v(Var x) {
    Tensor out = ops::abs_t(val(x));
    return push(std::move(out), needs(x), [x](Tape& t, const Tensor& g) {
        const Tensor& v = t.val(x);
        Tensor gx(v.shape());
        for (std::size_t i = 0; i < v.size(); ++i)
            gx[i] = v[i] > 0.0 ? g[i] : (v[i] < 0.0 ? -g[i] : 0.0);
        t.accum(x, gx);
    });
}

Var Tape::huber(Var x, double delta) {
    if (delta <= 0.0) throw InputError("huber: delta must be positive");
    const Tensor& v = val(x);
    Tensor out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double a = std::fabs(v[i]);
        out[i] = a <= delta ? 0.5 * v[i] * v[i] : delta * (a - 0.5 * delta);
    }
    return push(std::move(out), needs(x), [x, delta](Tape& t, const Tensor& g) {
        const Tensor& v = t.val(x);
        Tensor gx(v.shape());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double d = v[i] > delta ? delta : (v[i] < -delta ? -delta : v[i]);
            gx[i] = g[i] * d;
        }
        t.accum(x, gx);
    });
}

// --- contractions / reductions ----------------------------------------------

Var Tape::matmul(Var a, Var b) {
    Tensor out = ops::matmul(val(a), val(b));
    Shape as = val(a).shape(), bs = val(b).shape();
    return push(std::move(out), needs(a) || needs(b), [a, b, as, bs](Tape& t, const Tensor& g) {
        if (t.needs(a))
            t.accum(a, ops::reduce_to_shape(ops::matmul(g, ops::transpose_last(t.val(b))), as));
        if (t.needs(b))
            t.accum(b, ops::reduce_to_shape(ops::matmul(ops::transpose_last(t.val(a)), g), bs));
    });
}

Var Tape::softmax_last(Var x) {
    Tensor out = ops::softmax_last(val(x));
    return push(std::move(out), needs(x), [x, id = nodes_.size()](Tape& t, const Tensor& g) {
        const Tensor& y = t.nodes_[id].value;
        std::size_t d = y.shape().back();
        std::size_t rows = y.size() / d;
        Tensor gx(y.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * d;
            const double* gr = g.data() + r * d;
            double* o = gx.data() + r * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
            for (std::size_t j = 0; j < d; ++j) o[j] = yr[j] * (gr[j] - dot);
        }
        t.accum(x, gx);
    });
}

Var Tape::mean_axis(Var x, std::size_t axis) {
    Tensor out = ops::mean_axis(val(x), axis);
    Shape xs = val(x).shape();
    return push(std::move(out), needs(x), [x, xs, axis](Tape& t, const Tensor& g) {
        Shape keep = xs;
        keep[axis] = 1;
        Tensor gk = ops::reshape(g, keep);
        Tensor gx = ops::broadcast_to(gk, xs);
        t.accum(x, ops::scale(gx, 1.0 / static_cast<double>(xs[axis])));
    });
}

Var Tape::sum_all(Var x) {
    Tensor out = ops::sum_all(val(x));
    Shape xs = val(x).shape();
    return push(std::move(out), needs(x), [x, xs](Tape& t, const Tensor& g) {
        t.accum(x, Tensor::full(xs, g[0]));
    });
}

Var Tape::mean_all(Var x) {
    Tensor out = ops::mean_all(val(x));
    Shape xs = val(x).shape();
    double inv = 1.0 / static_cast<double>(shape_numel(xs));
    return push(std::move(out), needs(x), [x, xs, inv](Tape& t, const Tensor& g) {
        t.accum(x, Tensor::full(xs, g[0] * inv));
    });
}

// --- fused blocks -------------------------------------------------------------

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    const Tensor& v = val(x);
    if (v.rank() == 0) throw DimensionError("layer_norm: rank 0 input");
    std::size_t d = v.shape().back();
    const Tensor& gn = val(gain);
    const Tensor& bs = val(bias);
    if (gn.rank() != 1 || gn.shape()[0] != d || bs.rank() != 1 || bs.shape()[0] != d)
        throw DimensionError("layer_norm: gain " + shape_str(gn.shape()) + " / bias " +
                             shape_str(bs.shape()) + " do not match feature extent of " +
                             shape_str(v.shape()));
    std::size_t rows = v.size() / d;
    auto xhat = std::make_shared<Tensor>(v.shape());
    auto inv = std::make_shared<std::vector<double>>(rows);
    Tensor out(v.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = v.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double c = in[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double iv = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = iv;
        double* xh = xhat->data() + r * d;
        double* o = out.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (in[j] - mu) * iv;
            o[j] = xh[j] * gn[j] + bs[j];
        }
    }
    bool ng = needs(x) || needs(gain) || needs(bias);
    return push(std::move(out), ng, [x, gain, bias, xhat, inv, d](Tape& t, const Tensor& g) {
        std::size_t rows = g.size() / d;
        const Tensor& gn = t.val(gain);
        Tensor dgain({d}), dbias({d});
        Tensor dx(t.val(x).shape());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * d;
            const double* xh = xhat->data() + r * d;
            double* dxr = dx.data() + r * d;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double gh = gr[j] * gn[j];
                m1 += gh;
                m2 += gh * xh[j];
                dgain[j] += gr[j] * xh[j];
                dbias[j] += gr[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            double iv = (*inv)[r];
            for (std::size_t j = 0; j < d; ++j)
                dxr[j] = iv * (gr[j] * gn[j] - m1 - xh[j] * m2);
        }
        t.accum(x, dx);
        t.accum(gain, dgain);
        t.accum(bias, dbias);
    });
}

namespace {

struct LstmSave {
    Tensor gi, gf, gc, go; // gate activations per (b, t, h)
    Tensor c, tanh_c;
};

} // namespace

Var Tape::lstm_scan(Var x, Var w_ih, Var w_hh, Var bias) {
    const Tensor& xv = val(x);
    const Tensor& wi = val(w_ih);
    const Tensor& wh = val(w_hh);
    const Tensor& bv = val(bias);
    if (xv.rank() != 3) throw DimensionError("lstm_scan: input must be (batch, steps, features), got " +
                                             shape_str(xv.shape()));
    std::size_t B = xv.shape()[0], T = xv.shape()[1], din = xv.shape()[2];
    if (wh.rank() != 2) throw DimensionError("lstm_scan: recurrent weights must be rank 2");
    std::size_t H = wh.shape()[0];
    if (wi.rank() != 2 || wi.shape()[0] != din || wi.shape()[1] != 4 * H ||
        wh.shape()[1] != 4 * H || bv.rank() != 1 || bv.shape()[0] != 4 * H)
        throw DimensionError("lstm_scan: weight shapes " + shape_str(wi.shape()) + ", " +
                             shape_str(wh.shape()) + ", " + shape_str(bv.shape()) +
                             " inconsistent with input " + shape_str(xv.shape()));

    // input-side projection for all steps at once
    Tensor pre = ops::matmul(ops::reshape(xv, {B * T, din}), wi);

    auto save = std::make_shared<LstmSave>();
    save->gi = Tensor({B, T, H});
    save->gf = Tensor({B, T, H});
    save->gc = Tensor({B, T, H});
    save->go = Tensor({B, T, H});
    save->c = Tensor({B, T, H});
    save->tanh_c = Tensor({B, T, H});

    Tensor h_all({B, T, H});
    std::vector<double> h_prev(B * H, 0.0), c_prev(B * H, 0.0), a(4 * H);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t b = 0; b < B; ++b) {
            const double* p = pre.data() + (b * T + t) * 4 * H;
            for (std::size_t j = 0; j < 4 * H; ++j) a[j] = p[j] + bv[j];
            const double* hp = h_prev.data() + b * H;
            for (std::size_t k = 0; k < H; ++k) {
                double hv = hp[k];
                const double* wrow = wh.data() + k * 4 * H;
                for (std::size_t j = 0; j < 4 * H; ++j) a[j] += hv * wrow[j];
            }
            std::size_t base = (b * T + t) * H;
            double* cp = c_prev.data() + b * H;
            double* ho = h_all.data() + base;
            for (std::size_t j = 0; j < H; ++j) {
                double gi = 1.0 / (1.0 + std::exp(-a[j]));
                double gf = 1.0 / (1.0 + std::exp(-a[H + j]));
                double gc = std::tanh(a[2 * H + j]);
                double go = 1.0 / (1.0 + std::exp(-a[3 * H + j]));
                double c = gf * cp[j] + gi * gc;
                double tc = std::tanh(c);
                save->gi[base + j] = gi;
                save->gf[base + j] = gf;
                save->gc[base + j] = gc;
                save->go[base + j] = go;
                save->c[base + j] = c;
                save->tanh_c[base + j] = tc;
                cp[j] = c;
                ho[j] = go * tc;
            }
        }
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < H; ++j) h_prev[b * H + j] = h_all[(b * T + t) * H + j];
    }

    bool ng = needs(x) || needs(w_ih) || needs(w_hh) || needs(bias);
    auto back = [x, w_ih, w_hh, bias, save, B, T, H, din, id = nodes_.size()](
                    Tape& t, const Tensor& G) {
        const Tensor& h_all = t.nodes_[id].value;
        const Tensor& wh = t.val(w_hh);
        Tensor d_pre({B * T, 4 * H});
        std::vector<double> dh(B * H, 0.0), dc(B * H, 0.0);
        for (std::size_t st = T; st-- > 0;) {
            for (std::size_t b = 0; b < B; ++b) {
                std::size_t base = (b * T + st) * H;
                double* da = d_pre.data() + (b * T + st) * 4 * H;
                double* dhb = dh.data() + b * H;
                double* dcb = dc.data() + b * H;
                for (std::size_t j = 0; j < H; ++j) {
                    double dhj = dhb[j] + G[base + j];
                    double tc = save->tanh_c[base + j];
                    double go = save->go[base + j];
                    double gi = save->gi[base + j];
                    double gf = save->gf[base + j];
                    double gc = save->gc[base + j];
                    double cprev = st > 0 ? save->c[base - H + j] : 0.0;
                    da[3 * H + j] = dhj * tc * go * (1.0 - go);
                    double dcj = dcb[j] + dhj * go * (1.0 - tc * tc);
                    da[H + j] = dcj * cprev * gf * (1.0 - gf);
                    da[j] = dcj * gc * gi * (1.0 - gi);
                    da[2 * H + j] = dcj * gi * (1.0 - gc * gc);
                    dcb[j] = dcj * gf;
                }
                // carry into h_{t-1}
                for (std::size_t k = 0; k < H; ++k) {
                    double s = 0.0;
                    const double* wrow = wh.data() + k * 4 * H;
                    for (std::size_t j = 0; j < 4 * H; ++j) s += da[j] * wrow[j];
                    dhb[k] = s;
                }
            }
        }
        if (t.needs(bias)) {
            Tensor db({4 * H});
            for (std::size_t r = 0; r < B * T; ++r)
                for (std::size_t j = 0; j < 4 * H; ++j) db[j] += d_pre[r * 4 * H + j];
            t.accum(bias, db);
        }
        if (t.needs(x)) {
            Tensor dx = ops::matmul(d_pre, ops::transpose_last(t.val(w_ih)));
            t.accum(x, ops::reshape(dx, {B, T, din}));
        }
        if (t.needs(w_ih)) {
            Tensor xf = ops::reshape(t.val(x), {B * T, din});
            t.accum(w_ih, ops::matmul(ops::transpose_last(xf), d_pre));
        }
        if (t.needs(w_hh)) {
            Tensor hprev({B * T, H});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t st = 1; st < T; ++st)
                    for (std::size_t j = 0; j < H; ++j)
                        hprev[(b * T + st) * H + j] = h_all[(b * T + st - 1) * H + j];
            t.accum(w_hh, ops::matmul(ops::transpose_last(hprev), d_pre));
        }
    };
    return push(std::move(h_all), ng, std::move(back));
}

} // namespace stpformer
