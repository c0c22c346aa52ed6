#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "lpbnn/tensor.hpp"

namespace lpbnn {

namespace {

using detail::TensorData;
using Impl = std::shared_ptr<TensorData>;

void check_finite(const char* op, const Tensor& t) {
    if (!t.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite input tensor");
}

bool is_scalar(const Tensor& t) { return t.size() == 1; }

bool shapes_equal(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

// Records `node` when a tape is active and any input requires grad; the
// output then requires grad itself so downstream ops keep tracking.
void finish(const char* /*op*/, Tensor& out, std::initializer_list<Tensor> inputs,
            std::function<void()> backward_fn) {
    Tape* tape = Tape::active();
    bool track = false;
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) track = true;
    }
    if (tape == nullptr || !track) return;
    out.set_requires_grad(true);
    out.impl()->tape = tape;
    tape->record(Tape::Node{out.impl(), std::move(backward_fn)});
}

void accumulate(const Impl& t, size_t i, double v) { t->grad[i] += v; }

// Strides of a row-major layout.
std::vector<size_t> strides_of(const std::vector<int>& shape) {
    std::vector<size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        s[static_cast<size_t>(i)] = s[static_cast<size_t>(i) + 1] * static_cast<size_t>(shape[static_cast<size_t>(i) + 1]);
    }
    return s;
}

double stable_softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) { return x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Tensor elementwise_unary(const char* op, const Tensor& a, double (*fwd)(double), double (*dfdx)(double)) {
    check_finite(op, a);
    Tensor out = Tensor::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data();
    for (size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
    Impl ia = a.impl(), io = out.impl();
    finish(op, out, {a}, [ia, io, dfdx] {
        io->ensure_grad();
        if (!ia->requires_grad) return;
        ia->ensure_grad();
        for (size_t i = 0; i < ia->data.size(); ++i) accumulate(ia, i, io->grad[i] * dfdx(ia->data[i]));
    });
    return out;
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::kMatmul: return "matmul";
        case OpKind::kAdd: return "add";
        case OpKind::kHadamard: return "hadamard";
        case OpKind::kScale: return "scale";
        case OpKind::kRelu: return "relu";
        case OpKind::kSoftplus: return "softplus";
        case OpKind::kExp: return "exp";
        case OpKind::kLog: return "log";
        case OpKind::kSum: return "sum";
        case OpKind::kMean: return "mean";
        case OpKind::kSlice: return "slice";
        case OpKind::kConcat: return "concat";
    }
    return "?";
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_finite("matmul", a);
    check_finite("matmul", b);
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: shapes do not conform: " + a.shape_str() + " vs " + b.shape_str());
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
            out.at(i, j) = acc;
        }
    }
    Impl ia = a.impl(), ib = b.impl(), io = out.impl();
    finish("matmul", out, {a, b}, [ia, ib, io, m, k, n] {
        io->ensure_grad();
        const auto& dc = io->grad;
        auto idx = [n](int i, int j) { return static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j); };
        auto idx_a = [k](int i, int t) { return static_cast<size_t>(i) * static_cast<size_t>(k) + static_cast<size_t>(t); };
        auto idx_b = [n](int t, int j) { return static_cast<size_t>(t) * static_cast<size_t>(n) + static_cast<size_t>(j); };
        if (ia->requires_grad) {
            ia->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (int j = 0; j < n; ++j) acc += dc[idx(i, j)] * ib->data[idx_b(t, j)];
                    ia->grad[idx_a(i, t)] += acc;
                }
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += ia->data[idx_a(i, t)] * dc[idx(i, j)];
                    ib->grad[idx_b(t, j)] += acc;
                }
        }
    });
    return out;
}

namespace {

// Shared implementation of add/hadamard: equal shapes or scalar broadcast.
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, bool multiply) {
    check_finite(op, a);
    check_finite(op, b);
    bool a_scalar = is_scalar(a), b_scalar = is_scalar(b);
    if (!shapes_equal(a, b) && !a_scalar && !b_scalar) {
        throw ShapeError(std::string(op) + ": shapes do not conform: " + a.shape_str() + " vs " + b.shape_str());
    }
    const Tensor& big = a_scalar && !b_scalar ? b : a;
    Tensor out = Tensor::zeros(big.shape());
    const auto& xa = a.data();
    const auto& xb = b.data();
    auto& y = out.data();
    for (size_t i = 0; i < y.size(); ++i) {
        double va = a_scalar ? xa[0] : xa[i];
        double vb = b_scalar ? xb[0] : xb[i];
        y[i] = multiply ? va * vb : va + vb;
    }
    Impl ia = a.impl(), ib = b.impl(), io = out.impl();
    finish(op, out, {a, b}, [ia, ib, io, a_scalar, b_scalar, multiply] {
        io->ensure_grad();
        const auto& d = io->grad;
        if (ia->requires_grad) {
            ia->ensure_grad();
            for (size_t i = 0; i < d.size(); ++i) {
                double g = multiply ? d[i] * (b_scalar ? ib->data[0] : ib->data[i]) : d[i];
                accumulate(ia, a_scalar ? 0 : i, g);
            }
        }
        if (ib->requires_grad) {
            ib->ensure_grad();
            for (size_t i = 0; i < d.size(); ++i) {
                double g = multiply ? d[i] * (a_scalar ? ia->data[0] : ia->data[i]) : d[i];
                accumulate(ib, b_scalar ? 0 : i, g);
            }
        }
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise("add", a, b, false); }

Tensor hadamard(const Tensor& a, const Tensor& b) { return binary_elementwise("hadamard", a, b, true); }

Tensor scale(const Tensor& a, double factor) {
    check_finite("scale", a);
    if (!std::isfinite(factor)) throw NonFiniteError("scale: non-finite factor");
    Tensor out = Tensor::zeros(a.shape());
    const auto& x = a.data();
    auto& y = out.data();
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * factor;
    Impl ia = a.impl(), io = out.impl();
    finish("scale", out, {a}, [ia, io, factor] {
        io->ensure_grad();
        if (!ia->requires_grad) return;
        ia->ensure_grad();
        for (size_t i = 0; i < ia->data.size(); ++i) accumulate(ia, i, io->grad[i] * factor);
    });
    return out;
}

Tensor relu(const Tensor& a) {
    return elementwise_unary(
        "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
    return elementwise_unary("softplus", a, +[](double x) { return stable_softplus(x); },
                             +[](double x) { return sigmoid(x); });
}

Tensor exp(const Tensor& a) {
    return elementwise_unary("exp", a, +[](double x) { return std::exp(x); }, +[](double x) { return std::exp(x); });
}

Tensor log(const Tensor& a) {
    return elementwise_unary("log", a, +[](double x) { return std::log(x); }, +[](double x) { return 1.0 / x; });
}

namespace {

Tensor reduce(const char* op, const Tensor& a, int axis, bool take_mean) {
    check_finite(op, a);
    if (axis == -1) {
        Tensor out = Tensor::zeros({1});
        double acc = 0.0;
        for (double x : a.data()) acc += x;
        double denom = take_mean ? static_cast<double>(a.size()) : 1.0;
        out.at(0) = acc / denom;
        Impl ia = a.impl(), io = out.impl();
        finish(op, out, {a}, [ia, io, denom] {
            io->ensure_grad();
            if (!ia->requires_grad) return;
            ia->ensure_grad();
            double g = io->grad[0] / denom;
            for (size_t i = 0; i < ia->data.size(); ++i) accumulate(ia, i, g);
        });
        return out;
    }
    if (a.rank() != 2 || (axis != 0 && axis != 1)) {
        throw ShapeError(std::string(op) + ": axis reduction needs a 2-d tensor and axis 0 or 1, got " +
                         a.shape_str() + " axis " + std::to_string(axis));
    }
    int rows = a.dim(0), cols = a.dim(1);
    int out_len = axis == 0 ? cols : rows;
    double denom = take_mean ? static_cast<double>(axis == 0 ? rows : cols) : 1.0;
    Tensor out = Tensor::zeros({out_len});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) out.at(axis == 0 ? j : i) += a.at(i, j);
    if (take_mean)
        for (double& v : out.data()) v /= denom;
    Impl ia = a.impl(), io = out.impl();
    finish(op, out, {a}, [ia, io, rows, cols, axis, denom] {
        io->ensure_grad();
        if (!ia->requires_grad) return;
        ia->ensure_grad();
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                size_t oi = static_cast<size_t>(axis == 0 ? j : i);
                accumulate(ia, static_cast<size_t>(i) * static_cast<size_t>(cols) + static_cast<size_t>(j),
                           io->grad[oi] / denom);
            }
    });
    return out;
}

}  // namespace

Tensor sum(const Tensor& a) { return reduce("sum", a, -1, false); }
Tensor sum(const Tensor& a, int axis) { return reduce("sum", a, axis, false); }
Tensor mean(const Tensor& a) { return reduce("mean", a, -1, true); }
Tensor mean(const Tensor& a, int axis) { return reduce("mean", a, axis, true); }

Tensor slice(const Tensor& a, std::vector<int> starts, std::vector<int> lengths) {
    check_finite("slice", a);
    size_t r = static_cast<size_t>(a.rank());
    if (starts.size() != r || lengths.size() != r) {
        throw ShapeError("slice: starts/lengths rank mismatch for tensor of shape " + a.shape_str());
    }
    for (size_t d = 0; d < r; ++d) {
        if (starts[d] < 0 || lengths[d] <= 0 || starts[d] + lengths[d] > a.shape()[d]) {
            throw ShapeError("slice: range [" + std::to_string(starts[d]) + "," +
                             std::to_string(starts[d] + lengths[d]) + ") out of bounds for shape " + a.shape_str());
        }
    }
    Tensor out = Tensor::zeros(lengths);
    auto in_strides = strides_of(a.shape());
    auto out_strides = strides_of(lengths);
    std::int64_t n = out.size();
    std::vector<size_t> flat_map(static_cast<size_t>(n));
    for (std::int64_t f = 0; f < n; ++f) {
        size_t rem = static_cast<size_t>(f), src = 0;
        for (size_t d = 0; d < r; ++d) {
            size_t coord = rem / out_strides[d];
            rem %= out_strides[d];
            src += (static_cast<size_t>(starts[d]) + coord) * in_strides[d];
        }
        flat_map[static_cast<size_t>(f)] = src;
        out.data()[static_cast<size_t>(f)] = a.data()[src];
    }
    Impl ia = a.impl(), io = out.impl();
    finish("slice", out, {a}, [ia, io, flat_map = std::move(flat_map)] {
        io->ensure_grad();
        if (!ia->requires_grad) return;
        ia->ensure_grad();
        for (size_t f = 0; f < flat_map.size(); ++f) accumulate(ia, flat_map[f], io->grad[f]);
    });
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: empty input list");
    size_t r = static_cast<size_t>(parts[0].rank());
    if (axis < 0 || static_cast<size_t>(axis) >= r) throw ShapeError("concat: axis out of range");
    std::vector<int> out_shape = parts[0].shape();
    out_shape[static_cast<size_t>(axis)] = 0;
    for (const Tensor& p : parts) {
        check_finite("concat", p);
        if (static_cast<size_t>(p.rank()) != r) throw ShapeError("concat: rank mismatch");
        for (size_t d = 0; d < r; ++d) {
            if (d == static_cast<size_t>(axis)) continue;
            if (p.shape()[d] != parts[0].shape()[d]) {
                throw ShapeError("concat: shapes do not conform: " + parts[0].shape_str() + " vs " + p.shape_str());
            }
        }
        out_shape[static_cast<size_t>(axis)] += p.shape()[static_cast<size_t>(axis)];
    }
    Tensor out = Tensor::zeros(out_shape);

    // View every tensor as [outer, axis_dim, inner].
    size_t inner = 1, outer = 1;
    for (size_t d = static_cast<size_t>(axis) + 1; d < r; ++d) inner *= static_cast<size_t>(out_shape[d]);
    for (size_t d = 0; d < static_cast<size_t>(axis); ++d) outer *= static_cast<size_t>(out_shape[d]);
    size_t out_axis = static_cast<size_t>(out_shape[static_cast<size_t>(axis)]);

    size_t offset = 0;  // running offset along the axis
    struct Span {
        Impl impl;
        size_t axis_len;
        size_t axis_offset;
        bool track;
    };
    std::vector<Span> spans;
    spans.reserve(parts.size());
    for (const Tensor& p : parts) {
        size_t alen = static_cast<size_t>(p.shape()[static_cast<size_t>(axis)]);
        for (size_t o = 0; o < outer; ++o) {
            for (size_t k = 0; k < alen; ++k) {
                const double* src = p.data().data() + (o * alen + k) * inner;
                double* dst = out.data().data() + (o * out_axis + offset + k) * inner;
                std::copy(src, src + inner, dst);
            }
        }
        spans.push_back({p.impl(), alen, offset, p.requires_grad()});
        offset += alen;
    }

    bool any = false;
    for (const Tensor& p : parts)
        if (p.requires_grad()) any = true;
    Tape* tape = Tape::active();
    if (tape != nullptr && any) {
        out.set_requires_grad(true);
        out.impl()->tape = tape;
        Impl io = out.impl();
        tape->record(Tape::Node{io, [io, spans = std::move(spans), outer, inner, out_axis] {
                                    io->ensure_grad();
                                    for (const Span& s : spans) {
                                        if (!s.track) continue;
                                        s.impl->ensure_grad();
                                        for (size_t o = 0; o < outer; ++o)
                                            for (size_t k = 0; k < s.axis_len; ++k) {
                                                const double* g =
                                                    io->grad.data() + (o * out_axis + s.axis_offset + k) * inner;
                                                double* dst = s.impl->grad.data() + (o * s.axis_len + k) * inner;
                                                for (size_t t = 0; t < inner; ++t) dst[t] += g[t];
                                            }
                                    }
                                }});
    }
    return out;
}

Tensor forward_primitive(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs) {
    auto need = [&](size_t n) {
        if (inputs.size() != n)
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(inputs.size()));
    };
    switch (kind) {
        case OpKind::kMatmul: need(2); return matmul(inputs[0], inputs[1]);
        case OpKind::kAdd: need(2); return add(inputs[0], inputs[1]);
        case OpKind::kHadamard: need(2); return hadamard(inputs[0], inputs[1]);
        case OpKind::kScale: need(1); return scale(inputs[0], attrs.scalar);
        case OpKind::kRelu: need(1); return relu(inputs[0]);
        case OpKind::kSoftplus: need(1); return softplus(inputs[0]);
        case OpKind::kExp: need(1); return exp(inputs[0]);
        case OpKind::kLog: need(1); return log(inputs[0]);
        case OpKind::kSum: need(1); return attrs.axis < 0 ? sum(inputs[0]) : sum(inputs[0], attrs.axis);
        case OpKind::kMean: need(1); return attrs.axis < 0 ? mean(inputs[0]) : mean(inputs[0], attrs.axis);
        case OpKind::kSlice: need(1); return slice(inputs[0], attrs.starts, attrs.lengths);
        case OpKind::kConcat: return concat(inputs, attrs.axis < 0 ? 0 : attrs.axis);
    }
    throw ValueError("forward_primitive: unknown op kind");
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    check_finite("reshape", a);
    Tensor out = Tensor::from(std::move(shape), a.data());
    if (out.size() != a.size()) {
        throw ShapeError("reshape: element count mismatch: " + a.shape_str() + " vs " + out.shape_str());
    }
    Impl ia = a.impl(), io = out.impl();
    finish("reshape", out, {a}, [ia, io] {
        io->ensure_grad();
        if (!ia->requires_grad) return;
        ia->ensure_grad();
        for (size_t i = 0; i < ia->data.size(); ++i) accumulate(ia, i, io->grad[i]);
    });
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor sum_squares(const Tensor& a) { return sum(hadamard(a, a)); }

Tensor broadcast_rows(const Tensor& row, int n) {
    Tensor r = row.rank() == 1 ? reshape(row, {1, row.dim(0)}) : row;
    if (r.rank() != 2 || r.dim(0) != 1) throw ShapeError("broadcast_rows: expected a single row, got " + row.shape_str());
    return matmul(Tensor::ones({n, 1}), r);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    std::vector<Tensor> as_rows;
    as_rows.reserve(rows.size());
    for (const Tensor& t : rows) as_rows.push_back(t.rank() == 1 ? reshape(t, {1, t.dim(0)}) : t);
    return concat(as_rows, 0);
}

namespace {

// Per-row max as a constant (no grad); subtracting it leaves gradients of
// log-sum-exp and the label term unchanged.
Tensor row_max_constant(const Tensor& logits) {
    int rows = logits.dim(0), cols = logits.dim(1);
    Tensor c = Tensor::zeros({rows, cols});
    for (int i = 0; i < rows; ++i) {
        double m = logits.at(i, 0);
        for (int j = 1; j < cols; ++j) m = std::max(m, logits.at(i, j));
        for (int j = 0; j < cols; ++j) c.at(i, j) = -m;
    }
    return c;
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax_rows: expected 2-d logits, got " + logits.shape_str());
    int rows = logits.dim(0), cols = logits.dim(1);
    Tensor s = add(logits, row_max_constant(logits));
    Tensor e = exp(s);
    Tensor lse = log(sum(e, 1));  // (rows)
    Tensor lse_mat = matmul(reshape(lse, {rows, 1}), Tensor::ones({1, cols}));
    return exp(sub(s, lse_mat));
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_with_logits: expected 2-d logits");
    int rows = logits.dim(0), cols = logits.dim(1);
    if (static_cast<int>(labels.size()) != rows) {
        throw ShapeError("cross_entropy_with_logits: labels length " + std::to_string(labels.size()) +
                         " vs batch " + std::to_string(rows));
    }
    Tensor onehot = Tensor::zeros({rows, cols});
    for (int i = 0; i < rows; ++i) {
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= cols) {
            throw ValueError("cross_entropy_with_logits: label out of range: " +
                             std::to_string(labels[static_cast<size_t>(i)]));
        }
        onehot.at(i, labels[static_cast<size_t>(i)]) = 1.0;
    }
    Tensor s = add(logits, row_max_constant(logits));
    Tensor lse_sum = sum(log(sum(exp(s), 1)));
    Tensor label_sum = sum(hadamard(s, onehot));
    return scale(sub(lse_sum, label_sum), 1.0 / static_cast<double>(rows));
}

std::pair<Tensor, Tensor> gaussian_sample(const Tensor& mu, const Tensor& sigma, RngStream& stream) {
    check_finite("gaussian_sample", mu);
    check_finite("gaussian_sample", sigma);
    if (!shapes_equal(mu, sigma)) {
        throw ShapeError("gaussian_sample: shapes do not conform: " + mu.shape_str() + " vs " + sigma.shape_str());
    }
    for (double s : sigma.data()) {
        if (s < 0.0) throw ValueError("gaussian_sample: negative sigma entry");
    }
    Tensor eps = Tensor::zeros(mu.shape());
    for (double& e : eps.data()) e = stream.next_normal();
    Tensor z = add(mu, hadamard(sigma, eps));
    return {z, eps};
}

std::pair<Tensor, Tensor> gaussian_sample(const Tensor& mu, const Tensor& sigma, std::uint64_t rng_seed) {
    RngStream stream(rng_seed);
    return gaussian_sample(mu, sigma, stream);
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
    if (step <= 0.0) throw ValueError("grad_check: step must be positive");
    Tensor probe = x.detached();
    probe.set_requires_grad(true);
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor loss = f(probe);
        if (loss.size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
        if (!std::isfinite(loss.item())) throw NonFiniteError("grad_check: f(x) is non-finite");
        backward(tape, loss);
        analytic = probe.grad();
    }
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        double fp, fm;
        {
            Tensor xp = x.detached();
            xp.data()[i] += step;
            Tape scratch;
            fp = f(xp).item();
        }
        {
            Tensor xm = x.detached();
            xm.data()[i] -= step;
            Tape scratch;
            fm = f(xm).item();
        }
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw NonFiniteError("grad_check: f(x) is non-finite");
        double central = (fp - fm) / (2.0 * step);
        double rel = std::abs(analytic[i] - central) / std::max(1.0, std::abs(central));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace lpbnn
