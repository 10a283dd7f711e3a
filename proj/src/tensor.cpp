#include "dbmif/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dbmif {

namespace {
Precision g_precision = Precision::f32;
bool g_grad_enabled = true;
}  // namespace

Precision engine_precision() { return g_precision; }
void set_engine_precision(Precision p) { g_precision = p; }
bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string r = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

void finish_values(std::vector<double>& v) {
    if (g_precision == Precision::f32) {
        for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }
}

double round_scalar(double v) {
    return g_precision == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// ---- Tensor ----

static void check_shape(const Shape& s) {
    if (s.empty()) throw config_error("tensor shape must have at least one dim");
    for (int64_t d : s)
        if (d <= 0) throw config_error(cat("tensor dims must be positive, got ", shape_str(s)));
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
    check_shape(s);
    auto impl = std::make_shared<TensorImpl>();
    impl->values.assign(static_cast<size_t>(shape_numel(s)), 0.0);
    impl->shape = std::move(s);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t = zeros(std::move(s), false);
    double rv = round_scalar(v);
    for (double& x : t.impl()->values) x = rv;
    return t;
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from_values(Shape s, std::vector<double> v, bool requires_grad) {
    check_shape(s);
    if (static_cast<int64_t>(v.size()) != shape_numel(s))
        throw config_error(cat("value count ", v.size(), " does not match shape ", shape_str(s)));
    finish_values(v);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(s);
    impl->values = std::move(v);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape s, std::mt19937_64& rng, double stdev, bool requires_grad) {
    check_shape(s);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    for (double& x : v) x = stdev * dist(rng);
    return from_values(std::move(s), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw precondition_error("operation on undefined tensor");
    return impl_->shape;
}

int64_t Tensor::dim(int i) const {
    const Shape& s = shape();
    if (i < 0 || i >= static_cast<int>(s.size()))
        throw precondition_error(cat("dim ", i, " out of range for shape ", shape_str(s)));
    return s[static_cast<size_t>(i)];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }

const std::vector<double>& Tensor::values() const {
    if (!impl_) throw precondition_error("operation on undefined tensor");
    return impl_->values;
}

double Tensor::item() const {
    if (numel() != 1) throw precondition_error(cat("item() on non-scalar shape ", shape_str(shape())));
    return impl_->values[0];
}

std::vector<double>& Tensor::mutable_values() {
    if (!impl_) throw precondition_error("operation on undefined tensor");
    if (impl_->node >= 0)
        throw precondition_error("mutable_values() on a graph intermediate; detach first");
    return impl_->values;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!impl_) throw precondition_error("operation on undefined tensor");
    if (impl_->node >= 0)
        throw precondition_error("set_requires_grad on a graph intermediate; detach first");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

void Tensor::materialize_zero_grad() {
    if (!impl_) throw precondition_error("materialize_zero_grad on undefined tensor");
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_ || impl_->grad.empty())
        throw precondition_error("tensor has no gradient; run backward() first");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) {
        impl_->grad.clear();
        impl_->gbuf.clear();
    }
}

Tensor Tensor::detach() const {
    if (!impl_) throw precondition_error("operation on undefined tensor");
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->values = impl_->values;
    return Tensor(std::move(impl));
}

// ---- Tape ----

Tape& Tape::instance() {
    static Tape tape;
    return tape;
}

int64_t Tape::push(TapeNode n) {
    nodes_.push_back(std::move(n));
    return static_cast<int64_t>(nodes_.size()) - 1;
}

std::vector<double>& grad_sink(TensorImpl& impl) {
    if (impl.gbuf.empty()) impl.gbuf.assign(impl.values.size(), 0.0);
    return impl.gbuf;
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(TapeNode&)> backprop) {
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        throw config_error(cat("op produced ", values.size(), " values for shape ", shape_str(shape)));
    finish_values(values);

    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);

    bool track = g_grad_enabled;
    if (track) {
        bool any = false;
        for (const Tensor& t : inputs) any = any || t.requires_grad();
        track = any;
    }
    if (track) {
        impl->requires_grad = true;
        TapeNode node;
        node.inputs.reserve(inputs.size());
        for (const Tensor& t : inputs) node.inputs.push_back(t.impl());
        node.out = impl;
        node.backprop = std::move(backprop);
        impl->node = Tape::instance().push(std::move(node));
    }
    return Tensor(std::move(impl));
}

static void flush_gbuf(TensorImpl& impl) {
    if (impl.gbuf.empty()) return;
    if (impl.requires_grad) {
        if (impl.grad.empty()) {
            impl.grad = impl.gbuf;
        } else {
            for (size_t i = 0; i < impl.grad.size(); ++i) impl.grad[i] += impl.gbuf[i];
        }
    }
    impl.gbuf.clear();
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw precondition_error("backward() on undefined tensor");
    if (loss.numel() != 1)
        throw precondition_error(cat("backward() needs a scalar loss, got ", shape_str(loss.shape())));
    TensorImpl& root = *loss.impl();
    if (root.node < 0) {
        // Leaf loss: d(loss)/d(loss) = 1 and there is nothing upstream.
        if (root.requires_grad) {
            if (root.grad.empty()) root.grad.assign(1, 0.0);
            root.grad[0] += 1.0;
        }
        return;
    }
    grad_sink(root)[0] += 1.0;

    Tape& tape = Tape::instance();
    for (int64_t i = root.node; i >= 0; --i) {
        TapeNode& node = tape.at(i);
        if (node.out->gbuf.empty()) continue;  // no gradient reached this op
        node.backprop(node);
        flush_gbuf(*node.out);  // all consumers of `out` have already run
    }
    // Leaves collected their contributions in gbuf; fold into grad.
    for (int64_t i = root.node; i >= 0; --i) {
        for (auto& in : tape.at(i).inputs) flush_gbuf(*in);
    }
}

// ---- pointwise ----

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw config_error(
            cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

// Elementwise binary op with the only broadcast we support: scalar vs tensor.
template <class Fwd, class Bwd>
static Tensor pointwise2(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar) require_same_shape(a, b, name);
    const Shape out_shape = a_scalar ? b.shape() : a.shape();
    const int64_t n = shape_numel(out_shape);

    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = fwd(av[a_scalar ? 0 : static_cast<size_t>(i)],
                                          bv[b_scalar ? 0 : static_cast<size_t>(i)]);

    return make_op(out_shape, std::move(out), {a, b}, [=](TapeNode& node) {
        TensorImpl& ia = *node.inputs[0];
        TensorImpl& ib = *node.inputs[1];
        const std::vector<double>& go = node.out->gbuf;
        const int64_t cnt = static_cast<int64_t>(go.size());
        double* ga = ia.requires_grad ? grad_sink(ia).data() : nullptr;
        double* gb = ib.requires_grad ? grad_sink(ib).data() : nullptr;
        for (int64_t i = 0; i < cnt; ++i) {
            const size_t iai = ia.values.size() == 1 ? 0 : static_cast<size_t>(i);
            const size_t ibi = ib.values.size() == 1 ? 0 : static_cast<size_t>(i);
            double da, db;
            bwd(ia.values[iai], ib.values[ibi], node.out->values[static_cast<size_t>(i)],
                go[static_cast<size_t>(i)], da, db);
            if (ga) ga[iai] += da;
            if (gb) gb[ibi] += db;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return pointwise2(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return pointwise2(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return pointwise2(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

template <class Fwd, class Bwd>
static Tensor pointwise1(const Tensor& a, Fwd fwd, Bwd bwd) {
    const std::vector<double>& av = a.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    return make_op(a.shape(), std::move(out), {a}, [=](TapeNode& node) {
        TensorImpl& ia = *node.inputs[0];
        if (!ia.requires_grad) return;
        const std::vector<double>& go = node.out->gbuf;
        double* ga = grad_sink(ia).data();
        for (size_t i = 0; i < go.size(); ++i)
            ga[i] += go[i] * bwd(ia.values[i], node.out->values[i]);
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    return pointwise1(
        a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return pointwise1(
        a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor sigmoid(const Tensor& a) {
    return pointwise1(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return pointwise1(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor leaky_relu(const Tensor& a, double alpha) {
    return pointwise1(
        a, [alpha](double x) { return x >= 0.0 ? x : alpha * x; },
        [alpha](double x, double) { return x >= 0.0 ? 1.0 : alpha; });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor abs(const Tensor& a) {
    return pointwise1(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.values()) s += x;
    return make_op({1}, {s}, {a}, [](TapeNode& node) {
        TensorImpl& ia = *node.inputs[0];
        if (!ia.requires_grad) return;
        const double g = node.out->gbuf[0];
        double* ga = grad_sink(ia).data();
        for (size_t i = 0; i < ia.values.size(); ++i) ga[i] += g;
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    double s = 0.0;
    for (double x : a.values()) s += x;
    return make_op({1}, {s * inv}, {a}, [inv](TapeNode& node) {
        TensorImpl& ia = *node.inputs[0];
        if (!ia.requires_grad) return;
        const double g = node.out->gbuf[0] * inv;
        double* ga = grad_sink(ia).data();
        for (size_t i = 0; i < ia.values.size(); ++i) ga[i] += g;
    });
}

static void require_rank2(const Tensor& x, const char* op) {
    if (x.rank() != 2)
        throw precondition_error(cat(op, ": expected a (C,T) tensor, got ", shape_str(x.shape())));
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank2(x, "global_avg_pool");
    const int64_t c = x.dim(0), t = x.dim(1);
    if (t < 1) throw precondition_error("global_avg_pool: zero frames");
    const double inv = 1.0 / static_cast<double>(t);
    const std::vector<double>& xv = x.values();
    std::vector<double> out(static_cast<size_t>(c), 0.0);
    for (int64_t i = 0; i < c; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < t; ++j) s += xv[static_cast<size_t>(i * t + j)];
        out[static_cast<size_t>(i)] = s * inv;
    }
    return make_op({c, 1}, std::move(out), {x}, [c, t, inv](TapeNode& node) {
        TensorImpl& ix = *node.inputs[0];
        if (!ix.requires_grad) return;
        const std::vector<double>& go = node.out->gbuf;
        double* gx = grad_sink(ix).data();
        for (int64_t i = 0; i < c; ++i) {
            const double g = go[static_cast<size_t>(i)] * inv;
            for (int64_t j = 0; j < t; ++j) gx[i * t + j] += g;
        }
    });
}

// ---- channel plumbing ----

static void require_channel_vector(const Tensor& w, int64_t c, const char* op) {
    if (w.rank() != 2 || w.dim(1) != 1 || w.dim(0) != c)
        throw precondition_error(cat(op, ": weights must be (", c, ",1), got ",
                                     shape_str(w.shape())));
}

Tensor scale_channels(const Tensor& x, const Tensor& w) {
    require_rank2(x, "scale_channels");
    require_channel_vector(w, x.dim(0), "scale_channels");
    const int64_t c = x.dim(0), t = x.dim(1);
    const std::vector<double>& xv = x.values();
    const std::vector<double>& wv = w.values();
    std::vector<double> out(xv.size());
    for (int64_t i = 0; i < c; ++i) {
        const double wi = wv[static_cast<size_t>(i)];
        for (int64_t j = 0; j < t; ++j)
            out[static_cast<size_t>(i * t + j)] = wi * xv[static_cast<size_t>(i * t + j)];
    }
    return make_op(x.shape(), std::move(out), {x, w}, [c, t](TapeNode& node) {
        TensorImpl& ix = *node.inputs[0];
        TensorImpl& iw = *node.inputs[1];
        const std::vector<double>& go = node.out->gbuf;
        double* gx = ix.requires_grad ? grad_sink(ix).data() : nullptr;
        double* gw = iw.requires_grad ? grad_sink(iw).data() : nullptr;
        for (int64_t i = 0; i < c; ++i) {
            const double wi = iw.values[static_cast<size_t>(i)];
            double acc = 0.0;
            for (int64_t j = 0; j < t; ++j) {
                const double g = go[static_cast<size_t>(i * t + j)];
                if (gx) gx[i * t + j] += g * wi;
                acc += g * ix.values[static_cast<size_t>(i * t + j)];
            }
            if (gw) gw[i] += acc;
        }
    });
}

Tensor channel_mix(const Tensor& a, const Tensor& b, const Tensor& w) {
    require_rank2(a, "channel_mix");
    require_same_shape(a, b, "channel_mix");
    require_channel_vector(w, a.dim(0), "channel_mix");
    const int64_t c = a.dim(0), t = a.dim(1);
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    const std::vector<double>& wv = w.values();
    std::vector<double> out(av.size());
    for (int64_t i = 0; i < c; ++i) {
        const double wi = wv[static_cast<size_t>(i)];
        for (int64_t j = 0; j < t; ++j) {
            const size_t k = static_cast<size_t>(i * t + j);
            out[k] = bv[k] + wi * (av[k] - bv[k]);
        }
    }
    return make_op(a.shape(), std::move(out), {a, b, w}, [c, t](TapeNode& node) {
        TensorImpl& ia = *node.inputs[0];
        TensorImpl& ib = *node.inputs[1];
        TensorImpl& iw = *node.inputs[2];
        const std::vector<double>& go = node.out->gbuf;
        double* ga = ia.requires_grad ? grad_sink(ia).data() : nullptr;
        double* gb = ib.requires_grad ? grad_sink(ib).data() : nullptr;
        double* gw = iw.requires_grad ? grad_sink(iw).data() : nullptr;
        for (int64_t i = 0; i < c; ++i) {
            const double wi = iw.values[static_cast<size_t>(i)];
            double acc = 0.0;
            for (int64_t j = 0; j < t; ++j) {
                const size_t k = static_cast<size_t>(i * t + j);
                const double g = go[k];
                if (ga) ga[k] += g * wi;
                if (gb) gb[k] += g * (1.0 - wi);
                acc += g * (ia.values[k] - ib.values[k]);
            }
            if (gw) gw[i] += acc;
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw precondition_error("concat_rows: no inputs");
    const int64_t t = parts[0].dim(1);
    int64_t rows = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.dim(1) != t)
            throw precondition_error(cat("concat_rows: frame count mismatch ", p.dim(1), " vs ", t));
        rows += p.dim(0);
    }
    std::vector<double> out;
    out.reserve(static_cast<size_t>(rows * t));
    for (const Tensor& p : parts)
        out.insert(out.end(), p.values().begin(), p.values().end());
    return make_op({rows, t}, std::move(out), parts, [](TapeNode& node) {
        const std::vector<double>& go = node.out->gbuf;
        size_t off = 0;
        for (auto& in : node.inputs) {
            const size_t n = in->values.size();
            if (in->requires_grad) {
                double* g = grad_sink(*in).data();
                for (size_t i = 0; i < n; ++i) g[i] += go[off + i];
            }
            off += n;
        }
    });
}

Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1) {
    require_rank2(x, "slice_rows");
    const int64_t c = x.dim(0), t = x.dim(1);
    if (r0 < 0 || r1 <= r0 || r1 > c)
        throw precondition_error(cat("slice_rows: [", r0, ",", r1, ") out of range for ", c, " rows"));
    const std::vector<double>& xv = x.values();
    std::vector<double> out(xv.begin() + static_cast<size_t>(r0 * t),
                            xv.begin() + static_cast<size_t>(r1 * t));
    return make_op({r1 - r0, t}, std::move(out), {x}, [r0, t](TapeNode& node) {
        TensorImpl& ix = *node.inputs[0];
        if (!ix.requires_grad) return;
        const std::vector<double>& go = node.out->gbuf;
        double* gx = grad_sink(ix).data();
        for (size_t i = 0; i < go.size(); ++i) gx[static_cast<size_t>(r0 * t) + i] += go[i];
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw precondition_error("concat_cols: no inputs");
    const int64_t c = parts[0].dim(0);
    int64_t cols = 0;
    std::vector<int64_t> widths;
    widths.reserve(parts.size());
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != c)
            throw precondition_error(cat("concat_cols: channel mismatch ", p.dim(0), " vs ", c));
        widths.push_back(p.dim(1));
        cols += p.dim(1);
    }
    std::vector<double> out(static_cast<size_t>(c * cols));
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const std::vector<double>& pv = parts[pi].values();
        const int64_t w = widths[pi];
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < w; ++j)
                out[static_cast<size_t>(i * cols + off + j)] = pv[static_cast<size_t>(i * w + j)];
        off += w;
    }
    return make_op({c, cols}, std::move(out), parts, [c, cols, widths](TapeNode& node) {
        const std::vector<double>& go = node.out->gbuf;
        int64_t off = 0;
        for (size_t pi = 0; pi < node.inputs.size(); ++pi) {
            TensorImpl& in = *node.inputs[pi];
            const int64_t w = widths[pi];
            if (in.requires_grad) {
                double* g = grad_sink(in).data();
                for (int64_t i = 0; i < c; ++i)
                    for (int64_t j = 0; j < w; ++j)
                        g[i * w + j] += go[static_cast<size_t>(i * cols + off + j)];
            }
            off += w;
        }
    });
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
    require_rank2(x, "slice_cols");
    const int64_t c = x.dim(0), t = x.dim(1);
    if (c0 < 0 || c1 <= c0 || c1 > t)
        throw precondition_error(cat("slice_cols: [", c0, ",", c1, ") out of range for ", t, " cols"));
    const int64_t w = c1 - c0;
    const std::vector<double>& xv = x.values();
    std::vector<double> out(static_cast<size_t>(c * w));
    for (int64_t i = 0; i < c; ++i)
        for (int64_t j = 0; j < w; ++j)
            out[static_cast<size_t>(i * w + j)] = xv[static_cast<size_t>(i * t + c0 + j)];
    return make_op({c, w}, std::move(out), {x}, [c, t, c0, w](TapeNode& node) {
        TensorImpl& ix = *node.inputs[0];
        if (!ix.requires_grad) return;
        const std::vector<double>& go = node.out->gbuf;
        double* gx = grad_sink(ix).data();
        for (int64_t i = 0; i < c; ++i)
            for (int64_t j = 0; j < w; ++j)
                gx[i * t + c0 + j] += go[static_cast<size_t>(i * w + j)];
    });
}

// ---- linear ----

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank2(x, "linear");
    if (w.rank() != 2)
        throw config_error(cat("linear: weight must be (Co,Ci), got ", shape_str(w.shape())));
    const int64_t ci = x.dim(0), t = x.dim(1);
    const int64_t co = w.dim(0);
    if (w.dim(1) != ci)
        throw config_error(cat("linear: weight ", shape_str(w.shape()), " does not accept ", ci,
                               " input channels"));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw config_error(cat("linear: bias must be (", co, "), got ", shape_str(bias.shape())));

    const std::vector<double>& xv = x.values();
    const std::vector<double>& wv = w.values();
    std::vector<double> out(static_cast<size_t>(co * t), 0.0);
    if (bias.defined()) {
        const std::vector<double>& bv = bias.values();
        for (int64_t o = 0; o < co; ++o)
            for (int64_t j = 0; j < t; ++j) out[static_cast<size_t>(o * t + j)] = bv[static_cast<size_t>(o)];
    }
    if (t == 1) {
        for (int64_t o = 0; o < co; ++o) {
            const double* wr = wv.data() + o * ci;
            double acc = out[static_cast<size_t>(o)];
            for (int64_t i = 0; i < ci; ++i) acc += wr[i] * xv[static_cast<size_t>(i)];
            out[static_cast<size_t>(o)] = acc;
        }
    } else {
        for (int64_t o = 0; o < co; ++o) {
            double* orow = out.data() + o * t;
            for (int64_t i = 0; i < ci; ++i) {
                const double wv_oi = wv[static_cast<size_t>(o * ci + i)];
                const double* xrow = xv.data() + i * t;
                for (int64_t j = 0; j < t; ++j) orow[j] += wv_oi * xrow[j];
            }
        }
    }

    std::vector<Tensor> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_op({co, t}, std::move(out), std::move(inputs), [ci, co, t](TapeNode& node) {
        TensorImpl& ix = *node.inputs[0];
        TensorImpl& iw = *node.inputs[1];
        TensorImpl* ib = node.inputs.size() > 2 ? node.inputs[2].get() : nullptr;
        const std::vector<double>& go = node.out->gbuf;
        double* gx = ix.requires_grad ? grad_sink(ix).data() : nullptr;
        double* gw = iw.requires_grad ? grad_sink(iw).data() : nullptr;
        double* gb = (ib && ib->requires_grad) ? grad_sink(*ib).data() : nullptr;
        for (int64_t o = 0; o < co; ++o) {
            const double* grow = go.data() + o * t;
            if (gb) {
                double acc = 0.0;
                for (int64_t j = 0; j < t; ++j) acc += grow[j];
                gb[o] += acc;
            }
            for (int64_t i = 0; i < ci; ++i) {
                const double wv_oi = iw.values[static_cast<size_t>(o * ci + i)];
                const double* xrow = ix.values.data() + i * t;
                double acc = 0.0;
                for (int64_t j = 0; j < t; ++j) {
                    if (gx) gx[i * t + j] += wv_oi * grow[j];
                    acc += grow[j] * xrow[j];
                }
                if (gw) gw[o * ci + i] += acc;
            }
        }
    });
}

// ---- conv1d ----

int64_t conv1d_out_len(int64_t t, int kernel, const Conv1dGeom& g) {
    const int64_t span = static_cast<int64_t>(g.dilation) * (kernel - 1) + 1;
    const int64_t padded = t + 2 * g.padding;
    if (padded < span) return 0;
    return (padded - span) / g.stride + 1;
}

static void check_conv_geom(const Conv1dGeom& g, const char* op) {
    if (g.stride < 1 || g.dilation < 1 || g.groups < 1 || g.padding < 0)
        throw config_error(cat(op, ": bad geometry stride=", g.stride, " dilation=", g.dilation,
                               " groups=", g.groups, " padding=", g.padding));
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv1dGeom& g) {
    require_rank2(x, "conv1d");
    check_conv_geom(g, "conv1d");
    if (w.rank() != 3)
        throw config_error(cat("conv1d: weight must be (Co,Ci/groups,K), got ", shape_str(w.shape())));
    const int64_t ci = x.dim(0), t = x.dim(1);
    const int64_t co = w.dim(0), cig = w.dim(1);
    const int k = static_cast<int>(w.dim(2));
    if (ci % g.groups != 0 || co % g.groups != 0)
        throw config_error(cat("conv1d: channels (in=", ci, ", out=", co,
                               ") not divisible by groups=", g.groups));
    if (cig != ci / g.groups)
        throw config_error(cat("conv1d: weight expects ", cig, " channels per group, input has ",
                               ci / g.groups));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw config_error(cat("conv1d: bias must be (", co, "), got ", shape_str(bias.shape())));
    const int64_t to = conv1d_out_len(t, k, g);
    if (to <= 0)
        throw precondition_error(cat("conv1d: input of ", t, " frames too short for kernel ", k,
                                     " dilation ", g.dilation, " padding ", g.padding));

    const int64_t co_per_g = co / g.groups;
    const std::vector<double>& xv = x.values();
    const std::vector<double>& wv = w.values();
    std::vector<double> out(static_cast<size_t>(co * to), 0.0);
    if (bias.defined()) {
        const std::vector<double>& bv = bias.values();
        for (int64_t o = 0; o < co; ++o) {
            double* orow = out.data() + o * to;
            const double b = bv[static_cast<size_t>(o)];
            for (int64_t j = 0; j < to; ++j) orow[j] = b;
        }
    }
    const int64_t s = g.stride, d = g.dilation, p = g.padding;
    for (int64_t o = 0; o < co; ++o) {
        const int64_t grp = o / co_per_g;
        double* orow = out.data() + o * to;
        for (int64_t ig = 0; ig < cig; ++ig) {
            const int64_t i = grp * cig + ig;
            const double* xrow = xv.data() + i * t;
            const double* wrow = wv.data() + (o * cig + ig) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double wkk = wrow[kk];
                if (wkk == 0.0) continue;
                const int64_t base = static_cast<int64_t>(kk) * d - p;
                // valid output range: 0 <= j*s + base < t
                int64_t j0 = base < 0 ? (-base + s - 1) / s : 0;
                int64_t j1 = (t - base + s - 1) / s;  // exclusive
                if (j1 > to) j1 = to;
                const double* xp = xrow + base + j0 * s;
                for (int64_t j = j0; j < j1; ++j, xp += s) orow[j] += wkk * *xp;
            }
        }
    }

    std::vector<Tensor> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_op({co, to}, std::move(out), std::move(inputs),
                   [ci, co, t, to, k, cig, co_per_g, s, d, p](TapeNode& node) {
                       TensorImpl& ix = *node.inputs[0];
                       TensorImpl& iw = *node.inputs[1];
                       TensorImpl* ib = node.inputs.size() > 2 ? node.inputs[2].get() : nullptr;
                       const std::vector<double>& go = node.out->gbuf;
                       double* gx = ix.requires_grad ? grad_sink(ix).data() : nullptr;
                       double* gw = iw.requires_grad ? grad_sink(iw).data() : nullptr;
                       double* gb = (ib && ib->requires_grad) ? grad_sink(*ib).data() : nullptr;
                       for (int64_t o = 0; o < co; ++o) {
                           const int64_t grp = o / co_per_g;
                           const double* grow = go.data() + o * to;
                           if (gb) {
                               double acc = 0.0;
                               for (int64_t j = 0; j < to; ++j) acc += grow[j];
                               gb[o] += acc;
                           }
                           for (int64_t ig = 0; ig < cig; ++ig) {
                               const int64_t i = grp * cig + ig;
                               const double* xrow = ix.values.data() + i * t;
                               const double* wrow = iw.values.data() + (o * cig + ig) * k;
                               double* gxrow = gx ? gx + i * t : nullptr;
                               double* gwrow = gw ? gw + (o * cig + ig) * k : nullptr;
                               for (int kk = 0; kk < k; ++kk) {
                                   const int64_t base = static_cast<int64_t>(kk) * d - p;
                                   int64_t j0 = base < 0 ? (-base + s - 1) / s : 0;
                                   int64_t j1 = (t - base + s - 1) / s;
                                   if (j1 > to) j1 = to;
                                   if (j0 >= j1) continue;
                                   if (gwrow) {
                                       double acc = 0.0;
                                       const double* xp = xrow + base + j0 * s;
                                       for (int64_t j = j0; j < j1; ++j, xp += s)
                                           acc += grow[j] * *xp;
                                       gwrow[kk] += acc;
                                   }
                                   if (gxrow) {
                                       const double wkk = wrow[kk];
                                       double* xp = gxrow + base + j0 * s;
                                       for (int64_t j = j0; j < j1; ++j, xp += s)
                                           *xp += wkk * grow[j];
                                   }
                               }
                           }
                       }
                   });
}

// ---- conv1d_transpose ----

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int padding) {
    require_rank2(x, "conv1d_transpose");
    if (stride < 1 || padding < 0)
        throw config_error(cat("conv1d_transpose: bad geometry stride=", stride,
                               " padding=", padding));
    if (w.rank() != 3)
        throw config_error(cat("conv1d_transpose: weight must be (Ci,Co,K), got ",
                               shape_str(w.shape())));
    const int64_t ci = x.dim(0), t = x.dim(1);
    if (w.dim(0) != ci)
        throw config_error(cat("conv1d_transpose: weight ", shape_str(w.shape()),
                               " does not accept ", ci, " input channels"));
    const int64_t co = w.dim(1);
    const int k = static_cast<int>(w.dim(2));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw config_error(cat("conv1d_transpose: bias must be (", co, "), got ",
                               shape_str(bias.shape())));
    const int64_t to = (t - 1) * stride - 2 * static_cast<int64_t>(padding) + k;
    if (to <= 0)
        throw precondition_error(cat("conv1d_transpose: output collapses to ", to,
                                     " frames (input ", t, ", kernel ", k, ", stride ", stride,
                                     ", padding ", padding, ")"));

    const std::vector<double>& xv = x.values();
    const std::vector<double>& wv = w.values();
    std::vector<double> out(static_cast<size_t>(co * to), 0.0);
    if (bias.defined()) {
        const std::vector<double>& bv = bias.values();
        for (int64_t o = 0; o < co; ++o) {
            double* orow = out.data() + o * to;
            const double b = bv[static_cast<size_t>(o)];
            for (int64_t j = 0; j < to; ++j) orow[j] = b;
        }
    }
    const int64_t s = stride, p = padding;
    for (int64_t i = 0; i < ci; ++i) {
        const double* xrow = xv.data() + i * t;
        for (int64_t o = 0; o < co; ++o) {
            double* orow = out.data() + o * to;
            const double* wrow = wv.data() + (i * co + o) * k;
            for (int kk = 0; kk < k; ++kk) {
                const double wkk = wrow[kk];
                if (wkk == 0.0) continue;
                const int64_t base = static_cast<int64_t>(kk) - p;
                // out index j*s + base must land in [0, to)
                int64_t j0 = base < 0 ? (-base + s - 1) / s : 0;
                int64_t j1 = (to - base + s - 1) / s;
                if (j1 > t) j1 = t;
                double* op_ = orow + base + j0 * s;
                for (int64_t j = j0; j < j1; ++j, op_ += s) *op_ += wkk * xrow[j];
            }
        }
    }

    std::vector<Tensor> inputs = {x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_op({co, to}, std::move(out), std::move(inputs),
                   [ci, co, t, to, k, s, p](TapeNode& node) {
                       TensorImpl& ix = *node.inputs[0];
                       TensorImpl& iw = *node.inputs[1];
                       TensorImpl* ib = node.inputs.size() > 2 ? node.inputs[2].get() : nullptr;
                       const std::vector<double>& go = node.out->gbuf;
                       double* gx = ix.requires_grad ? grad_sink(ix).data() : nullptr;
                       double* gw = iw.requires_grad ? grad_sink(iw).data() : nullptr;
                       if (ib && ib->requires_grad) {
                           double* gb = grad_sink(*ib).data();
                           for (int64_t o = 0; o < co; ++o) {
                               const double* grow = go.data() + o * to;
                               double acc = 0.0;
                               for (int64_t j = 0; j < to; ++j) acc += grow[j];
                               gb[o] += acc;
                           }
                       }
                       for (int64_t i = 0; i < ci; ++i) {
                           const double* xrow = ix.values.data() + i * t;
                           double* gxrow = gx ? gx + i * t : nullptr;
                           for (int64_t o = 0; o < co; ++o) {
                               const double* grow = go.data() + o * to;
                               const double* wrow = iw.values.data() + (i * co + o) * k;
                               double* gwrow = gw ? gw + (i * co + o) * k : nullptr;
                               for (int kk = 0; kk < k; ++kk) {
                                   const int64_t base = static_cast<int64_t>(kk) - p;
                                   int64_t j0 = base < 0 ? (-base + s - 1) / s : 0;
                                   int64_t j1 = (to - base + s - 1) / s;
                                   if (j1 > t) j1 = t;
                                   if (j0 >= j1) continue;
                                   if (gwrow) {
                                       double acc = 0.0;
                                       const double* gp = grow + base + j0 * s;
                                       for (int64_t j = j0; j < j1; ++j, gp += s)
                                           acc += *gp * xrow[j];
                                       gwrow[kk] += acc;
                                   }
                                   if (gxrow) {
                                       const double wkk = wrow[kk];
                                       const double* gp = grow + base + j0 * s;
                                       for (int64_t j = j0; j < j1; ++j, gp += s)
                                           gxrow[j] += wkk * *gp;
                                   }
                               }
                           }
                       }
                   });
}

// ---- weight norm ----

Tensor weight_norm(const Tensor& v, const Tensor& g) {
    if (v.rank() < 2)
        throw config_error(cat("weight_norm: direction needs rank >= 2, got ",
                               shape_str(v.shape())));
    const int64_t co = v.dim(0);
    const int64_t per = v.numel() / co;
    if (g.numel() != co)
        throw config_error(cat("weight_norm: magnitude must hold ", co, " scalars, got ",
                               shape_str(g.shape())));
    const std::vector<double>& vv = v.values();
    const std::vector<double>& gv = g.values();
    std::vector<double> norms(static_cast<size_t>(co));
    std::vector<double> out(vv.size());
    for (int64_t o = 0; o < co; ++o) {
        const double* row = vv.data() + o * per;
        double ss = 0.0;
        for (int64_t i = 0; i < per; ++i) ss += row[i] * row[i];
        const double n = std::sqrt(ss);
        if (n == 0.0)
            throw numeric_error(cat("weight_norm: direction row ", o, " has zero norm"));
        norms[static_cast<size_t>(o)] = n;
        const double scale = gv[static_cast<size_t>(o)] / n;
        double* orow = out.data() + o * per;
        for (int64_t i = 0; i < per; ++i) orow[i] = scale * row[i];
    }
    return make_op(v.shape(), std::move(out), {v, g}, [co, per, norms](TapeNode& node) {
        TensorImpl& iv = *node.inputs[0];
        TensorImpl& ig = *node.inputs[1];
        const std::vector<double>& go = node.out->gbuf;
        double* gv_ = iv.requires_grad ? grad_sink(iv).data() : nullptr;
        double* gg = ig.requires_grad ? grad_sink(ig).data() : nullptr;
        for (int64_t o = 0; o < co; ++o) {
            const double n = norms[static_cast<size_t>(o)];
            const double mag = ig.values[static_cast<size_t>(o)];
            const double* vrow = iv.values.data() + o * per;
            const double* grow = go.data() + o * per;
            double dot = 0.0;  // <gout_o, v_o>
            for (int64_t i = 0; i < per; ++i) dot += grow[i] * vrow[i];
            if (gg) gg[o] += dot / n;
            if (gv_) {
                const double a = mag / n;
                const double b = mag * dot / (n * n * n);
                double* gvrow = gv_ + o * per;
                for (int64_t i = 0; i < per; ++i) gvrow[i] += a * grow[i] - b * vrow[i];
            }
        }
    });
}

}  // namespace dbmif
