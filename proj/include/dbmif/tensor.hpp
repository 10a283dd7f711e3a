#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dbmif/common.hpp"

namespace dbmif {

// The engine computes in double everywhere.  In f32 mode every op output and
// every parameter update is rounded to the nearest float, so values stay
// exactly representable in 32 bits (checkpoints store float32 losslessly).
// f64 mode skips the rounding; finite-difference gradient checks need it.
enum class Precision { f32, f64 };

Precision engine_precision();
void set_engine_precision(Precision p);

struct PrecisionGuard {
    Precision saved;
    explicit PrecisionGuard(Precision p) : saved(engine_precision()) { set_engine_precision(p); }
    ~PrecisionGuard() { set_engine_precision(saved); }
};

bool grad_enabled();
void set_grad_enabled(bool on);

// RAII scope that suppresses tape recording (constant forward passes).
struct NoGradGuard {
    bool saved;
    NoGradGuard() : saved(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(saved); }
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // accumulated d(loss)/d(this); empty means all-zero
    std::vector<double> gbuf;  // scratch used while a backward pass is running
    bool requires_grad = false;
    int64_t node = -1;  // index of the producing tape node, -1 for leaves
};

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor from_values(Shape s, std::vector<double> v, bool requires_grad = false);
    static Tensor randn(Shape s, std::mt19937_64& rng, double stdev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int64_t dim(int i) const;
    int64_t numel() const;
    const std::vector<double>& values() const;
    double item() const;  // numel()==1 only

    // Leaves only: in-place edits would corrupt recorded graphs otherwise.
    std::vector<double>& mutable_values();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();
    // For heads that intentionally receive no gradient in a given phase:
    // gives the optimizer an explicit zero instead of a missing-grad error.
    void materialize_zero_grad();

    // New leaf sharing nothing with the graph; values copied.
    Tensor detach() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TapeNode {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> out;
    // Reads out->gbuf, deposits into inputs' gbuf (only where requires_grad).
    std::function<void(TapeNode&)> backprop;
};

class Tape {
  public:
    static Tape& instance();
    size_t size() const { return nodes_.size(); }
    void reset() { nodes_.clear(); }
    TapeNode& at(int64_t i) { return nodes_[static_cast<size_t>(i)]; }
    int64_t push(TapeNode n);

  private:
    std::vector<TapeNode> nodes_;
};

// Records one op on the tape if recording is on and any input requires grad.
// `values` must already be rounded for the active precision (use finish_values).
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(TapeNode&)> backprop);

void finish_values(std::vector<double>& v);  // f32 rounding in f32 mode
double round_scalar(double v);

// Gradient sink for `impl` during a backward pass: lazily sized gbuf.
std::vector<double>& grad_sink(TensorImpl& impl);

// Accumulates loss gradients into every requires_grad tensor on the path.
// The loss must be scalar.  Repeated calls accumulate.
void backward(const Tensor& loss);

// ---- pointwise ----
Tensor add(const Tensor& a, const Tensor& b);  // exact shape or scalar-vs-tensor
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double alpha);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor global_avg_pool(const Tensor& x);  // (C,T) -> (C,1)

// ---- shape / channel plumbing (rank-2 feature maps) ----
Tensor scale_channels(const Tensor& x, const Tensor& w);  // x:(C,T), w:(C,1)
// b + w*(a-b) with one rounding per element: exact pass-through when a==b
// elementwise, and exact selection of `a` when w==1 on float32 data.
Tensor channel_mix(const Tensor& a, const Tensor& b, const Tensor& w);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);

// ---- linear algebra ----
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);  // w:(Co,Ci), x:(Ci,T)

struct Conv1dGeom {
    int stride = 1;
    int dilation = 1;
    int groups = 1;
    int padding = 0;
};

// x:(Ci,T), w:(Co,Ci/groups,K), bias:(Co) or undefined -> (Co,To)
// To = floor((T + 2*padding - dilation*(K-1) - 1)/stride) + 1
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv1dGeom& g);

// Adjoint of conv1d over the time axis (stride/padding only).
// x:(Ci,T), w:(Ci,Co,K), bias:(Co) or undefined -> (Co, (T-1)*stride - 2*padding + K)
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
                        int padding);

// w[o,...] = g[o] * v[o,...] / ||v[o,...]||_2   (norm over all dims but the first)
Tensor weight_norm(const Tensor& v, const Tensor& g);

int64_t conv1d_out_len(int64_t t, int kernel, const Conv1dGeom& g);

}  // namespace dbmif
