#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lpbnn/errors.hpp"
#include "lpbnn/rng.hpp"

namespace lpbnn {

class Tape;

namespace detail {

struct TensorData {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data once allocated
    const Tape* tape = nullptr;  // tape this value was recorded on, if any

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Dense n-dimensional array of doubles with an optional gradient buffer.
// Tensor is a cheap handle: copies share the underlying storage, so a
// parameter updated in place is seen by every holder. All arithmetic is
// 64-bit; desk-scale sizes make that free and the gradient checks need
// the headroom.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor ones(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);
    static Tensor from(std::vector<int> shape, std::vector<double> data);
    // from() with requires_grad set; the usual constructor for parameters.
    static Tensor param(std::vector<int> shape, std::vector<double> data);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }

    double& at(int i) { return impl_->data[static_cast<size_t>(i)]; }
    double at(int i) const { return impl_->data[static_cast<size_t>(i)]; }
    double& at(int i, int j);
    double at(int i, int j) const;
    double& at(int i, int j, int k);
    double at(int i, int j, int k) const;

    // Value of a scalar (size-1) tensor.
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);

    const std::vector<double>& grad() const;
    void zero_grad();

    // Deep copy that drops grad tracking; used for finite-difference probes.
    Tensor detached() const;
    // Deep copy preserving requires_grad (fresh grad buffer).
    Tensor clone() const;

    bool all_finite() const;
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    std::string shape_str() const;

    std::shared_ptr<detail::TensorData> impl() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorData> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorData> impl_;

    friend Tensor wrap(std::shared_ptr<detail::TensorData>);
};

inline Tensor wrap(std::shared_ptr<detail::TensorData> impl) { return Tensor(std::move(impl)); }

// Records the operations of one forward pass so backward() can replay their
// local rules in reverse. A tape is single-threaded and single-shot; it
// becomes the active tape of the constructing thread for its lifetime
// (tapes nest as a stack). Ops record themselves only while a tape is active
// and some input requires grad.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    struct Node {
        std::shared_ptr<detail::TensorData> output;
        std::function<void()> backward;
    };

    void record(Node node) { nodes_.push_back(std::move(node)); }
    size_t node_count() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

  private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
    Tape* previous_ = nullptr;

    friend void backward(Tape& tape, const Tensor& loss);
};

// Fills grad buffers with d(loss)/d(tensor) for every requires_grad tensor
// reachable from loss. Gradients of a value used twice accumulate additively.
void backward(Tape& tape, const Tensor& loss);

enum class OpKind {
    kMatmul,
    kAdd,
    kHadamard,
    kScale,
    kRelu,
    kSoftplus,
    kExp,
    kLog,
    kSum,
    kMean,
    kSlice,
    kConcat,
};

const char* op_name(OpKind kind);

struct OpAttrs {
    double scalar = 1.0;          // kScale factor
    int axis = -1;                // kSum/kMean/kConcat; -1 = all elements
    std::vector<int> starts;      // kSlice
    std::vector<int> lengths;     // kSlice
};

// Forward primitives. Each checks input finiteness and shape conformance,
// and records a backward rule on the active tape when tracking applies.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);  // equal shapes or scalar broadcast
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);            // scalar
Tensor sum(const Tensor& a, int axis);  // 2-d only
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis);
Tensor slice(const Tensor& a, std::vector<int> starts, std::vector<int> lengths);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// Generic dispatcher over the primitive set above.
Tensor forward_primitive(OpKind kind, const std::vector<Tensor>& inputs, const OpAttrs& attrs = {});

// Identity reshape (copy with new shape metadata); gradients pass through.
Tensor reshape(const Tensor& a, std::vector<int> shape);

// Convenience compositions of the primitives.
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sum_squares(const Tensor& a);
// (k)-vector -> (n,k) by matmul with a ones column; differentiable broadcast.
Tensor broadcast_rows(const Tensor& row, int n);
// stack (k)-vectors or (1,k) rows into an (n,k) matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);
// Numerically stable row-wise softmax, differentiable.
Tensor softmax_rows(const Tensor& logits);
// Mean cross-entropy over the batch, from logits; stable log-sum-exp route.
Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels);

// Reparameterized Gaussian draw: z = mu + sigma .* eps with eps ~ N(0, I)
// from the given stream. Gradients flow to mu and sigma, never to eps.
std::pair<Tensor, Tensor> gaussian_sample(const Tensor& mu, const Tensor& sigma, RngStream& stream);
std::pair<Tensor, Tensor> gaussian_sample(const Tensor& mu, const Tensor& sigma, std::uint64_t rng_seed);

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|). f must be deterministic (freeze any sampling noise).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step);

}  // namespace lpbnn
