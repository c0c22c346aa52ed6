#include "lpbnn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace lpbnn {

namespace {

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape) {
    auto impl = std::make_shared<detail::TensorData>();
    std::int64_t n = shape_product(shape);
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<size_t>(n), 0.0);
    return wrap(std::move(impl));
}

Tensor Tensor::ones(std::vector<int> shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.data()) x = value;
    return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
    std::int64_t n = shape_product(shape);
    if (n != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape product " + std::to_string(n));
    }
    auto impl = std::make_shared<detail::TensorData>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return wrap(std::move(impl));
}

Tensor Tensor::param(std::vector<int> shape, std::vector<double> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

double& Tensor::at(int i, int j) {
    return impl_->data[static_cast<size_t>(i) * static_cast<size_t>(impl_->shape[1]) + static_cast<size_t>(j)];
}

double Tensor::at(int i, int j) const {
    return impl_->data[static_cast<size_t>(i) * static_cast<size_t>(impl_->shape[1]) + static_cast<size_t>(j)];
}

double& Tensor::at(int i, int j, int k) {
    size_t d1 = static_cast<size_t>(impl_->shape[1]);
    size_t d2 = static_cast<size_t>(impl_->shape[2]);
    return impl_->data[(static_cast<size_t>(i) * d1 + static_cast<size_t>(j)) * d2 + static_cast<size_t>(k)];
}

double Tensor::at(int i, int j, int k) const {
    size_t d1 = static_cast<size_t>(impl_->shape[1]);
    size_t d2 = static_cast<size_t>(impl_->shape[2]);
    return impl_->data[(static_cast<size_t>(i) * d1 + static_cast<size_t>(j)) * d2 + static_cast<size_t>(k)];
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a scalar tensor, got shape " + shape_str());
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool value) {
    impl_->requires_grad = value;
    if (value) impl_->ensure_grad();
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    impl_->ensure_grad();
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
    return Tensor::from(impl_->shape, impl_->data);
}

Tensor Tensor::clone() const {
    Tensor t = Tensor::from(impl_->shape, impl_->data);
    if (impl_->requires_grad) t.set_requires_grad(true);
    return t;
}

bool Tensor::all_finite() const {
    for (double x : impl_->data) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < impl_->shape.size(); ++i) {
        if (i) os << ",";
        os << impl_->shape[i];
    }
    os << ")";
    return os.str();
}

Tape::Tape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void backward(Tape& tape, const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " +
                         (loss.defined() ? loss.shape_str() : std::string("(undefined)")));
    }
    if (tape.consumed_) throw ValueError("backward: tape already consumed (single-shot per tape)");
    if (loss.impl()->tape != &tape) throw ValueError("backward: loss was not produced on this tape");
    tape.consumed_ = true;

    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = 1.0;
    for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
        if (it->backward) it->backward();
    }
}

}  // namespace lpbnn
