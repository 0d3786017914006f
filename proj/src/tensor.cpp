#include "pyratten/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pyratten {

int Shape::operator[](int axis) const {
  switch (axis) {
    case 0: return n;
    case 1: return c;
    case 2: return h;
    case 3: return w;
    default: throw ShapeError("axis " + std::to_string(axis) + " out of range for rank 4");
  }
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, Real fill) : impl_(std::make_shared<Impl>()) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw GeometryError("tensor extents must be >= 1, got " + shape.str());
  }
  impl_->shape = shape;
  impl_->data.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : Tensor(shape) {
  if (values.size() != shape.numel()) {
    throw ShapeError("tensor of shape " + shape.str() + " needs " +
                     std::to_string(shape.numel()) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_->data = std::move(values);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->shape;
}

std::span<const Real> Tensor::data() const {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

std::span<Real> Tensor::mutable_data() {
  if (!impl_) throw Error("use of undefined tensor");
  return impl_->data;
}

Real Tensor::at(int n, int c, int h, int w) const {
  const Shape& s = shape();
  return impl_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

Real Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape().str());
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!impl_) throw Error("use of undefined tensor");
  impl_->requires_grad = on;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient");
  return impl_->grad;
}

std::span<Real> Tensor::grad_mut() {
  if (!impl_) throw Error("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty()) {
    std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
  }
}

void Tensor::clear_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

Tensor Tensor::clone() const {
  Tensor out(shape());
  std::copy(impl_->data.begin(), impl_->data.end(), out.impl_->data.begin());
  return out;
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}  // namespace

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::string op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void(Node&)> backward) {
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output),
                        std::move(backward)});
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw ShapeError("backward root must be a single element, got " +
                     root.shape().str());
  }
  Tensor seed = root;
  seed.grad_mut()[0] += Real(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // Nodes whose output never received a gradient are not on a path to root.
    if (!it->output.has_grad()) continue;
    it->backward(*it);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_current_tape) {
  g_current_tape = &tape;
}

TapeScope::~TapeScope() { g_current_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_current_tape) {
  g_current_tape = nullptr;
}

NoTapeScope::~NoTapeScope() { g_current_tape = previous_; }

}  // namespace pyratten
