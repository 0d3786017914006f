#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pyratten {

// Compute type. The 64-bit variant of the library is built with
// PYRATTEN_DOUBLE defined; everything else is precision agnostic.
#ifdef PYRATTEN_DOUBLE
using Real = double;
#else
using Real = float;
#endif

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
// Incompatible extents between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};
// An operation would produce an empty extent.
class GeometryError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
class DatasetError : public Error {
 public:
  using Error::Error;
};

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  int operator[](int axis) const;
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense (N, C, H, W) array with an optional gradient buffer. Copies share
// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor scalar(Real v) { return Tensor(Shape{}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const Real> data() const;
  // Raw write access. Only for freshly created tensors, parameter updates
  // and initialisation; op outputs are treated as immutable.
  std::span<Real> mutable_data();
  Real at(int n, int c, int h, int w) const;
  Real item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> grad_mut();  // allocates a zero buffer on first use
  void zero_grad();
  void clear_grad();

  Tensor clone() const;  // data only, no grad, no tape history
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Records backward rules for the ops executed while it is the current tape.
// Single-threaded: record and backward must happen on the thread that owns
// the TapeScope.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(Node&)> backward;
  };

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void(Node&)> backward);
  // Seeds d(root)/d(root) = 1 and replays nodes in reverse order. Root must
  // hold a single element.
  void backward(const Tensor& root);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  static Tape* current();

 private:
  friend class TapeScope;
  std::vector<Node> nodes_;
};

// Makes `tape` current for the lifetime of the scope (nestable).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Disables recording for the lifetime of the scope.
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace pyratten
