#pragma once

// Dense row-major float64 tensors with a reverse-mode gradient tape.
//
// A Tensor is a cheap handle: copies share storage. Ops in ops.hpp read their
// inputs, allocate a fresh output and, when the tape is recording and some
// input requires a gradient, push a closure onto the tape that accumulates
// into the inputs' gradient buffers. Tape::backward replays those closures in
// reverse order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace threatlens {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const noexcept { return storage_ != nullptr; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;
  double at(std::size_t flat) const { return values()[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const noexcept;
  void set_requires_grad(bool value);

  bool has_grad() const noexcept;
  // Allocates a zero gradient buffer on first use. Gradients accumulate
  // through const handles too: they are not part of the tensor's value.
  std::span<double> grad() const;
  void zero_grad();
  void drop_grad();

  // Deep copy of values (and shape); no gradient, requires_grad preserved.
  Tensor clone() const;
  void assign(std::span<const double> values);

  // True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const noexcept { return storage_ == other.storage_; }

 private:
  struct Storage {
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  Shape shape_;
  std::shared_ptr<Storage> storage_;
};

// A named trainable parameter. Models expose their parameters as a list of
// these for the optimizer, checkpoints and gradient checks.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named);

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const noexcept { return recording_; }
  void record(std::function<void()> backward);
  std::size_t size() const noexcept { return steps_.size(); }

  // Seeds d(root)/d(root) = 1 and runs every recorded closure in reverse.
  // The tape is cleared afterwards.
  void backward(Tensor root);
  void clear() { steps_.clear(); }

 private:
  bool recording_;
  std::vector<std::function<void()>> steps_;
};

enum class Mode { train, infer };

// Deterministic across platforms: the mt19937_64 output sequence is fixed by
// the standard, the std distributions are not, so conversions are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64();
  double uniform();                         // [0, 1)
  double uniform(double lo, double hi);     // [lo, hi)
  std::size_t index(std::size_t n);         // [0, n)
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

  // Child seed derived from this stream; used to give independent, order-free
  // streams to sub-components.
  std::uint64_t fork() { return next_u64(); }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Glorot-uniform weights: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace threatlens
