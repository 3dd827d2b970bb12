#include "threatlens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "threatlens/errors.hpp"

namespace threatlens {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), storage_(std::make_shared<Storage>()) {
  storage_->values.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), storage_(std::make_shared<Storage>()) {
  if (values.size() != shape_size(shape_)) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " given " +
                     std::to_string(values.size()) + " values");
  }
  storage_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::size() const noexcept { return storage_ ? storage_->values.size() : 0; }

std::span<double> Tensor::values() { return storage_->values; }
std::span<const double> Tensor::values() const { return storage_->values; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return storage_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return storage_->values[r * shape_.back() + c];
}

bool Tensor::requires_grad() const noexcept { return storage_ && storage_->requires_grad; }

void Tensor::set_requires_grad(bool value) { storage_->requires_grad = value; }

bool Tensor::has_grad() const noexcept { return storage_ && !storage_->grad.empty(); }

std::span<double> Tensor::grad() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->values.size(), 0.0);
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (!storage_->grad.empty()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
}

void Tensor::drop_grad() {
  storage_->grad.clear();
  storage_->grad.shrink_to_fit();
}

Tensor Tensor::clone() const {
  Tensor copy(shape_, storage_->values);
  copy.set_requires_grad(requires_grad());
  return copy;
}

void Tensor::assign(std::span<const double> values) {
  if (values.size() != size()) {
    throw ShapeError("assign of " + std::to_string(values.size()) + " values to " +
                     shape_string(shape_));
  }
  std::copy(values.begin(), values.end(), storage_->values.begin());
}

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& entry : named) out.push_back(entry.tensor);
  return out;
}

void Tape::record(std::function<void()> backward) {
  if (recording_) steps_.push_back(std::move(backward));
}

void Tape::backward(Tensor root) {
  if (root.size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " + shape_string(root.shape()));
  }
  root.grad()[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  steps_.clear();
}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::index(std::size_t n) {
  // rejection sampling: unbiased modulo
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return static_cast<std::size_t>(draw % n);
}

double Rng::normal() {
  // Box-Muller; one value per call.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

}  // namespace threatlens
