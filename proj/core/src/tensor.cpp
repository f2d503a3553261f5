#include "lvae/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lvae {

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, float fill) : shape(std::move(s)) {
  check(!shape.empty(), "tensor shape must be non-empty");
  for (int d : shape) check(d > 0, "tensor dims must be positive, got " + shape_str(shape));
  data.assign(static_cast<size_t>(numel(shape)), fill);
}

Tensor Tensor::scalar(float v) {
  Tensor t(Shape{1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::from(Shape s, std::vector<float> values) {
  Tensor t;
  t.shape = std::move(s);
  check(!t.shape.empty(), "tensor shape must be non-empty");
  for (int d : t.shape) check(d > 0, "tensor dims must be positive");
  check(numel(t.shape) == static_cast<int64_t>(values.size()),
        "data length " + std::to_string(values.size()) + " does not match shape " +
            shape_str(t.shape));
  t.data = std::move(values);
  return t;
}

float Tensor::item() const {
  check(size() == 1, "item() requires a scalar tensor, got " + shape_str(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

int Rng::uniform_int(int lo, int hi) {
  check(lo <= hi, "uniform_int: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  // rejection sampling keeps the draw unbiased
  uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t r;
  do {
    r = gen_();
  } while (r >= limit);
  return lo + static_cast<int>(r % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 1e-300);
  u2 = uniform();
  double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(2.0 * M_PI * u2);
  has_spare_ = true;
  return mag * std::cos(2.0 * M_PI * u2);
}

Tensor Rng::normal_tensor(Shape s, float mean, float stddev) {
  Tensor t(std::move(s));
  for (float& v : t.data) v = mean + stddev * static_cast<float>(normal());
  return t;
}

Tensor Rng::uniform_tensor(Shape s, float lo, float hi) {
  Tensor t(std::move(s));
  for (float& v : t.data) v = static_cast<float>(uniform(lo, hi));
  return t;
}

Rng Rng::fork(uint64_t salt) {
  uint64_t x = next_u64() ^ (salt * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  // splitmix64 finalizer
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return Rng(x);
}

void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace lvae
