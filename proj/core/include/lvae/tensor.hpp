#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace lvae {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense n-dimensional array of 32-bit floats, row-major.
/// Immutable by convention once handed to the tape; plain value type.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f);

  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0f); }
  static Tensor full(Shape s, float v) { return Tensor(std::move(s), v); }
  static Tensor scalar(float v);
  static Tensor from(Shape s, std::vector<float> values);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool is_scalar() const { return size() == 1; }

  float item() const;  // requires size()==1
  bool all_finite() const;

  // 4-d accessor for [N,C,H,W] tensors; no bounds checks in release paths.
  float& at4(int n, int c, int h, int w) {
    return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  float at4(int n, int c, int h, int w) const {
    return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  float& at2(int r, int c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
  float at2(int r, int c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }
};

/// Deterministic RNG used everywhere seeds matter. Gaussian via Box-Muller so
/// streams do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  double normal();

  Tensor normal_tensor(Shape s, float mean = 0.0f, float stddev = 1.0f);
  Tensor uniform_tensor(Shape s, float lo, float hi);

  /// Derive an independent stream; mixes the parent stream with `salt`.
  Rng fork(uint64_t salt);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

[[noreturn]] void fail(const std::string& msg);

inline void check(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

}  // namespace lvae
