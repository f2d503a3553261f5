#pragma once

#include <functional>

#include "lvae/data.hpp"
#include "lvae/models.hpp"

namespace lvae {

/// Per-pixel mean squared error over a region: sum(region * (a-b)^2) /
/// (|region| * channels), in native [-1,1]^2 units. a, b are [C,H,W]; region
/// is [1,H,W] in {0,1} and must select at least one pixel.
double mse_region(const Tensor& a, const Tensor& b, const Tensor& region);

/// Native units -> the scale used for reporting (pixel range [0,255], divided
/// by 100), so desk-scale numbers are comparable to published face tables.
double to_table_units(double native_mse);

/// Convolutional image -> attribute regressor (the foreground encoder shape
/// with the attribute stream removed and a linear output head).
struct AttrRegressor {
  ArchitectureSpec spec;
  ParamStore params;
};

struct RegressorConfig {
  int epochs = 10;
  int batch = 32;
  float lr = 1e-3f;
  uint64_t seed = 1;
};

struct RegressorResult {
  AttrRegressor regressor;
  double test_cosine = 0.0;  // reference ceiling on ground-truth test images
  double test_mse = 0.0;
};

RegressorResult train_regressor(const Dataset& ds, const ArchitectureSpec& spec,
                                const RegressorConfig& cfg);

/// Predicted attributes for a batch of images ([N,C,H,W] -> [N,n_y]).
Tensor regress_attributes(const AttrRegressor& reg, const Tensor& images);

double cosine_similarity(const float* a, const float* b, int n);

/// Provides the j-th sample image for the i-th test attribute vector.
using SampleFn = std::function<Tensor(int y_index, int sample_index)>;

struct FidelityResult {
  double cosine = 0.0;  // mean over test attributes of the best-of-k cosine
  double mse = 0.0;     // mean of the best-of-k (lowest) attribute MSE
};

/// Best-of-k attribute-space fidelity of generated samples, scored by the
/// shared regressor.
FidelityResult attr_fidelity(const AttrRegressor& reg, const Tensor& test_y,
                             int samples_per_y, const SampleFn& samples);

/// Convenience: samples_per_y draws from the model per test attribute vector,
/// deterministic in `seed`.
FidelityResult attr_fidelity_model(const Model& model, const AttrRegressor& reg,
                                   const Tensor& test_y, int samples_per_y, uint64_t seed);

struct NnMatch {
  size_t example_index = 0;  // index into ds.examples
  double distance = 0.0;     // attribute-space MSE
};

/// Exact linear scan over the training split; ties break toward the lowest id.
NnMatch nn_baseline(const Dataset& ds, const Tensor& query_y);

/// 5x5 box filter with edge-replicate padding ([C,H,W]).
Tensor box_blur5(const Tensor& img);

}  // namespace lvae
