#pragma once

#include <functional>

#include "lvae/models.hpp"

namespace lvae {

/// Energy-minimization settings for latent inference:
/// min_z ||mu(z,y) - x||^2 (over observed pixels) + lambda ||z||^2.
struct InferenceConfig {
  float lambda = 1e-2f;
  int steps = 1000;
  float lr = 0.3f;
  int restarts = 1;  // random restarts beyond the deterministic start
  uint64_t seed = 0;
  bool warm_start = false;  // initialize from the recognition network (vae/cvae)

  void validate() const;
};

/// Builds the decode of a latent batch [M,n_z] on the given tape.
using DecoderFn = std::function<NodeId(Tape&, NodeId z)>;

struct InferenceResult {
  Tensor z;                            // [M, n_z], best restart per image
  Tensor decoded;                      // decode(z), [M,...]
  std::vector<double> energy;          // final energy per image
  std::vector<double> initial_energy;  // energy at the deterministic start
  double monotone_fraction = 1.0;      // share of non-increasing energy steps
};

/// ADAM descent on z for a batch of targets. Images in the batch are
/// independent: ADAM is coordinate-wise, so batching changes nothing but
/// throughput. `mask` (optional) is [M,1,H,W] in {0,1}, 1 = observed.
/// Start at z = 0 (or `init` when given), then `restarts` draws from N(0,I);
/// keeps the lowest-energy z per image.
InferenceResult infer_latent(const DecoderFn& dec, int n_z, const Tensor& x_target,
                             const Tensor* mask, const InferenceConfig& cfg,
                             const Tensor* init = nullptr);

/// Generation-path inference for a trained model (no encoder involvement
/// unless warm_start is set, which is only available for vae/cvae).
InferenceResult infer_latent(const Model& model, const Tensor& y, const Tensor& x_target,
                             const Tensor* mask, const InferenceConfig& cfg);

struct ReconstructResult {
  Tensor images;  // decoded at the inferred latents
  std::vector<double> mse_full;  // per image, native [-1,1]^2 units
  std::vector<double> mse_fg;    // empty when no ground-truth gate was given
  InferenceResult inference;
};

/// Full-image reconstruction; gt_gate ([M,1,H,W], optional) defines the
/// foreground region g < 0.5 for the foreground-restricted error.
ReconstructResult reconstruct(const Model& model, const Tensor& x, const Tensor& y,
                              const InferenceConfig& cfg, const Tensor* gt_gate = nullptr);

struct CompleteResult {
  Tensor filled;  // observed pixels copied from the input, rest decoded
  InferenceResult inference;
};

/// Completion: the energy sees observed pixels only; occluded pixels of the
/// input are expected to be zeroed already.
CompleteResult complete(const Model& model, const Tensor& x_occluded, const Tensor& mask,
                        const Tensor& y, const InferenceConfig& cfg);

enum class OcclusionKind { kEye, kMouth, kFace, kHalf, kBlock8, kBlock16 };

OcclusionKind occlusion_kind_from_name(const std::string& name);
std::string occlusion_kind_name(OcclusionKind k);

/// [1,H,W] indicator, 1 = observed. Face-region kinds are deterministic
/// fractional rectangles; block kinds are placed uniformly at random.
Tensor make_occlusion(int image_size, OcclusionKind kind, Rng& rng);

}  // namespace lvae
