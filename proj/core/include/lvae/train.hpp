#pragma once

#include <map>
#include <string>
#include <vector>

#include "lvae/data.hpp"
#include "lvae/models.hpp"

namespace lvae {

/// Bias-corrected ADAM. Moment tensors mirror parameter shapes; t counts
/// completed steps.
struct AdamState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t t = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

using GradMap = std::map<std::string, Tensor>;

/// Gradients of every bound parameter after backward.
GradMap collect_grads(const Tape& t, const BoundParams& bp);

/// One ADAM update; every parameter must have a gradient of matching shape.
void adam_step(AdamState& state, ParamStore& params, const GradMap& grads);

// --- augmentation -----------------------------------------------------------

enum class AugmentProfile { kNone, kFace, kBird };

AugmentProfile augment_profile_from_name(const std::string& name);
std::string augment_profile_name(AugmentProfile p);

struct AugmentOps {
  bool flip = false;
  bool channel_scale = false;
  bool residual = false;
  bool rotate = false;
  bool rescale_crop = false;
};

/// face: flip + channel scale + residual; bird adds rotation and rescale/crop.
AugmentOps augment_ops(AugmentProfile p);

/// Applies the enabled transforms with the paper's ranges. Geometric
/// transforms hit x, x_F, x_B and g identically (g resampled nearest, images
/// bilinear); photometric transforms leave g untouched; y is never changed.
LabeledExample augment(const LabeledExample& ex, Rng& rng, const AugmentOps& ops);

namespace aug {
// deterministic building blocks, exposed for direct testing
Tensor hflip(const Tensor& img);
Tensor channel_scale(const Tensor& img, const float* factors);
Tensor unsharp(const Tensor& img, float s);  // clamp(x + s*(x - box3(x)))
Tensor rotate(const Tensor& img, float theta, bool nearest);
Tensor rescale_crop(const Tensor& img, int resized, int off_x, int off_y, bool nearest);
}  // namespace aug

// --- training loop ----------------------------------------------------------

struct TrainConfig {
  ModelKind model = ModelKind::kDisCvae;
  std::string preset = "desk32";
  int batch = 32;
  float lr = 1e-3f;
  int epochs = 20;
  float lambda_g = 1.0f;
  float recon_weight = 1.0f;
  uint64_t seed = 1;
  AugmentProfile augment = AugmentProfile::kNone;
  float val_fraction = 0.1f;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_total = 0, val_total = 0;
  double kl_fg = 0, kl_bg = 0, loss_fg = 0, loss_mask = 0, loss_full = 0;
};

struct TrainResult {
  Model model;  // parameters of the best-validation epoch
  std::vector<EpochStats> trace;
  double best_val = 0.0;
  int best_epoch = 0;
};

/// Shuffled minibatch training with a held-out validation slice (selected by
/// an attribute-vector hash), best-validation retention, and full determinism
/// under a fixed (seed, config, dataset). Aborts with the offending term name
/// if the loss stops being finite.
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

/// Same, with an explicit architecture instead of the named preset.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const ArchitectureSpec& spec);

/// Deterministic validation objective of `model` on the given examples
/// (dropout off, zero-noise latents).
double validation_loss(const Model& model, const Dataset& ds,
                       const std::vector<size_t>& idx, const TrainConfig& cfg);

/// CSV: epoch,train_total,val_total,kl_fg,kl_bg,loss_fg,loss_mask,loss_full
void write_loss_trace(const std::vector<EpochStats>& trace, const std::string& path);

// --- checkpoints -------------------------------------------------------------

/// "LVAE" magic, u32 version, textual header (kind, architecture, config
/// echo), then per parameter: name, shape, raw little-endian f32 data.
void save_checkpoint(const Model& model, const std::map<std::string, std::string>& extra,
                     const std::string& path);
Model load_checkpoint(const std::string& path);

/// Architecture round-trip via flat key=value pairs (used by checkpoints and
/// resolved-config files).
std::map<std::string, std::string> spec_to_kv(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_kv(const std::map<std::string, std::string>& kv);

}  // namespace lvae
