#pragma once

#include "lvae/nn.hpp"

namespace lvae {

/// A trained or trainable model: variant, architecture and parameters.
struct Model {
  ModelKind kind = ModelKind::kCvae;
  ArchitectureSpec spec;
  ParamStore params;
};

/// Decoder bundle of one layered forward pass, recorded on a tape.
/// Invariant: value(x) == value(x_f) + value(x_b) * value(g) elementwise,
/// evaluated in exactly that order.
struct LayeredOutput {
  NodeId x_f;
  NodeId g;
  NodeId x_b;
  NodeId x;
};

/// Scalar losses of one ELBO evaluation (negated lower bound, batch mean).
/// total == kl_fg + kl_bg + loss_fg + loss_mask + loss_full, where loss_mask
/// already carries its lambda_g factor.
struct ElboTerms {
  double kl_fg = 0.0;
  double kl_bg = 0.0;
  double loss_fg = 0.0;
  double loss_mask = 0.0;
  double loss_full = 0.0;
  double total = 0.0;
  float lambda_g = 1.0f;
  NodeId total_node = -1;
};

struct ForwardOpts {
  bool train = false;
  Rng* dropout_rng = nullptr;  // required when train is true and dropout > 0
  float recon_weight = 1.0f;   // absorbs the constant output variance
  float lambda_g = 1.0f;       // weight of the mask cross-entropy
};

/// x = x_F + x_B (*) g; g is [N,1,H,W] and broadcasts across color channels.
NodeId composite(Tape& t, NodeId x_f, NodeId g, NodeId x_b);

/// Single-sample Monte-Carlo ELBO of the (C)VAE. Pass y = -1 for the
/// unconditional VAE; eps must match the latent shape [N, n_z].
ElboTerms cvae_elbo(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                    ModelKind kind, NodeId x, NodeId y, NodeId eps,
                    const ForwardOpts& opts = {});

struct DisForward {
  LayeredOutput out;
  GaussianParams q_f;
  GaussianParams q_b;
  NodeId z_f;
  NodeId z_b;
};

/// Full disCVAE recognition + generation pass on observed (x, x_F, g, y).
DisForward discvae_forward(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                           NodeId x, NodeId x_f, NodeId g, NodeId y, NodeId eps_f,
                           NodeId eps_b, const ForwardOpts& opts = {});

/// disCVAE ELBO: KL(q_F) + KL(q_B) + L(x_F) + lambda_g*CE(g) + L(x).
ElboTerms discvae_elbo(Tape& t, const BoundParams& p, const ArchitectureSpec& spec, NodeId x,
                       NodeId x_f, NodeId g, NodeId y, NodeId eps_f, NodeId eps_b,
                       const ForwardOpts& opts = {});

/// Generation-path decode from a full latent node z ([N, n_z]); no encoder is
/// involved. For disCVAE, z splits into [z_F | z_B] and the layered outputs
/// are populated; otherwise only x is set.
struct GenNodes {
  NodeId x;
  NodeId x_f = -1;
  NodeId g = -1;
  NodeId x_b = -1;
};
GenNodes generate_nodes(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                        ModelKind kind, NodeId y, NodeId z);

/// Convenience generation on plain tensors. Missing latents are drawn from
/// N(0, I) using `rng`. For vae, `y` may be empty. Returned panels other than
/// x are empty unless the model is a disCVAE.
struct GenerateResult {
  Tensor x;
  Tensor x_f;
  Tensor g;
  Tensor x_b;
  Tensor z_f;  // latents actually used
  Tensor z_b;
};
GenerateResult generate(const Model& model, const Tensor& y, const Tensor* z_f,
                        const Tensor* z_b, Rng& rng);

}  // namespace lvae
