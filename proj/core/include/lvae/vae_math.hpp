#pragma once

#include <optional>

#include "lvae/tape.hpp"

namespace lvae {

/// Diagonal Gaussian over a latent space, recorded on a tape.
/// mu and logvar are [N,D] nodes of identical shape; logvar is expected to be
/// clamped to [-20, 20] by whoever produced it.
struct GaussianParams {
  NodeId mu;
  NodeId logvar;
};

constexpr float kLogvarClamp = 20.0f;

/// z = mu + exp(logvar/2) * eps. Noise is always injected by the caller.
NodeId reparameterize(Tape& t, const GaussianParams& q, NodeId eps);

/// KL(N(mu, diag(exp(logvar))) || N(0, I)) summed over dims (and batch).
/// -1/2 * sum(1 + logvar - mu^2 - exp(logvar)); nonnegative.
NodeId kl_std_normal(Tape& t, const GaussianParams& q);

/// Summed squared error, optionally restricted by a {0,1} mask constant.
NodeId recon_l2(Tape& t, NodeId pred, NodeId target,
                std::optional<NodeId> mask = std::nullopt);

/// Binary cross entropy summed over elements; probabilities are clamped to
/// [1e-7, 1-1e-7] before the logs.
NodeId mask_ce(Tape& t, NodeId g_prob, NodeId g_target);

}  // namespace lvae
