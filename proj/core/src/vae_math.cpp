#include "lvae/vae_math.hpp"

namespace lvae {

NodeId reparameterize(Tape& t, const GaussianParams& q, NodeId eps) {
  check(t.value(q.mu).same_shape(t.value(q.logvar)),
        "reparameterize: mu/logvar shape mismatch");
  check(t.value(eps).same_shape(t.value(q.mu)),
        "reparameterize: eps shape " + shape_str(t.value(eps).shape) +
            " does not match latent shape " + shape_str(t.value(q.mu).shape));
  NodeId std = ops::exp(t, ops::scale(t, q.logvar, 0.5f));
  return ops::add(t, q.mu, ops::mul(t, std, eps));
}

NodeId kl_std_normal(Tape& t, const GaussianParams& q) {
  check(t.value(q.mu).same_shape(t.value(q.logvar)),
        "kl_std_normal: mu/logvar shape mismatch");
  // -1/2 sum(1 + logvar - mu^2 - e^logvar)
  NodeId inner = ops::sub(t, ops::add_scalar(t, q.logvar, 1.0f),
                          ops::add(t, ops::square(t, q.mu), ops::exp(t, q.logvar)));
  return ops::scale(t, ops::sum(t, inner), -0.5f);
}

NodeId recon_l2(Tape& t, NodeId pred, NodeId target, std::optional<NodeId> mask) {
  check(t.value(pred).same_shape(t.value(target)),
        "recon_l2: pred " + shape_str(t.value(pred).shape) + " vs target " +
            shape_str(t.value(target).shape));
  NodeId sq = ops::square(t, ops::sub(t, pred, target));
  if (mask) {
    check(t.value(*mask).same_shape(t.value(pred)),
          "recon_l2: mask shape " + shape_str(t.value(*mask).shape) +
              " does not match pred");
    sq = ops::mul(t, sq, *mask);
  }
  return ops::sum(t, sq);
}

NodeId mask_ce(Tape& t, NodeId g_prob, NodeId g_target) {
  check(t.value(g_prob).same_shape(t.value(g_target)),
        "mask_ce: prob/target shape mismatch");
  const float eps = 1e-7f;
  NodeId p = ops::clamp(t, g_prob, eps, 1.0f - eps);
  const Tensor& tv = t.value(g_target);
  Tensor ones_minus(tv.shape);
  for (int64_t i = 0; i < tv.size(); ++i) ones_minus.data[i] = 1.0f - tv.data[i];
  NodeId one_minus_target = t.constant(std::move(ones_minus));
  Tensor neg_one(tv.shape, 1.0f);
  NodeId one = t.constant(std::move(neg_one));
  NodeId one_minus_p = ops::sub(t, one, p);
  NodeId pos = ops::mul(t, g_target, ops::log(t, p));
  NodeId neg = ops::mul(t, one_minus_target, ops::log(t, one_minus_p));
  return ops::scale(t, ops::sum(t, ops::add(t, pos, neg)), -1.0f);
}

}  // namespace lvae
