#include "lvae/models.hpp"

namespace lvae {

NodeId composite(Tape& t, NodeId x_f, NodeId g, NodeId x_b) {
  const Tensor& fv = t.value(x_f);
  const Tensor& gv = t.value(g);
  const Tensor& bv = t.value(x_b);
  check(fv.rank() == 4 && gv.rank() == 4 && bv.rank() == 4,
        "composite: all inputs must be [N,C,H,W]");
  check(fv.same_shape(bv), "composite: x_F " + shape_str(fv.shape) + " vs x_B " +
                               shape_str(bv.shape));
  NodeId gate = g;
  if (gv.shape[1] == 1 && fv.shape[1] != 1) {
    check(gv.shape[0] == fv.shape[0] && gv.shape[2] == fv.shape[2] &&
              gv.shape[3] == fv.shape[3],
          "composite: gate " + shape_str(gv.shape) + " incompatible with image " +
              shape_str(fv.shape));
    gate = ops::broadcast_channels(t, g, fv.shape[1]);
  } else {
    check(gv.same_shape(fv), "composite: gate " + shape_str(gv.shape) +
                                 " incompatible with image " + shape_str(fv.shape));
  }
  return ops::add(t, x_f, ops::mul(t, x_b, gate));
}

namespace {

double node_scalar(const Tape& t, NodeId id) { return t.scalar_value(id); }

}  // namespace

ElboTerms cvae_elbo(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                    ModelKind kind, NodeId x, NodeId y, NodeId eps, const ForwardOpts& opts) {
  check(kind != ModelKind::kDisCvae, "cvae_elbo: use discvae_elbo for the layered model");
  const bool conditional = kind == ModelKind::kCvae;
  check(!conditional || y >= 0, "cvae_elbo: cvae requires an attribute node");
  const int batch = t.value(x).shape[0];
  const float inv_batch = 1.0f / static_cast<float>(batch);

  std::vector<NodeId> enc_vecs;
  if (conditional) enc_vecs.push_back(y);
  GaussianParams q = encode(t, p, spec, kind, EncoderRole::kMain, {x}, enc_vecs, opts.train,
                            opts.dropout_rng);
  NodeId z = reparameterize(t, q, eps);

  std::vector<NodeId> dec_vecs;
  if (conditional) dec_vecs.push_back(y);
  dec_vecs.push_back(z);
  DecodeOut dec = decode(t, p, spec, kind, DecoderRole::kMain, dec_vecs);

  NodeId kl = ops::scale(t, kl_std_normal(t, q), inv_batch);
  NodeId rec = ops::scale(t, recon_l2(t, dec.image, x), opts.recon_weight * inv_batch);

  ElboTerms terms;
  terms.lambda_g = opts.lambda_g;
  terms.total_node = ops::add(t, kl, rec);
  terms.kl_fg = node_scalar(t, kl);
  terms.loss_full = node_scalar(t, rec);
  terms.total = node_scalar(t, terms.total_node);
  return terms;
}

DisForward discvae_forward(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                           NodeId x, NodeId x_f, NodeId g, NodeId y, NodeId eps_f,
                           NodeId eps_b, const ForwardOpts& opts) {
  DisForward fwd;
  // q(z_F | x_F, g, y)
  fwd.q_f = encode(t, p, spec, ModelKind::kDisCvae, EncoderRole::kForeground, {x_f, g}, {y},
                   opts.train, opts.dropout_rng);
  fwd.z_f = reparameterize(t, fwd.q_f, eps_f);
  // q(z_B | z_F, x_F, g, x, y); the z_F link exists in the recognition model only
  fwd.q_b = encode(t, p, spec, ModelKind::kDisCvae, EncoderRole::kBackground, {x_f, g, x},
                   {y, fwd.z_f}, opts.train, opts.dropout_rng);
  fwd.z_b = reparameterize(t, fwd.q_b, eps_b);

  DecodeOut dec_f = decode(t, p, spec, ModelKind::kDisCvae, DecoderRole::kForeground,
                           {y, fwd.z_f});
  DecodeOut dec_b = decode(t, p, spec, ModelKind::kDisCvae, DecoderRole::kBackground,
                           {fwd.z_b});
  fwd.out.x_f = dec_f.image;
  fwd.out.g = dec_f.gate;
  fwd.out.x_b = dec_b.image;
  fwd.out.x = composite(t, fwd.out.x_f, fwd.out.g, fwd.out.x_b);
  return fwd;
}

ElboTerms discvae_elbo(Tape& t, const BoundParams& p, const ArchitectureSpec& spec, NodeId x,
                       NodeId x_f, NodeId g, NodeId y, NodeId eps_f, NodeId eps_b,
                       const ForwardOpts& opts) {
  const int batch = t.value(x).shape[0];
  const float inv_batch = 1.0f / static_cast<float>(batch);
  DisForward fwd = discvae_forward(t, p, spec, x, x_f, g, y, eps_f, eps_b, opts);

  NodeId kl_f = ops::scale(t, kl_std_normal(t, fwd.q_f), inv_batch);
  NodeId kl_b = ops::scale(t, kl_std_normal(t, fwd.q_b), inv_batch);
  NodeId rec_f = ops::scale(t, recon_l2(t, fwd.out.x_f, x_f), opts.recon_weight * inv_batch);
  NodeId ce_g = ops::scale(t, mask_ce(t, fwd.out.g, g), opts.lambda_g * inv_batch);
  NodeId rec_x = ops::scale(t, recon_l2(t, fwd.out.x, x), opts.recon_weight * inv_batch);

  ElboTerms terms;
  terms.lambda_g = opts.lambda_g;
  terms.total_node =
      ops::add(t, ops::add(t, ops::add(t, kl_f, kl_b), ops::add(t, rec_f, ce_g)), rec_x);
  terms.kl_fg = node_scalar(t, kl_f);
  terms.kl_bg = node_scalar(t, kl_b);
  terms.loss_fg = node_scalar(t, rec_f);
  terms.loss_mask = node_scalar(t, ce_g);
  terms.loss_full = node_scalar(t, rec_x);
  terms.total = node_scalar(t, terms.total_node);
  return terms;
}

GenNodes generate_nodes(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                        ModelKind kind, NodeId y, NodeId z) {
  const Tensor& zv = t.value(z);
  check(zv.rank() == 2 && zv.shape[1] == spec.n_z(),
        "generate: latent must be [N," + std::to_string(spec.n_z()) + "], got " +
            shape_str(zv.shape));
  GenNodes out;
  if (kind == ModelKind::kDisCvae) {
    check(y >= 0, "generate: discvae requires attributes");
    NodeId z_f = ops::slice(t, z, 0, spec.n_zf);
    NodeId z_b = ops::slice(t, z, spec.n_zf, spec.n_z());
    DecodeOut dec_f = decode(t, p, spec, kind, DecoderRole::kForeground, {y, z_f});
    DecodeOut dec_b = decode(t, p, spec, kind, DecoderRole::kBackground, {z_b});
    out.x_f = dec_f.image;
    out.g = dec_f.gate;
    out.x_b = dec_b.image;
    out.x = composite(t, out.x_f, out.g, out.x_b);
  } else {
    std::vector<NodeId> vecs;
    if (kind == ModelKind::kCvae) {
      check(y >= 0, "generate: cvae requires attributes");
      vecs.push_back(y);
    }
    vecs.push_back(z);
    out.x = decode(t, p, spec, kind, DecoderRole::kMain, vecs).image;
  }
  return out;
}

GenerateResult generate(const Model& model, const Tensor& y, const Tensor* z_f,
                        const Tensor* z_b, Rng& rng) {
  const ArchitectureSpec& spec = model.spec;
  int batch = 1;
  if (model.kind != ModelKind::kVae) {
    check(y.rank() == 2 && y.shape[1] == spec.n_y,
          "generate: attributes must be [N," + std::to_string(spec.n_y) + "], got " +
              shape_str(y.shape));
    batch = y.shape[0];
  } else if (z_f != nullptr) {
    batch = z_f->shape[0];
  }
  GenerateResult res;
  res.z_f = z_f != nullptr ? *z_f : rng.normal_tensor({batch, spec.n_zf});
  res.z_b = z_b != nullptr ? *z_b : rng.normal_tensor({batch, spec.n_zb});
  check(res.z_f.rank() == 2 && res.z_f.shape[0] == batch && res.z_f.shape[1] == spec.n_zf,
        "generate: z_F must be [N," + std::to_string(spec.n_zf) + "]");
  check(res.z_b.rank() == 2 && res.z_b.shape[0] == batch && res.z_b.shape[1] == spec.n_zb,
        "generate: z_B must be [N," + std::to_string(spec.n_zb) + "]");

  Tensor z({batch, spec.n_z()});
  for (int i = 0; i < batch; ++i) {
    std::copy(res.z_f.data.begin() + static_cast<size_t>(i) * spec.n_zf,
              res.z_f.data.begin() + static_cast<size_t>(i + 1) * spec.n_zf,
              z.data.begin() + static_cast<size_t>(i) * spec.n_z());
    std::copy(res.z_b.data.begin() + static_cast<size_t>(i) * spec.n_zb,
              res.z_b.data.begin() + static_cast<size_t>(i + 1) * spec.n_zb,
              z.data.begin() + static_cast<size_t>(i) * spec.n_z() + spec.n_zf);
  }

  Tape t;
  BoundParams bp = bind_params(t, model.params, /*requires_grad=*/false);
  NodeId yn = model.kind == ModelKind::kVae ? -1 : t.constant(y);
  GenNodes nodes = generate_nodes(t, bp, spec, model.kind, yn, t.constant(z));
  res.x = t.value(nodes.x);
  if (model.kind == ModelKind::kDisCvae) {
    res.x_f = t.value(nodes.x_f);
    res.g = t.value(nodes.g);
    res.x_b = t.value(nodes.x_b);
  }
  return res;
}

}  // namespace lvae
