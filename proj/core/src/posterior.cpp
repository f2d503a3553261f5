#include "lvae/posterior.hpp"

#include <algorithm>
#include <cmath>

#include "lvae/train.hpp"

namespace lvae {

void InferenceConfig::validate() const {
  check(lambda >= 0.0f, "inference config: lambda must be >= 0");
  check(steps >= 1, "inference config: steps must be >= 1");
  check(lr > 0.0f, "inference config: lr must be > 0");
  check(restarts >= 0, "inference config: restarts must be >= 0");
}

namespace {

// per-image energies computed in double from forward values
std::vector<double> image_energies(const Tensor& decoded, const Tensor& target,
                                   const Tensor* mask_full, const Tensor& z, float lambda) {
  const int m = decoded.shape[0];
  const int64_t img = decoded.size() / m;
  const int64_t zdim = z.shape[1];
  std::vector<double> e(static_cast<size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    const int64_t off = static_cast<int64_t>(i) * img;
    for (int64_t j = 0; j < img; ++j) {
      const double d = static_cast<double>(decoded.data[off + j]) - target.data[off + j];
      const double w = mask_full ? mask_full->data[off + j] : 1.0;
      acc += w * d * d;
    }
    double zn = 0.0;
    for (int64_t j = 0; j < zdim; ++j) {
      const double v = z.data[static_cast<size_t>(i) * zdim + j];
      zn += v * v;
    }
    e[static_cast<size_t>(i)] = acc + lambda * zn;
  }
  return e;
}

Tensor expand_mask(const Tensor& mask, const Tensor& like) {
  check(mask.rank() == 4 && mask.shape[0] == like.shape[0] && mask.shape[1] == 1 &&
            mask.shape[2] == like.shape[2] && mask.shape[3] == like.shape[3],
        "occlusion mask must be [M,1,H,W] matching the images, got " +
            shape_str(mask.shape));
  Tensor full(like.shape);
  const int m = like.shape[0], c = like.shape[1];
  const int64_t hw = static_cast<int64_t>(like.shape[2]) * like.shape[3];
  for (int i = 0; i < m; ++i)
    for (int ch = 0; ch < c; ++ch)
      std::copy(mask.data.begin() + static_cast<size_t>(i) * hw,
                mask.data.begin() + static_cast<size_t>(i + 1) * hw,
                full.data.begin() + (static_cast<size_t>(i) * c + ch) * hw);
  return full;
}

}  // namespace

InferenceResult infer_latent(const DecoderFn& dec, int n_z, const Tensor& x_target,
                             const Tensor* mask, const InferenceConfig& cfg,
                             const Tensor* init) {
  cfg.validate();
  check(n_z >= 1, "infer_latent: n_z must be >= 1");
  check(x_target.rank() >= 2, "infer_latent: target must be batched");
  const int m = x_target.shape[0];

  Tensor mask_full;
  if (mask != nullptr) {
    for (float v : mask->data)
      check(v == 0.0f || v == 1.0f, "occlusion mask must be binary");
    mask_full = expand_mask(*mask, x_target);
    // every image needs at least one observed pixel
    const int64_t hw = mask->size() / m;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < hw; ++j) s += mask->data[static_cast<size_t>(i) * hw + j];
      check(s > 0.0, "occlusion mask leaves image " + std::to_string(i) +
                         " with nothing observed");
    }
  }

  Rng rng(cfg.seed);
  InferenceResult best;
  best.energy.assign(static_cast<size_t>(m), std::numeric_limits<double>::infinity());
  best.z = Tensor::zeros({m, n_z});
  int64_t steps_total = 0, steps_nonincreasing = 0;

  for (int round = 0; round <= cfg.restarts; ++round) {
    Tensor z = round == 0 ? (init != nullptr ? *init : Tensor::zeros({m, n_z}))
                          : rng.normal_tensor({m, n_z});
    check(z.rank() == 2 && z.shape[0] == m && z.shape[1] == n_z,
          "infer_latent: init latent must be [M," + std::to_string(n_z) + "]");

    ParamStore zstore;
    zstore.add("z", z);
    AdamState adam;
    adam.lr = cfg.lr;

    std::vector<double> prev;
    Tensor decoded;
    for (int it = 0; it <= cfg.steps; ++it) {
      Tape t;
      NodeId zn = t.leaf(zstore.get("z"), /*requires_grad=*/true);
      NodeId out = dec(t, zn);
      check(t.value(out).same_shape(x_target),
            "infer_latent: decoder output " + shape_str(t.value(out).shape) +
                " does not match target " + shape_str(x_target.shape));

      std::vector<double> e = image_energies(
          t.value(out), x_target, mask ? &mask_full : nullptr, zstore.get("z"), cfg.lambda);
      for (double v : e)
        check(std::isfinite(v), "infer_latent: energy diverged (non-finite value)");
      if (round == 0 && it == 0) best.initial_energy = e;
      if (!prev.empty()) {
        for (int i = 0; i < m; ++i) {
          ++steps_total;
          if (e[static_cast<size_t>(i)] <= prev[static_cast<size_t>(i)] + 1e-12)
            ++steps_nonincreasing;
        }
      }
      prev = e;
      decoded = t.value(out);
      if (it == cfg.steps) break;

      NodeId diff = ops::sub(t, out, t.constant(x_target));
      NodeId sq = ops::square(t, diff);
      if (mask != nullptr) sq = ops::mul(t, sq, t.constant(mask_full));
      NodeId loss = ops::add(t, ops::sum(t, sq),
                             ops::scale(t, ops::sum(t, ops::square(t, zn)), cfg.lambda));
      t.backward(loss);
      adam_step(adam, zstore, collect_grads(t, BoundParams{{{"z", zn}}}));
    }

    for (int i = 0; i < m; ++i) {
      if (prev[static_cast<size_t>(i)] < best.energy[static_cast<size_t>(i)]) {
        best.energy[static_cast<size_t>(i)] = prev[static_cast<size_t>(i)];
        const Tensor& zf = zstore.get("z");
        std::copy(zf.data.begin() + static_cast<size_t>(i) * n_z,
                  zf.data.begin() + static_cast<size_t>(i + 1) * n_z,
                  best.z.data.begin() + static_cast<size_t>(i) * n_z);
      }
    }
  }

  best.monotone_fraction =
      steps_total == 0 ? 1.0
                       : static_cast<double>(steps_nonincreasing) /
                             static_cast<double>(steps_total);

  // decode the winning latents once more for the caller
  Tape t;
  best.decoded = t.value(dec(t, t.constant(best.z)));
  return best;
}

namespace {

DecoderFn model_decoder(const Model& model, const Tensor& y) {
  if (model.kind != ModelKind::kVae)
    check(y.rank() == 2 && y.shape[1] == model.spec.n_y,
          "infer_latent: attributes must be [M," + std::to_string(model.spec.n_y) + "]");
  return [&model, y](Tape& t, NodeId z) {
    BoundParams bp = bind_params(t, model.params, false);
    NodeId yn = model.kind == ModelKind::kVae ? -1 : t.constant(y);
    return generate_nodes(t, bp, model.spec, model.kind, yn, z).x;
  };
}

Tensor warm_start_latent(const Model& model, const Tensor& x, const Tensor& y) {
  check(model.kind != ModelKind::kDisCvae,
        "warm start needs the recognition network's inputs (x_F, g), which are not "
        "available for novel images; use the default prior-mean start");
  Tape t;
  BoundParams bp = bind_params(t, model.params, false);
  std::vector<NodeId> vecs;
  if (model.kind == ModelKind::kCvae) vecs.push_back(t.constant(y));
  GaussianParams q = encode(t, bp, model.spec, model.kind, EncoderRole::kMain,
                            {t.constant(x)}, vecs, false, nullptr);
  return t.value(q.mu);
}

}  // namespace

InferenceResult infer_latent(const Model& model, const Tensor& y, const Tensor& x_target,
                             const Tensor* mask, const InferenceConfig& cfg) {
  Tensor init;
  const Tensor* init_ptr = nullptr;
  if (cfg.warm_start) {
    init = warm_start_latent(model, x_target, y);
    init_ptr = &init;
  }
  return infer_latent(model_decoder(model, y), model.spec.n_z(), x_target, mask, cfg,
                      init_ptr);
}

ReconstructResult reconstruct(const Model& model, const Tensor& x, const Tensor& y,
                              const InferenceConfig& cfg, const Tensor* gt_gate) {
  ReconstructResult res;
  res.inference = infer_latent(model, y, x, nullptr, cfg);
  res.images = res.inference.decoded;

  const int m = x.shape[0];
  const int64_t img = x.size() / m;
  res.mse_full.resize(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < img; ++j) {
      const double d = static_cast<double>(res.images.data[i * img + j]) - x.data[i * img + j];
      acc += d * d;
    }
    res.mse_full[static_cast<size_t>(i)] = acc / static_cast<double>(img);
  }
  if (gt_gate != nullptr) {
    const int c = x.shape[1];
    const int64_t hw = static_cast<int64_t>(x.shape[2]) * x.shape[3];
    res.mse_fg.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
      double acc = 0.0;
      int64_t count = 0;
      for (int64_t p = 0; p < hw; ++p) {
        if (gt_gate->data[static_cast<size_t>(i) * hw + p] >= 0.5f) continue;  // background
        for (int ch = 0; ch < c; ++ch) {
          const int64_t j = (static_cast<int64_t>(i) * c + ch) * hw + p;
          const double d = static_cast<double>(res.images.data[j]) - x.data[j];
          acc += d * d;
        }
        count += c;
      }
      res.mse_fg[static_cast<size_t>(i)] = count > 0 ? acc / static_cast<double>(count) : 0.0;
    }
  }
  return res;
}

CompleteResult complete(const Model& model, const Tensor& x_occluded, const Tensor& mask,
                        const Tensor& y, const InferenceConfig& cfg) {
  CompleteResult res;
  res.inference = infer_latent(model, y, x_occluded, &mask, cfg);

  Tensor mask_full = expand_mask(mask, x_occluded);
  res.filled = x_occluded;
  for (int64_t i = 0; i < res.filled.size(); ++i)
    if (mask_full.data[i] == 0.0f) res.filled.data[i] = res.inference.decoded.data[i];
  return res;
}

OcclusionKind occlusion_kind_from_name(const std::string& name) {
  if (name == "eye") return OcclusionKind::kEye;
  if (name == "mouth") return OcclusionKind::kMouth;
  if (name == "face") return OcclusionKind::kFace;
  if (name == "half") return OcclusionKind::kHalf;
  if (name == "block8") return OcclusionKind::kBlock8;
  if (name == "block16") return OcclusionKind::kBlock16;
  fail("unknown occlusion kind '" + name +
       "' (expected eye|mouth|face|half|block8|block16)");
}

std::string occlusion_kind_name(OcclusionKind k) {
  switch (k) {
    case OcclusionKind::kEye: return "eye";
    case OcclusionKind::kMouth: return "mouth";
    case OcclusionKind::kFace: return "face";
    case OcclusionKind::kHalf: return "half";
    case OcclusionKind::kBlock8: return "block8";
    case OcclusionKind::kBlock16: return "block16";
  }
  fail("unreachable occlusion kind");
}

Tensor make_occlusion(int image_size, OcclusionKind kind, Rng& rng) {
  check(image_size >= 16, "make_occlusion: image size too small");
  const int s = image_size;
  Tensor mask = Tensor::full({1, s, s}, 1.0f);
  auto zero_rect = [&](int r0, int r1, int c0, int c1) {
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) mask.data[static_cast<size_t>(r) * s + c] = 0.0f;
  };
  auto frac = [&](double f) { return static_cast<int>(f * s); };
  switch (kind) {
    case OcclusionKind::kEye:
      zero_rect(frac(0.25), frac(0.45), frac(0.15), frac(0.85));
      break;
    case OcclusionKind::kMouth:
      zero_rect(frac(0.65), frac(0.85), frac(0.25), frac(0.75));
      break;
    case OcclusionKind::kFace:
      zero_rect(frac(0.25), frac(0.85), frac(0.20), frac(0.80));
      break;
    case OcclusionKind::kHalf:
      zero_rect(0, s, s / 2, s);
      break;
    case OcclusionKind::kBlock8:
    case OcclusionKind::kBlock16: {
      const int b = kind == OcclusionKind::kBlock8 ? 8 : 16;
      check(b <= s, "make_occlusion: block larger than image");
      const int r0 = rng.uniform_int(0, s - b);
      const int c0 = rng.uniform_int(0, s - b);
      zero_rect(r0, r0 + b, c0, c0 + b);
      break;
    }
  }
  return mask;
}

}  // namespace lvae
