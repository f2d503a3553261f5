#include "lvae/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lvae {

GradMap collect_grads(const Tape& t, const BoundParams& bp) {
  GradMap grads;
  for (const auto& [name, node] : bp.nodes) {
    check(t.has_grad(node), "parameter '" + name + "' received no gradient");
    grads[name] = t.grad(node);
  }
  return grads;
}

void adam_step(AdamState& state, ParamStore& params, const GradMap& grads) {
  check(state.lr >= 0.0f, "adam: negative learning rate");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.t);
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.t);
  for (const auto& name : params.names()) {
    auto it = grads.find(name);
    check(it != grads.end(), "adam: missing gradient for parameter '" + name + "'");
    Tensor& p = params.get(name);
    const Tensor& g = it->second;
    check(g.same_shape(p), "adam: gradient shape mismatch for '" + name + "'");
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (int64_t i = 0; i < p.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0f - state.beta1) * g.data[i];
      v.data[i] = state.beta2 * v.data[i] + (1.0f - state.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// --- augmentation ------------------------------------------------------------

AugmentProfile augment_profile_from_name(const std::string& name) {
  if (name == "none") return AugmentProfile::kNone;
  if (name == "face") return AugmentProfile::kFace;
  if (name == "bird") return AugmentProfile::kBird;
  fail("unknown augmentation profile '" + name + "' (expected none|face|bird)");
}

std::string augment_profile_name(AugmentProfile p) {
  switch (p) {
    case AugmentProfile::kNone: return "none";
    case AugmentProfile::kFace: return "face";
    case AugmentProfile::kBird: return "bird";
  }
  fail("unreachable augmentation profile");
}

AugmentOps augment_ops(AugmentProfile p) {
  AugmentOps ops;
  if (p == AugmentProfile::kNone) return ops;
  ops.flip = ops.channel_scale = ops.residual = true;
  if (p == AugmentProfile::kBird) ops.rotate = ops.rescale_crop = true;
  return ops;
}

namespace aug {
namespace {

float sample_bilinear(const Tensor& img, int ch, float y, float x) {
  const int h = img.shape[1], w = img.shape[2];
  const float yc = std::clamp(y, 0.0f, static_cast<float>(h - 1));
  const float xc = std::clamp(x, 0.0f, static_cast<float>(w - 1));
  const int y0 = static_cast<int>(yc);
  const int x0 = static_cast<int>(xc);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const float fy = yc - y0, fx = xc - x0;
  auto at = [&](int r, int c) {
    return img.data[(static_cast<size_t>(ch) * h + r) * w + c];
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
         fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

float sample_nearest(const Tensor& img, int ch, float y, float x) {
  const int h = img.shape[1], w = img.shape[2];
  const int r = std::clamp(static_cast<int>(std::lroundf(y)), 0, h - 1);
  const int c = std::clamp(static_cast<int>(std::lroundf(x)), 0, w - 1);
  return img.data[(static_cast<size_t>(ch) * h + r) * w + c];
}

}  // namespace

Tensor hflip(const Tensor& img) {
  Tensor out(img.shape);
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col)
        out.data[(static_cast<size_t>(ch) * h + r) * w + col] =
            img.data[(static_cast<size_t>(ch) * h + r) * w + (w - 1 - col)];
  return out;
}

Tensor channel_scale(const Tensor& img, const float* factors) {
  Tensor out(img.shape);
  const int c = img.shape[0];
  const int64_t plane = static_cast<int64_t>(img.shape[1]) * img.shape[2];
  for (int ch = 0; ch < c; ++ch)
    for (int64_t i = 0; i < plane; ++i)
      out.data[ch * plane + i] = img.data[ch * plane + i] * factors[ch];
  return out;
}

Tensor unsharp(const Tensor& img, float s) {
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  Tensor out(img.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        float acc = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int rr = std::clamp(r + dy, 0, h - 1);
            const int cc = std::clamp(col + dx, 0, w - 1);
            acc += img.data[(static_cast<size_t>(ch) * h + rr) * w + cc];
          }
        const float blur = acc / 9.0f;
        const float v = img.data[(static_cast<size_t>(ch) * h + r) * w + col];
        out.data[(static_cast<size_t>(ch) * h + r) * w + col] =
            std::clamp(v + s * (v - blur), -1.0f, 1.0f);
      }
  return out;
}

Tensor rotate(const Tensor& img, float theta, bool nearest) {
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  const float cy = 0.5f * (h - 1), cx = 0.5f * (w - 1);
  const float ct = std::cos(theta), st = std::sin(theta);
  Tensor out(img.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const float dy = r - cy, dx = col - cx;
        const float sy = cy + ct * dy - st * dx;
        const float sx = cx + st * dy + ct * dx;
        out.data[(static_cast<size_t>(ch) * h + r) * w + col] =
            nearest ? sample_nearest(img, ch, sy, sx) : sample_bilinear(img, ch, sy, sx);
      }
  return out;
}

Tensor rescale_crop(const Tensor& img, int resized, int off_x, int off_y, bool nearest) {
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  check(resized >= h, "rescale_crop: target must not shrink the image");
  check(off_x >= 0 && off_x + w <= resized && off_y >= 0 && off_y + h <= resized,
        "rescale_crop: crop window out of bounds");
  const float scale = static_cast<float>(h) / static_cast<float>(resized);
  Tensor out(img.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const float sy = (r + off_y + 0.5f) * scale - 0.5f;
        const float sx = (col + off_x + 0.5f) * scale - 0.5f;
        out.data[(static_cast<size_t>(ch) * h + r) * w + col] =
            nearest ? sample_nearest(img, ch, sy, sx) : sample_bilinear(img, ch, sy, sx);
      }
  return out;
}

}  // namespace aug

LabeledExample augment(const LabeledExample& ex, Rng& rng, const AugmentOps& ops) {
  LabeledExample out = ex;
  const bool layers = ex.has_layers();
  const bool bg = !ex.x_b.data.empty();

  if (ops.flip && rng.uniform() < 0.5) {
    out.x = aug::hflip(out.x);
    if (layers) {
      out.x_f = aug::hflip(out.x_f);
      out.g = aug::hflip(out.g);
    }
    if (bg) out.x_b = aug::hflip(out.x_b);
  }
  if (ops.channel_scale) {
    float f[3];
    for (float& v : f) v = static_cast<float>(rng.uniform(0.97, 1.03));
    out.x = aug::channel_scale(out.x, f);
    if (layers) out.x_f = aug::channel_scale(out.x_f, f);
    if (bg) out.x_b = aug::channel_scale(out.x_b, f);
  }
  if (ops.residual) {
    const float s = static_cast<float>(rng.uniform(0.0, 1.5));
    out.x = aug::unsharp(out.x, s);
    if (layers) out.x_f = aug::unsharp(out.x_f, s);
  }
  if (ops.rotate) {
    const float theta = static_cast<float>(rng.uniform(-0.08, 0.08));
    out.x = aug::rotate(out.x, theta, false);
    if (layers) {
      out.x_f = aug::rotate(out.x_f, theta, false);
      out.g = aug::rotate(out.g, theta, true);
    }
    if (bg) out.x_b = aug::rotate(out.x_b, theta, false);
  }
  if (ops.rescale_crop) {
    const int s = out.x.shape[1];
    const int resized = static_cast<int>(std::lround(s * 1.125));
    const int off_x = rng.uniform_int(0, resized - s);
    const int off_y = rng.uniform_int(0, resized - s);
    out.x = aug::rescale_crop(out.x, resized, off_x, off_y, false);
    if (layers) {
      out.x_f = aug::rescale_crop(out.x_f, resized, off_x, off_y, false);
      out.g = aug::rescale_crop(out.g, resized, off_x, off_y, true);
    }
    if (bg) out.x_b = aug::rescale_crop(out.x_b, resized, off_x, off_y, false);
  }
  return out;
}

// --- training loop ------------------------------------------------------------

void TrainConfig::validate() const {
  check(batch >= 1, "train config: batch must be >= 1");
  check(lr > 0.0f, "train config: learning rate must be > 0");
  check(epochs >= 1, "train config: epochs must be >= 1");
  check(lambda_g >= 0.0f, "train config: lambda_g must be >= 0");
  check(val_fraction >= 0.0f && val_fraction < 1.0f,
        "train config: validation fraction must be in [0,1)");
}

namespace {

uint64_t fnv1a(const void* bytes, size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  uint64_t h = 1469598103934665603ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

struct BatchTensors {
  Tensor x, x_f, g, y;
};

BatchTensors assemble_batch(const Dataset& ds, const std::vector<size_t>& idx, bool layers,
                            Rng* aug_rng, const AugmentOps& ops) {
  const bool augmenting = aug_rng != nullptr;
  std::vector<LabeledExample> staged;
  const std::vector<LabeledExample>* source = &ds.examples;
  std::vector<size_t> local_idx = idx;
  if (augmenting) {
    staged.reserve(idx.size());
    for (size_t i : idx) staged.push_back(augment(ds.examples[i], *aug_rng, ops));
    source = &staged;
    local_idx.resize(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) local_idx[i] = i;
  }
  BatchTensors b;
  b.x = stack_field(*source, local_idx, &LabeledExample::x);
  b.y = stack_field(*source, local_idx, &LabeledExample::y);
  if (layers) {
    b.x_f = stack_field(*source, local_idx, &LabeledExample::x_f);
    b.g = stack_field(*source, local_idx, &LabeledExample::g);
  }
  return b;
}

ElboTerms run_elbo(Tape& t, const BoundParams& bp, const ArchitectureSpec& spec,
                   ModelKind kind, const BatchTensors& b, const Tensor& eps_f,
                   const Tensor& eps_b, const ForwardOpts& opts) {
  NodeId x = t.constant(b.x);
  if (kind == ModelKind::kDisCvae) {
    NodeId x_f = t.constant(b.x_f);
    NodeId g = t.constant(b.g);
    NodeId y = t.constant(b.y);
    return discvae_elbo(t, bp, spec, x, x_f, g, y, t.constant(eps_f), t.constant(eps_b),
                        opts);
  }
  const int n = b.x.shape[0];
  Tensor eps({n, eps_f.shape[1] + eps_b.shape[1]});
  for (int i = 0; i < n; ++i) {
    std::copy(eps_f.data.begin() + static_cast<size_t>(i) * eps_f.shape[1],
              eps_f.data.begin() + static_cast<size_t>(i + 1) * eps_f.shape[1],
              eps.data.begin() + static_cast<size_t>(i) * eps.shape[1]);
    std::copy(eps_b.data.begin() + static_cast<size_t>(i) * eps_b.shape[1],
              eps_b.data.begin() + static_cast<size_t>(i + 1) * eps_b.shape[1],
              eps.data.begin() + static_cast<size_t>(i) * eps.shape[1] + eps_f.shape[1]);
  }
  NodeId y = kind == ModelKind::kCvae ? t.constant(b.y) : -1;
  return cvae_elbo(t, bp, spec, kind, x, y, t.constant(eps), opts);
}

void check_terms_finite(const ElboTerms& terms, int epoch, int step) {
  const std::pair<const char*, double> named[] = {
      {"kl_fg", terms.kl_fg},   {"kl_bg", terms.kl_bg},       {"loss_fg", terms.loss_fg},
      {"loss_mask", terms.loss_mask}, {"loss_full", terms.loss_full}, {"total", terms.total}};
  for (const auto& [name, v] : named)
    check(std::isfinite(v), "training diverged at epoch " + std::to_string(epoch) +
                                ", step " + std::to_string(step) + ": term '" + name +
                                "' is not finite");
}

}  // namespace

double validation_loss(const Model& model, const Dataset& ds,
                       const std::vector<size_t>& idx, const TrainConfig& cfg) {
  check(!idx.empty(), "validation_loss: no examples");
  const bool layers = model.kind == ModelKind::kDisCvae;
  ForwardOpts opts;
  opts.train = false;
  opts.lambda_g = cfg.lambda_g;
  opts.recon_weight = cfg.recon_weight;
  double acc = 0.0;
  size_t done = 0;
  const AugmentOps no_aug;
  while (done < idx.size()) {
    const size_t take = std::min<size_t>(cfg.batch, idx.size() - done);
    std::vector<size_t> chunk(idx.begin() + done, idx.begin() + done + take);
    BatchTensors b = assemble_batch(ds, chunk, layers, nullptr, no_aug);
    Tape t;
    BoundParams bp = bind_params(t, model.params, false);
    const Tensor eps_f = Tensor::zeros({static_cast<int>(take), model.spec.n_zf});
    const Tensor eps_b = Tensor::zeros({static_cast<int>(take), model.spec.n_zb});
    ElboTerms terms = run_elbo(t, bp, model.spec, model.kind, b, eps_f, eps_b, opts);
    acc += terms.total * static_cast<double>(take);
    done += take;
  }
  return acc / static_cast<double>(idx.size());
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  ArchitectureSpec spec = spec_from_preset(cfg.preset, ds.n_y());
  return train(ds, cfg, spec);
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg, const ArchitectureSpec& spec) {
  cfg.validate();
  spec.validate();
  check(!ds.examples.empty(), "train: dataset is empty");
  check(!ds.train_idx.empty(), "train: dataset has no training split");
  check(spec.n_y == ds.n_y(), "train: spec attribute dim " + std::to_string(spec.n_y) +
                                  " != dataset attribute dim " + std::to_string(ds.n_y()));
  const bool layers = cfg.model == ModelKind::kDisCvae;
  if (layers)
    check(ds.has_layers(), "train: discvae needs foreground and mask annotations");

  // held-out validation slice, selected by attribute hash
  std::vector<size_t> fit_idx, val_idx;
  const int64_t val_permille = std::llround(cfg.val_fraction * 1000.0);
  for (size_t i : ds.train_idx) {
    const Tensor& y = ds.examples[i].y;
    const uint64_t h = fnv1a(y.data.data(), y.data.size() * sizeof(float));
    if (static_cast<int64_t>(h % 1000) < val_permille)
      val_idx.push_back(i);
    else
      fit_idx.push_back(i);
  }
  if (val_idx.empty()) val_idx.push_back(ds.train_idx.back());
  check(!fit_idx.empty(), "train: validation split swallowed every example");

  Model model;
  model.kind = cfg.model;
  model.spec = spec;
  model.params = init_params(spec, cfg.model, cfg.seed);

  AdamState adam;
  adam.lr = cfg.lr;

  Rng master(cfg.seed);
  Rng shuffle_rng = master.fork(1);
  Rng eps_rng = master.fork(2);
  Rng aug_rng = master.fork(3);
  Rng dropout_rng = master.fork(4);

  const AugmentOps ops = augment_ops(cfg.augment);
  const bool augmenting = cfg.augment != AugmentProfile::kNone;

  ForwardOpts fwd;
  fwd.train = true;
  fwd.dropout_rng = &dropout_rng;
  fwd.lambda_g = cfg.lambda_g;
  fwd.recon_weight = cfg.recon_weight;

  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  std::vector<size_t> order = fit_idx;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Fisher-Yates with the dedicated stream
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    EpochStats stats;
    stats.epoch = epoch;
    double weight = 0.0;
    int step = 0;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch)) {
      const size_t take = std::min<size_t>(cfg.batch, order.size() - off);
      std::vector<size_t> chunk(order.begin() + off, order.begin() + off + take);
      BatchTensors b =
          assemble_batch(ds, chunk, layers, augmenting ? &aug_rng : nullptr, ops);
      const Tensor eps_f = eps_rng.normal_tensor({static_cast<int>(take), spec.n_zf});
      const Tensor eps_b = eps_rng.normal_tensor({static_cast<int>(take), spec.n_zb});

      Tape t;
      BoundParams bp = bind_params(t, model.params, true);
      ElboTerms terms = run_elbo(t, bp, spec, cfg.model, b, eps_f, eps_b, fwd);
      ++step;
      check_terms_finite(terms, epoch, step);
      t.backward(terms.total_node);
      adam_step(adam, model.params, collect_grads(t, bp));

      const double w = static_cast<double>(take);
      stats.train_total += terms.total * w;
      stats.kl_fg += terms.kl_fg * w;
      stats.kl_bg += terms.kl_bg * w;
      stats.loss_fg += terms.loss_fg * w;
      stats.loss_mask += terms.loss_mask * w;
      stats.loss_full += terms.loss_full * w;
      weight += w;
    }
    stats.train_total /= weight;
    stats.kl_fg /= weight;
    stats.kl_bg /= weight;
    stats.loss_fg /= weight;
    stats.loss_mask /= weight;
    stats.loss_full /= weight;
    stats.val_total = validation_loss(model, ds, val_idx, cfg);
    result.trace.push_back(stats);

    if (stats.val_total < result.best_val) {
      result.best_val = stats.val_total;
      result.best_epoch = epoch;
      result.model = model;  // snapshot
    }
  }
  if (!std::isfinite(result.best_val)) {
    result.model = model;
    result.best_val = result.trace.back().val_total;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

void write_loss_trace(const std::vector<EpochStats>& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write loss trace '" + path + "'");
  out << "epoch,train_total,val_total,kl_fg,kl_bg,loss_fg,loss_mask,loss_full\n";
  char line[256];
  for (const EpochStats& s : trace) {
    std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.epoch,
                  s.train_total, s.val_total, s.kl_fg, s.kl_bg, s.loss_fg, s.loss_mask,
                  s.loss_full);
    out << line;
  }
  check(out.good(), "short write to '" + path + "'");
}

// --- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'L', 'V', 'A', 'E'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  check(in.gcount() == 4, "'" + path + "': truncated checkpoint");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

std::map<std::string, std::string> spec_to_kv(const ArchitectureSpec& spec) {
  std::map<std::string, std::string> kv;
  kv["spec.name"] = spec.name;
  kv["spec.image_size"] = std::to_string(spec.image_size);
  kv["spec.image_channels"] = std::to_string(spec.image_channels);
  std::string enc;
  for (size_t i = 0; i < spec.enc_conv.size(); ++i) {
    if (i) enc += ",";
    enc += std::to_string(spec.enc_conv[i].channels) + "x" +
           std::to_string(spec.enc_conv[i].filter) + "s" +
           std::to_string(spec.enc_conv[i].stride);
  }
  kv["spec.enc_conv"] = enc;
  kv["spec.enc_fc"] = join_ints(spec.enc_fc);
  kv["spec.dec_fc"] = join_ints(spec.dec_fc);
  kv["spec.dec_seed_hw"] = std::to_string(spec.dec_seed_hw);
  kv["spec.dec_seed_channels"] = std::to_string(spec.dec_seed_channels);
  std::string dec;
  for (size_t i = 0; i < spec.dec_conv.size(); ++i) {
    if (i) dec += ",";
    dec += std::to_string(spec.dec_conv[i].channels) + "x" +
           std::to_string(spec.dec_conv[i].filter) + (spec.dec_conv[i].upsample ? "u" : "");
  }
  kv["spec.dec_conv"] = dec;
  kv["spec.head_filter"] = std::to_string(spec.head_filter);
  kv["spec.n_zf"] = std::to_string(spec.n_zf);
  kv["spec.n_zb"] = std::to_string(spec.n_zb);
  kv["spec.n_y"] = std::to_string(spec.n_y);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", spec.dropout);
  kv["spec.dropout"] = buf;
  std::snprintf(buf, sizeof(buf), "%.9g", spec.bg_scale);
  kv["spec.bg_scale"] = buf;
  return kv;
}

ArchitectureSpec spec_from_kv(const std::map<std::string, std::string>& kv) {
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    check(it != kv.end(), "architecture descriptor is missing key '" + k + "'");
    return it->second;
  };
  ArchitectureSpec spec;
  spec.name = need("spec.name");
  spec.image_size = std::stoi(need("spec.image_size"));
  spec.image_channels = std::stoi(need("spec.image_channels"));
  spec.enc_conv.clear();
  {
    std::stringstream ss(need("spec.enc_conv"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      const size_t x = tok.find('x');
      const size_t s = tok.find('s');
      check(x != std::string::npos && s != std::string::npos && x < s,
            "bad encoder conv descriptor '" + tok + "'");
      spec.enc_conv.push_back({std::stoi(tok.substr(0, x)),
                               std::stoi(tok.substr(x + 1, s - x - 1)),
                               std::stoi(tok.substr(s + 1))});
    }
  }
  spec.enc_fc = split_ints(need("spec.enc_fc"));
  spec.dec_fc = split_ints(need("spec.dec_fc"));
  spec.dec_seed_hw = std::stoi(need("spec.dec_seed_hw"));
  spec.dec_seed_channels = std::stoi(need("spec.dec_seed_channels"));
  spec.dec_conv.clear();
  {
    std::stringstream ss(need("spec.dec_conv"));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      bool up = false;
      if (!tok.empty() && tok.back() == 'u') {
        up = true;
        tok.pop_back();
      }
      const size_t x = tok.find('x');
      check(x != std::string::npos, "bad decoder conv descriptor '" + tok + "'");
      spec.dec_conv.push_back(
          {std::stoi(tok.substr(0, x)), std::stoi(tok.substr(x + 1)), up});
    }
  }
  spec.head_filter = std::stoi(need("spec.head_filter"));
  spec.n_zf = std::stoi(need("spec.n_zf"));
  spec.n_zb = std::stoi(need("spec.n_zb"));
  spec.n_y = std::stoi(need("spec.n_y"));
  spec.dropout = std::stof(need("spec.dropout"));
  spec.bg_scale = std::stof(need("spec.bg_scale"));
  spec.validate();
  return spec;
}

void save_checkpoint(const Model& model, const std::map<std::string, std::string>& extra,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open checkpoint '" + path + "' for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);

  std::map<std::string, std::string> kv = spec_to_kv(model.spec);
  kv["model"] = model_kind_name(model.kind);
  for (const auto& [k, v] : extra) kv[k] = v;
  std::string header;
  for (const auto& [k, v] : kv) header += k + "=" + v + "\n";
  put_u32(out, static_cast<uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));

  put_u32(out, static_cast<uint32_t>(model.params.size()));
  for (const auto& name : model.params.names()) {
    const Tensor& t = model.params.get(name);
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  check(out.good(), "short write to checkpoint '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open checkpoint '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  check(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
        "'" + path + "' is not a LVAE checkpoint");
  const uint32_t version = get_u32(in, path);
  check(version == kVersion, "'" + path + "': unsupported checkpoint version " +
                                 std::to_string(version));
  const uint32_t header_len = get_u32(in, path);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  check(in.gcount() == static_cast<std::streamsize>(header_len),
        "'" + path + "': truncated header");

  std::map<std::string, std::string> kv;
  std::stringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) {
    const size_t eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  Model model;
  auto mk = kv.find("model");
  check(mk != kv.end(), "'" + path + "': checkpoint header lacks the model kind");
  model.kind = model_kind_from_name(mk->second);
  model.spec = spec_from_kv(kv);

  const uint32_t n_params = get_u32(in, path);
  for (uint32_t i = 0; i < n_params; ++i) {
    const uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rank = get_u32(in, path);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(get_u32(in, path));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    check(in.gcount() == static_cast<std::streamsize>(t.data.size() * sizeof(float)),
          "'" + path + "': truncated tensor data for '" + name + "'");
    model.params.add(name, std::move(t));
  }
  return model;
}

}  // namespace lvae
