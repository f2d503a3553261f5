#include "lvae/eval.hpp"

#include <algorithm>
#include <cmath>

#include "lvae/train.hpp"

namespace lvae {

double mse_region(const Tensor& a, const Tensor& b, const Tensor& region) {
  check(a.same_shape(b), "mse_region: shape mismatch " + shape_str(a.shape) + " vs " +
                             shape_str(b.shape));
  check(a.rank() == 3, "mse_region: images must be [C,H,W]");
  check(region.rank() == 3 && region.shape[0] == 1 && region.shape[1] == a.shape[1] &&
            region.shape[2] == a.shape[2],
        "mse_region: region must be [1,H,W] matching the images");
  const int c = a.shape[0];
  const int64_t hw = static_cast<int64_t>(a.shape[1]) * a.shape[2];
  double acc = 0.0;
  int64_t selected = 0;
  for (int64_t p = 0; p < hw; ++p) {
    const float r = region.data[p];
    check(r == 0.0f || r == 1.0f, "mse_region: region mask must be binary");
    if (r == 0.0f) continue;
    ++selected;
    for (int ch = 0; ch < c; ++ch) {
      const int64_t i = ch * hw + p;
      const double d = static_cast<double>(a.data[i]) - b.data[i];
      acc += d * d;
    }
  }
  check(selected > 0, "mse_region: empty region");
  return acc / (static_cast<double>(selected) * c);
}

double to_table_units(double native_mse) { return native_mse * (127.5 * 127.5) / 100.0; }

namespace {

int conv_pad(int filter) { return filter % 2 == 1 ? filter / 2 : 0; }

int conv_out(int size, int filter, int stride) {
  return (size + 2 * conv_pad(filter) - filter) / stride + 1;
}

int regressor_flat_dim(const ArchitectureSpec& spec) {
  int hw = spec.image_size;
  for (const auto& l : spec.enc_conv) hw = conv_out(hw, l.filter, l.stride);
  return spec.enc_conv.back().channels * hw * hw;
}

NodeId regressor_forward(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                         NodeId images) {
  NodeId x = images;
  for (size_t i = 0; i < spec.enc_conv.size(); ++i) {
    const auto& l = spec.enc_conv[i];
    const std::string base = "reg.conv" + std::to_string(i + 1);
    x = ops::relu(t, ops::conv2d(t, x, p.at(base + ".weight"), p.at(base + ".bias"),
                                 l.stride, conv_pad(l.filter)));
  }
  NodeId h = ops::reshape(t, x, {t.value(images).shape[0], regressor_flat_dim(spec)});
  for (size_t i = 0; i < spec.enc_fc.size(); ++i) {
    const std::string base = "reg.fc" + std::to_string(i + 1);
    h = ops::relu(t, ops::affine(t, h, p.at(base + ".weight"), p.at(base + ".bias")));
  }
  return ops::affine(t, h, p.at("reg.out.weight"), p.at("reg.out.bias"));
}

ParamStore init_regressor_params(const ArchitectureSpec& spec, uint64_t seed) {
  Rng rng(seed);
  ParamStore ps;
  int in_ch = spec.image_channels;
  for (size_t i = 0; i < spec.enc_conv.size(); ++i) {
    const auto& l = spec.enc_conv[i];
    const std::string base = "reg.conv" + std::to_string(i + 1);
    ps.add(base + ".weight",
           rng.normal_tensor({l.channels, in_ch, l.filter, l.filter}, 0.0f, 0.02f));
    ps.add(base + ".bias", Tensor::zeros({l.channels}));
    in_ch = l.channels;
  }
  int in_dim = regressor_flat_dim(spec);
  for (size_t i = 0; i < spec.enc_fc.size(); ++i) {
    const std::string base = "reg.fc" + std::to_string(i + 1);
    ps.add(base + ".weight", rng.normal_tensor({in_dim, spec.enc_fc[i]}, 0.0f, 0.02f));
    ps.add(base + ".bias", Tensor::zeros({spec.enc_fc[i]}));
    in_dim = spec.enc_fc[i];
  }
  ps.add("reg.out.weight", rng.normal_tensor({in_dim, spec.n_y}, 0.0f, 0.02f));
  ps.add("reg.out.bias", Tensor::zeros({spec.n_y}));
  return ps;
}

}  // namespace

RegressorResult train_regressor(const Dataset& ds, const ArchitectureSpec& spec,
                                const RegressorConfig& cfg) {
  check(!ds.train_idx.empty(), "train_regressor: empty training split");
  check(spec.n_y == ds.n_y(), "train_regressor: attribute dim mismatch");
  check(cfg.epochs >= 1 && cfg.batch >= 1 && cfg.lr > 0.0f, "train_regressor: bad config");

  RegressorResult res;
  res.regressor.spec = spec;
  res.regressor.params = init_regressor_params(spec, cfg.seed);

  AdamState adam;
  adam.lr = cfg.lr;
  Rng shuffle_rng(cfg.seed ^ 0x5eedULL);
  std::vector<size_t> order = ds.train_idx;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch)) {
      const size_t take = std::min<size_t>(cfg.batch, order.size() - off);
      std::vector<size_t> chunk(order.begin() + off, order.begin() + off + take);
      Tensor x = stack_field(ds.examples, chunk, &LabeledExample::x);
      Tensor y = stack_field(ds.examples, chunk, &LabeledExample::y);
      Tape t;
      BoundParams bp = bind_params(t, res.regressor.params, true);
      NodeId pred = regressor_forward(t, bp, spec, t.constant(x));
      NodeId loss = ops::scale(t, recon_l2(t, pred, t.constant(y)),
                               1.0f / static_cast<float>(take));
      check(std::isfinite(t.scalar_value(loss)), "train_regressor: loss diverged");
      t.backward(loss);
      adam_step(adam, res.regressor.params, collect_grads(t, bp));
    }
  }

  // reference ceiling on ground-truth test images
  if (!ds.test_idx.empty()) {
    Tensor x = stack_field(ds.examples, ds.test_idx, &LabeledExample::x);
    Tensor y = stack_field(ds.examples, ds.test_idx, &LabeledExample::y);
    Tensor pred = regress_attributes(res.regressor, x);
    const int m = y.shape[0], ny = y.shape[1];
    double cos_acc = 0.0, mse_acc = 0.0;
    for (int i = 0; i < m; ++i) {
      cos_acc += cosine_similarity(&pred.data[static_cast<size_t>(i) * ny],
                                   &y.data[static_cast<size_t>(i) * ny], ny);
      double e = 0.0;
      for (int d = 0; d < ny; ++d) {
        const double diff = pred.data[static_cast<size_t>(i) * ny + d] -
                            y.data[static_cast<size_t>(i) * ny + d];
        e += diff * diff;
      }
      mse_acc += e;
    }
    res.test_cosine = cos_acc / m;
    res.test_mse = mse_acc / m;
  }
  return res;
}

Tensor regress_attributes(const AttrRegressor& reg, const Tensor& images) {
  check(images.rank() == 4, "regress_attributes: images must be [N,C,H,W]");
  Tape t;
  BoundParams bp = bind_params(t, reg.params, false);
  return t.value(regressor_forward(t, bp, reg.spec, t.constant(images)));
}

double cosine_similarity(const float* a, const float* b, int n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 1e-12 ? dot / denom : 0.0;
}

FidelityResult attr_fidelity(const AttrRegressor& reg, const Tensor& test_y,
                             int samples_per_y, const SampleFn& samples) {
  check(test_y.rank() == 2 && test_y.shape[1] == reg.spec.n_y,
        "attr_fidelity: test attributes must be [M," + std::to_string(reg.spec.n_y) + "]");
  check(samples_per_y >= 1, "attr_fidelity: samples_per_y must be >= 1");
  const int m = test_y.shape[0];
  const int ny = reg.spec.n_y;

  FidelityResult out;
  for (int i = 0; i < m; ++i) {
    double best_cos = -2.0;
    double best_mse = std::numeric_limits<double>::infinity();
    for (int j = 0; j < samples_per_y; ++j) {
      Tensor img = samples(i, j);
      check(img.rank() == 3, "attr_fidelity: sample images must be [C,H,W]");
      Tensor batch(Shape{1, img.shape[0], img.shape[1], img.shape[2]});
      batch.data = img.data;
      Tensor pred = regress_attributes(reg, batch);
      const float* y_ref = &test_y.data[static_cast<size_t>(i) * ny];
      best_cos = std::max(best_cos, cosine_similarity(pred.data.data(), y_ref, ny));
      double e = 0.0;
      for (int d = 0; d < ny; ++d) {
        const double diff = pred.data[d] - y_ref[d];
        e += diff * diff;
      }
      best_mse = std::min(best_mse, e);
    }
    out.cosine += best_cos;
    out.mse += best_mse;
  }
  out.cosine /= m;
  out.mse /= m;
  return out;
}

FidelityResult attr_fidelity_model(const Model& model, const AttrRegressor& reg,
                                   const Tensor& test_y, int samples_per_y, uint64_t seed) {
  const int ny = test_y.shape[1];
  return attr_fidelity(reg, test_y, samples_per_y, [&](int i, int j) {
    Rng rng(seed ^ (static_cast<uint64_t>(i) * 1000003ULL + static_cast<uint64_t>(j)));
    Tensor y(Shape{1, ny});
    std::copy(test_y.data.begin() + static_cast<size_t>(i) * ny,
              test_y.data.begin() + static_cast<size_t>(i + 1) * ny, y.data.begin());
    GenerateResult gen = generate(model, y, nullptr, nullptr, rng);
    Tensor img(Shape{gen.x.shape[1], gen.x.shape[2], gen.x.shape[3]});
    img.data = gen.x.data;
    return img;
  });
}

NnMatch nn_baseline(const Dataset& ds, const Tensor& query_y) {
  check(!ds.train_idx.empty(), "nn_baseline: empty training split");
  check(query_y.rank() == 1 && query_y.shape[0] == ds.n_y(),
        "nn_baseline: query must be a length-" + std::to_string(ds.n_y()) +
            " attribute vector");
  const int ny = query_y.shape[0];
  NnMatch best;
  bool first = true;
  for (size_t idx : ds.train_idx) {
    const LabeledExample& ex = ds.examples[idx];
    double d = 0.0;
    for (int i = 0; i < ny; ++i) {
      const double diff = static_cast<double>(ex.y.data[i]) - query_y.data[i];
      d += diff * diff;
    }
    d /= ny;
    const bool better =
        first || d < best.distance ||
        (d == best.distance && ex.id < ds.examples[best.example_index].id);
    if (better) {
      best.example_index = idx;
      best.distance = d;
      first = false;
    }
  }
  return best;
}

Tensor box_blur5(const Tensor& img) {
  check(img.rank() == 3, "box_blur5: image must be [C,H,W]");
  const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
  Tensor out(img.shape);
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        double acc = 0.0;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx) {
            const int rr = std::clamp(r + dy, 0, h - 1);
            const int cc = std::clamp(col + dx, 0, w - 1);
            acc += img.data[(static_cast<size_t>(ch) * h + rr) * w + cc];
          }
        out.data[(static_cast<size_t>(ch) * h + r) * w + col] =
            static_cast<float>(acc / 25.0);
      }
  return out;
}

}  // namespace lvae
