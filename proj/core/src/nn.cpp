#include "lvae/nn.hpp"

#include <algorithm>
#include <cmath>

namespace lvae {

std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kVae: return "vae";
    case ModelKind::kCvae: return "cvae";
    case ModelKind::kDisCvae: return "discvae";
  }
  fail("unreachable model kind");
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "vae") return ModelKind::kVae;
  if (name == "cvae") return ModelKind::kCvae;
  if (name == "discvae") return ModelKind::kDisCvae;
  fail("unknown model variant '" + name + "' (expected vae|cvae|discvae)");
}

namespace {

int conv_pad(int filter) { return filter % 2 == 1 ? filter / 2 : 0; }

int conv_out(int size, int filter, int stride) {
  return (size + 2 * conv_pad(filter) - filter) / stride + 1;
}

int scaled_channels(int ch, float scale) {
  return std::max(1, static_cast<int>(std::lround(ch * scale)));
}

struct EncoderShape {
  std::string prefix;
  int in_channels = 0;
  int vec_dim = 0;
  std::vector<ConvLayerSpec> conv;
  std::vector<int> fc;
  int flat_dim = 0;
  int out_dim = 0;
};

struct DecoderShape {
  std::string prefix;
  int in_dim = 0;
  std::vector<int> fc;  // hidden widths, seed layer appended last
  int seed_hw = 0;
  int seed_ch = 0;
  std::vector<DecoderLayerSpec> conv;
  int head_filter = 0;
  int out_channels = 0;
  bool gate_head = false;
};

EncoderShape encoder_shape(const ArchitectureSpec& s, ModelKind kind, EncoderRole role) {
  EncoderShape e;
  const bool bg = role == EncoderRole::kBackground;
  e.prefix = role == EncoderRole::kMain ? "enc" : (bg ? "bg_enc" : "fg_enc");
  switch (role) {
    case EncoderRole::kMain:
      e.in_channels = s.image_channels;
      e.vec_dim = kind == ModelKind::kVae ? 0 : s.n_y;
      e.out_dim = s.n_z();
      break;
    case EncoderRole::kForeground:
      e.in_channels = s.image_channels + 1;  // x_F || g
      e.vec_dim = s.n_y;
      e.out_dim = s.n_zf;
      break;
    case EncoderRole::kBackground:
      e.in_channels = 2 * s.image_channels + 1;  // x_F || g || x
      e.vec_dim = s.n_y + s.n_zf;  // z_F feeds the recognition model only
      e.out_dim = s.n_zb;
      break;
  }
  e.conv = s.enc_conv;
  e.fc = s.enc_fc;
  if (bg) {
    for (auto& l : e.conv) l.channels = scaled_channels(l.channels, s.bg_scale);
    for (auto& w : e.fc) w = scaled_channels(w, s.bg_scale);
  }
  int hw = s.image_size;
  for (const auto& l : e.conv) hw = conv_out(hw, l.filter, l.stride);
  e.flat_dim = e.conv.back().channels * hw * hw;
  return e;
}

DecoderShape decoder_shape(const ArchitectureSpec& s, ModelKind kind, DecoderRole role) {
  DecoderShape d;
  const bool bg = role == DecoderRole::kBackground;
  d.prefix = role == DecoderRole::kMain ? "dec" : (bg ? "bg_dec" : "fg_dec");
  switch (role) {
    case DecoderRole::kMain:
      d.in_dim = (kind == ModelKind::kVae ? 0 : s.n_y) + s.n_z();
      break;
    case DecoderRole::kForeground:
      d.in_dim = s.n_y + s.n_zf;
      d.gate_head = true;
      break;
    case DecoderRole::kBackground:
      d.in_dim = s.n_zb;  // x_B depends on z_B alone
      break;
  }
  d.seed_hw = s.dec_seed_hw;
  d.seed_ch = bg ? scaled_channels(s.dec_seed_channels, s.bg_scale) : s.dec_seed_channels;
  d.fc = s.dec_fc;
  if (bg)
    for (auto& w : d.fc) w = scaled_channels(w, s.bg_scale);
  d.fc.push_back(d.seed_ch * d.seed_hw * d.seed_hw);
  d.conv = s.dec_conv;
  if (bg)
    for (auto& l : d.conv) l.channels = scaled_channels(l.channels, s.bg_scale);
  d.head_filter = s.head_filter;
  d.out_channels = s.image_channels;
  return d;
}

}  // namespace

void ArchitectureSpec::validate() const {
  check(image_size >= 4, "spec: image size must be >= 4");
  check(image_channels >= 1, "spec: image channels must be >= 1");
  check(!enc_conv.empty(), "spec: encoder needs at least one convolution layer");
  check(!dec_conv.empty(), "spec: decoder needs at least one convolution layer");
  check(!enc_fc.empty(), "spec: encoder needs at least one fully-connected layer");
  check(n_zf > 0 && n_zb > 0, "spec: latent dims must be positive");
  check(n_y >= 0, "spec: attribute dim must be >= 0");
  check(dropout >= 0.0f && dropout < 1.0f, "spec: dropout ratio must be in [0,1)");
  check(bg_scale > 0.0f && bg_scale <= 1.0f, "spec: bg_scale must be in (0,1]");
  int hw = image_size;
  for (size_t i = 0; i < enc_conv.size(); ++i) {
    const auto& l = enc_conv[i];
    check(l.channels > 0 && l.filter > 0 && l.stride >= 1,
          "spec: bad encoder conv layer " + std::to_string(i + 1));
    check(l.filter <= hw + 2 * conv_pad(l.filter),
          "spec: encoder conv " + std::to_string(i + 1) + " filter exceeds input size");
    hw = conv_out(hw, l.filter, l.stride);
    check(hw >= 1, "spec: encoder conv " + std::to_string(i + 1) + " collapses below 1x1");
  }
  check(dec_seed_hw >= 1 && dec_seed_channels >= 1, "spec: bad decoder seed layer");
  int dhw = dec_seed_hw;
  for (size_t i = 0; i < dec_conv.size(); ++i) {
    const auto& l = dec_conv[i];
    check(l.channels > 0 && l.filter % 2 == 1,
          "spec: decoder trunk filters must be odd (layer " + std::to_string(i + 1) + ")");
    if (l.upsample) dhw *= 2;
  }
  check(head_filter % 2 == 1, "spec: head filter must be odd");
  check(dhw == image_size, "spec: decoder output size " + std::to_string(dhw) +
                               " != image size " + std::to_string(image_size));
}

ArchitectureSpec paper64_spec(int n_y) {
  ArchitectureSpec s;
  s.name = "paper64";
  s.image_size = 64;
  s.enc_conv = {{64, 5, 2}, {128, 5, 2}, {256, 3, 2}, {256, 3, 2}, {1024, 4, 1}};
  s.enc_fc = {1024, 192};
  s.dec_fc = {256};
  s.dec_seed_hw = 8;
  s.dec_seed_channels = 256;
  s.dec_conv = {{256, 3, true}, {256, 5, true}, {128, 5, true}, {64, 5, false}};
  s.head_filter = 5;
  s.n_zf = 192;
  s.n_zb = 64;
  s.n_y = n_y;
  return s;
}

ArchitectureSpec desk32_spec(int n_y) {
  ArchitectureSpec s;
  s.name = "desk32";
  s.image_size = 32;
  s.enc_conv = {{12, 3, 2}, {24, 3, 2}, {48, 3, 2}, {48, 3, 1}, {128, 4, 1}};
  s.enc_fc = {128, 64};
  s.dec_fc = {64};
  s.dec_seed_hw = 4;
  s.dec_seed_channels = 32;
  s.dec_conv = {{32, 3, true}, {24, 3, true}, {12, 3, true}, {8, 3, false}};
  s.head_filter = 3;
  s.n_zf = 48;
  s.n_zb = 16;
  s.n_y = n_y;
  return s;
}

ArchitectureSpec spec_from_preset(const std::string& preset, int n_y) {
  if (preset == "paper64") return paper64_spec(n_y);
  if (preset == "desk32") return desk32_spec(n_y);
  fail("unknown architecture preset '" + preset + "' (expected paper64|desk32)");
}

void ParamStore::add(const std::string& name, Tensor t) {
  check(!contains(name), "duplicate parameter name '" + name + "'");
  index_[name] = order_.size();
  order_.push_back(name);
  tensors_.push_back(std::move(t));
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  check(it != index_.end(), "unknown parameter '" + name + "'");
  return tensors_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  check(it != index_.end(), "unknown parameter '" + name + "'");
  return tensors_[it->second];
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

namespace {

constexpr float kInitStddev = 0.02f;

Tensor init_weight(Shape shape, Rng& rng) {
  return rng.normal_tensor(std::move(shape), 0.0f, kInitStddev);
}

void add_encoder_params(ParamStore& ps, const EncoderShape& e, Rng& rng) {
  int in_ch = e.in_channels;
  for (size_t i = 0; i < e.conv.size(); ++i) {
    const auto& l = e.conv[i];
    const std::string base = e.prefix + ".conv" + std::to_string(i + 1);
    ps.add(base + ".weight", init_weight({l.channels, in_ch, l.filter, l.filter}, rng));
    ps.add(base + ".bias", Tensor::zeros({l.channels}));
    in_ch = l.channels;
  }
  int in_dim = e.flat_dim + e.vec_dim;
  for (size_t i = 0; i < e.fc.size(); ++i) {
    const std::string base = e.prefix + ".fc" + std::to_string(i + 1);
    ps.add(base + ".weight", init_weight({in_dim, e.fc[i]}, rng));
    ps.add(base + ".bias", Tensor::zeros({e.fc[i]}));
    in_dim = e.fc[i];
  }
  ps.add(e.prefix + ".mu.weight", init_weight({in_dim, e.out_dim}, rng));
  ps.add(e.prefix + ".mu.bias", Tensor::zeros({e.out_dim}));
  ps.add(e.prefix + ".logvar.weight", init_weight({in_dim, e.out_dim}, rng));
  ps.add(e.prefix + ".logvar.bias", Tensor::zeros({e.out_dim}));
}

void add_decoder_params(ParamStore& ps, const DecoderShape& d, Rng& rng) {
  int in_dim = d.in_dim;
  for (size_t i = 0; i < d.fc.size(); ++i) {
    const std::string base = d.prefix + ".fc" + std::to_string(i + 1);
    ps.add(base + ".weight", init_weight({in_dim, d.fc[i]}, rng));
    ps.add(base + ".bias", Tensor::zeros({d.fc[i]}));
    in_dim = d.fc[i];
  }
  int in_ch = d.seed_ch;
  for (size_t i = 0; i < d.conv.size(); ++i) {
    const auto& l = d.conv[i];
    const std::string base = d.prefix + ".conv" + std::to_string(i + 1);
    ps.add(base + ".weight", init_weight({l.channels, in_ch, l.filter, l.filter}, rng));
    ps.add(base + ".bias", Tensor::zeros({l.channels}));
    in_ch = l.channels;
  }
  ps.add(d.prefix + ".out.weight",
         init_weight({d.out_channels, in_ch, d.head_filter, d.head_filter}, rng));
  ps.add(d.prefix + ".out.bias", Tensor::zeros({d.out_channels}));
  if (d.gate_head) {
    ps.add(d.prefix + ".gate.weight", init_weight({1, in_ch, d.head_filter, d.head_filter}, rng));
    ps.add(d.prefix + ".gate.bias", Tensor::zeros({1}));
  }
}

}  // namespace

ParamStore init_params(const ArchitectureSpec& spec, ModelKind kind, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamStore ps;
  if (kind == ModelKind::kDisCvae) {
    add_encoder_params(ps, encoder_shape(spec, kind, EncoderRole::kForeground), rng);
    add_encoder_params(ps, encoder_shape(spec, kind, EncoderRole::kBackground), rng);
    add_decoder_params(ps, decoder_shape(spec, kind, DecoderRole::kForeground), rng);
    add_decoder_params(ps, decoder_shape(spec, kind, DecoderRole::kBackground), rng);
  } else {
    add_encoder_params(ps, encoder_shape(spec, kind, EncoderRole::kMain), rng);
    add_decoder_params(ps, decoder_shape(spec, kind, DecoderRole::kMain), rng);
  }
  return ps;
}

NodeId BoundParams::at(const std::string& name) const {
  auto it = nodes.find(name);
  check(it != nodes.end(), "parameter '" + name + "' not bound on tape");
  return it->second;
}

BoundParams bind_params(Tape& t, const ParamStore& params, bool requires_grad) {
  BoundParams bp;
  for (const auto& name : params.names())
    bp.nodes[name] = t.leaf(params.get(name), requires_grad);
  return bp;
}

Tensor dropout_mask(const Shape& shape, float ratio, Rng& rng) {
  check(ratio >= 0.0f && ratio < 1.0f, "dropout ratio must be in [0,1)");
  Tensor m(shape);
  const float keep = 1.0f / (1.0f - ratio);
  for (float& v : m.data) v = rng.uniform() < ratio ? 0.0f : keep;
  return m;
}

GaussianParams encode(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                      ModelKind kind, EncoderRole role,
                      const std::vector<NodeId>& image_parts,
                      const std::vector<NodeId>& vector_parts, bool train,
                      Rng* dropout_rng) {
  const EncoderShape e = encoder_shape(spec, kind, role);

  check(!image_parts.empty(), "encode: image stream is empty");
  NodeId x = ops::concat(t, image_parts);
  const Tensor& xv = t.value(x);
  check(xv.rank() == 4 && xv.shape[2] == spec.image_size && xv.shape[3] == spec.image_size,
        "encode: image stream must be [N,C," + std::to_string(spec.image_size) + "," +
            std::to_string(spec.image_size) + "], got " + shape_str(xv.shape));
  check(xv.shape[1] == e.in_channels,
        "encode: expected " + std::to_string(e.in_channels) + " image channels, got " +
            std::to_string(xv.shape[1]));
  const int batch = xv.shape[0];

  for (size_t i = 0; i < e.conv.size(); ++i) {
    const auto& l = e.conv[i];
    const std::string base = e.prefix + ".conv" + std::to_string(i + 1);
    x = ops::relu(t, ops::conv2d(t, x, p.at(base + ".weight"), p.at(base + ".bias"), l.stride,
                                 conv_pad(l.filter)));
  }
  NodeId h = ops::reshape(t, x, {batch, e.flat_dim});
  if (train && spec.dropout > 0.0f && dropout_rng != nullptr)
    h = ops::mul(t, h, t.constant(dropout_mask({batch, e.flat_dim}, spec.dropout, *dropout_rng)));

  int vec_total = 0;
  for (NodeId v : vector_parts) {
    const Tensor& vv = t.value(v);
    check(vv.rank() == 2 && vv.shape[0] == batch,
          "encode: vector stream must be [N,D], got " + shape_str(vv.shape));
    vec_total += vv.shape[1];
  }
  check(vec_total == e.vec_dim, "encode: expected vector stream of dim " +
                                    std::to_string(e.vec_dim) + ", got " +
                                    std::to_string(vec_total));
  if (!vector_parts.empty()) {
    std::vector<NodeId> parts{h};
    parts.insert(parts.end(), vector_parts.begin(), vector_parts.end());
    h = ops::concat(t, parts);
  }
  for (size_t i = 0; i < e.fc.size(); ++i) {
    const std::string base = e.prefix + ".fc" + std::to_string(i + 1);
    h = ops::relu(t, ops::affine(t, h, p.at(base + ".weight"), p.at(base + ".bias")));
  }
  GaussianParams q;
  q.mu = ops::affine(t, h, p.at(e.prefix + ".mu.weight"), p.at(e.prefix + ".mu.bias"));
  q.logvar = ops::clamp(
      t, ops::affine(t, h, p.at(e.prefix + ".logvar.weight"), p.at(e.prefix + ".logvar.bias")),
      -kLogvarClamp, kLogvarClamp);
  return q;
}

DecodeOut decode(Tape& t, const BoundParams& p, const ArchitectureSpec& spec, ModelKind kind,
                 DecoderRole role, const std::vector<NodeId>& vector_parts) {
  const DecoderShape d = decoder_shape(spec, kind, role);
  check(!vector_parts.empty(), "decode: no inputs");
  NodeId h = ops::concat(t, vector_parts);
  const Tensor& hv = t.value(h);
  check(hv.rank() == 2, "decode: inputs must be [N,D]");
  check(hv.shape[1] == d.in_dim, "decode: expected input dim " + std::to_string(d.in_dim) +
                                     ", got " + std::to_string(hv.shape[1]));
  const int batch = hv.shape[0];

  for (size_t i = 0; i < d.fc.size(); ++i) {
    const std::string base = d.prefix + ".fc" + std::to_string(i + 1);
    h = ops::relu(t, ops::affine(t, h, p.at(base + ".weight"), p.at(base + ".bias")));
  }
  NodeId x = ops::reshape(t, h, {batch, d.seed_ch, d.seed_hw, d.seed_hw});
  for (size_t i = 0; i < d.conv.size(); ++i) {
    const auto& l = d.conv[i];
    if (l.upsample) x = ops::upsample2x(t, x);
    const std::string base = d.prefix + ".conv" + std::to_string(i + 1);
    x = ops::relu(t, ops::conv2d(t, x, p.at(base + ".weight"), p.at(base + ".bias"), 1,
                                 conv_pad(l.filter)));
  }
  DecodeOut out;
  out.image = ops::tanh(t, ops::conv2d(t, x, p.at(d.prefix + ".out.weight"),
                                       p.at(d.prefix + ".out.bias"), 1, conv_pad(d.head_filter)));
  if (d.gate_head)
    out.gate = ops::sigmoid(t, ops::conv2d(t, x, p.at(d.prefix + ".gate.weight"),
                                           p.at(d.prefix + ".gate.bias"), 1,
                                           conv_pad(d.head_filter)));
  return out;
}

std::vector<std::string> gate_head_param_names(ModelKind kind) {
  if (kind != ModelKind::kDisCvae) return {};
  return {"fg_dec.gate.weight", "fg_dec.gate.bias"};
}

int encoder_image_channels(const ArchitectureSpec& spec, ModelKind kind, EncoderRole role) {
  return encoder_shape(spec, kind, role).in_channels;
}

}  // namespace lvae
