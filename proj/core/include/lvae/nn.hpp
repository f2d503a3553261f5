#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lvae/tape.hpp"
#include "lvae/vae_math.hpp"

namespace lvae {

enum class ModelKind { kVae, kCvae, kDisCvae };

std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct ConvLayerSpec {
  int channels;
  int filter;
  int stride;
};

struct DecoderLayerSpec {
  int channels;
  int filter;
  bool upsample;  // nearest-neighbour 2x before the convolution
};

/// Shared architecture description for every network in a model. Background
/// networks reuse the same shape with channels scaled by `bg_scale`.
struct ArchitectureSpec {
  std::string name = "custom";
  int image_size = 32;
  int image_channels = 3;

  std::vector<ConvLayerSpec> enc_conv;
  std::vector<int> enc_fc;  // widths after the attribute merge

  std::vector<int> dec_fc;  // widths before the seed layer
  int dec_seed_hw = 4;
  int dec_seed_channels = 32;
  std::vector<DecoderLayerSpec> dec_conv;  // trunk; output heads attach after
  int head_filter = 3;

  int n_zf = 48;
  int n_zb = 16;
  int n_y = 9;
  float dropout = 0.5f;
  float bg_scale = 0.5f;

  int n_z() const { return n_zf + n_zb; }
  void validate() const;  // throws a descriptive error on inconsistency
};

/// Appendix-faithful 64x64 architecture (conv 64,128,256,256,1024 / filters
/// 5,5,3,3,4; fc 1024,192; decoder fc 256 -> 8x8x256, convs 256,256,128,64
/// with the 3-channel head as the fifth convolution; z_F 192, z_B 64).
ArchitectureSpec paper64_spec(int n_y);

/// Small 32x32 architecture that trains in minutes on one CPU core.
ArchitectureSpec desk32_spec(int n_y);

ArchitectureSpec spec_from_preset(const std::string& preset, int n_y);

/// Ordered map from hierarchical parameter name to tensor. Iteration order is
/// insertion order and is the canonical order for init, checkpoints and ADAM.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }
  int64_t total_params() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<Tensor> tensors_;
};

/// Weights ~ N(0, 0.02^2), biases zero; deterministic for a given seed.
ParamStore init_params(const ArchitectureSpec& spec, ModelKind kind, uint64_t seed);

/// Parameters bound onto a tape as leaves.
struct BoundParams {
  NodeId at(const std::string& name) const;
  std::unordered_map<std::string, NodeId> nodes;
};

BoundParams bind_params(Tape& t, const ParamStore& params, bool requires_grad);

enum class EncoderRole { kMain, kForeground, kBackground };
enum class DecoderRole { kMain, kForeground, kBackground };

/// Inverted-dropout mask: entries are 0 with probability `ratio`, else
/// 1/(1-ratio).
Tensor dropout_mask(const Shape& shape, float ratio, Rng& rng);

/// Runs one recognition network. `image_parts` are [N,C,H,W] nodes
/// concatenated channel-wise into the image stream; `vector_parts` are [N,D]
/// nodes merged with the flattened image features before the fully-connected
/// stack. Dropout hits the flattened image features only, and only when
/// `train` is true and `dropout_rng` is provided.
GaussianParams encode(Tape& t, const BoundParams& p, const ArchitectureSpec& spec,
                      ModelKind kind, EncoderRole role,
                      const std::vector<NodeId>& image_parts,
                      const std::vector<NodeId>& vector_parts, bool train,
                      Rng* dropout_rng);

struct DecodeOut {
  NodeId image;    // tanh, in [-1,1]
  NodeId gate = -1;  // sigmoid, (0,1); only for the foreground decoder
};

/// Runs one generation network from the concatenated `vector_parts`.
DecodeOut decode(Tape& t, const BoundParams& p, const ArchitectureSpec& spec, ModelKind kind,
                 DecoderRole role, const std::vector<NodeId>& vector_parts);

/// Names of the gate-head parameters (empty unless `kind` has a gate head).
std::vector<std::string> gate_head_param_names(ModelKind kind);

/// Encoder input channel count for a role under a model kind.
int encoder_image_channels(const ArchitectureSpec& spec, ModelKind kind, EncoderRole role);

}  // namespace lvae
