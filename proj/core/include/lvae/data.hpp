#pragma once

#include <string>
#include <vector>

#include "lvae/tensor.hpp"

namespace lvae {

/// One training example. x and x_F are [C,H,W] in [-1,1]; g is [1,H,W] in
/// [0,1] with 1 meaning the background is visible; y is the attribute vector.
/// x_B is kept by the synthetic generator and empty for ingested data. x_F/g
/// may be empty for datasets without layer annotations (VAE/CVAE only).
struct LabeledExample {
  std::string id;
  Tensor x;
  Tensor x_f;
  Tensor g;
  Tensor y;
  Tensor x_b;

  bool has_layers() const { return !x_f.data.empty() && !g.data.empty(); }
};

struct Dataset {
  std::vector<LabeledExample> examples;
  std::vector<size_t> train_idx;
  std::vector<size_t> test_idx;

  int n_y() const;
  int image_size() const;
  int image_channels() const;
  bool has_layers() const;
};

/// Sprite description. The one-hot shape class plus the continuous fields
/// form the 9-dim attribute vector; the background is deliberately not part
/// of it so the background stays a latent factor.
struct SpriteAttributes {
  int shape_class = 0;      // 0 circle, 1 square, 2 triangle
  float red = 0.5f, green = 0.5f, blue = 0.5f;  // foreground color, [0,1]
  float size = 0.5f;        // [0,1]
  float pos_x = 0.5f;       // [0,1]
  float pos_y = 0.5f;       // [0,1]

  Tensor to_attributes() const;  // length 9
  static SpriteAttributes random(Rng& rng);
};

constexpr int kSpriteAttrDim = 9;

/// Renders one anti-aliased sprite on a smooth gradient background.
/// Composition holds exactly on the returned tensors: x == x_F + x_B (*) g.
/// Sensor noise (sigma 0.01) perturbs the background layer before
/// composition so the identity survives it.
LabeledExample gen_sprite(const SpriteAttributes& attrs, uint64_t bg_seed,
                          uint64_t noise_seed, int size);

/// In-memory sprite dataset with a 70/30 train/test split; attribute draws
/// for the two splits come from disjoint RNG substreams.
Dataset gen_examples(int n, uint64_t seed, int size);

/// Generates, writes images + manifest under out_dir, and returns the dataset
/// as reloaded from disk (so returned tensors match the files bit-exactly).
Dataset gen_dataset(int n, uint64_t seed, int size, const std::string& out_dir);

/// Loads a dataset from a manifest CSV
/// (`id,image_path,fg_path,mask_path,split,y_0..y_{k-1}`, paths relative to
/// the manifest). Rows with missing layer files are allowed only if the whole
/// dataset omits them.
Dataset ingest(const std::string& manifest_path);

void write_manifest(const Dataset& ds, const std::string& out_dir);

/// Stacks a per-example tensor field into a batch: [C,H,W] fields become
/// [N,C,H,W], vector fields become [N,D].
Tensor stack_field(const std::vector<LabeledExample>& examples,
                   const std::vector<size_t>& idx, Tensor LabeledExample::*field);

}  // namespace lvae
