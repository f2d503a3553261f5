#include "lvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lvae/image_io.hpp"

namespace fs = std::filesystem;

namespace lvae {

int Dataset::n_y() const {
  check(!examples.empty(), "dataset is empty");
  return examples[0].y.shape[0];
}

int Dataset::image_size() const {
  check(!examples.empty(), "dataset is empty");
  return examples[0].x.shape[1];
}

int Dataset::image_channels() const {
  check(!examples.empty(), "dataset is empty");
  return examples[0].x.shape[0];
}

bool Dataset::has_layers() const {
  check(!examples.empty(), "dataset is empty");
  return examples[0].has_layers();
}

Tensor SpriteAttributes::to_attributes() const {
  Tensor y(Shape{kSpriteAttrDim});
  y.data[shape_class] = 1.0f;
  y.data[3] = red;
  y.data[4] = green;
  y.data[5] = blue;
  y.data[6] = size;
  y.data[7] = pos_x;
  y.data[8] = pos_y;
  return y;
}

SpriteAttributes SpriteAttributes::random(Rng& rng) {
  SpriteAttributes a;
  a.shape_class = rng.uniform_int(0, 2);
  a.red = static_cast<float>(rng.uniform());
  a.green = static_cast<float>(rng.uniform());
  a.blue = static_cast<float>(rng.uniform());
  a.size = static_cast<float>(rng.uniform());
  a.pos_x = static_cast<float>(rng.uniform());
  a.pos_y = static_cast<float>(rng.uniform());
  return a;
}

namespace {

// point-in-shape test in pixel coordinates
bool inside_shape(const SpriteAttributes& a, float px, float py, float cx, float cy,
                  float r) {
  const float dx = px - cx;
  const float dy = py - cy;
  switch (a.shape_class) {
    case 0:
      return dx * dx + dy * dy <= r * r;
    case 1: {
      const float h = 0.9f * r;
      return std::fabs(dx) <= h && std::fabs(dy) <= h;
    }
    default: {
      // upward equilateral triangle inscribed in radius r
      const float x0 = 0.0f, y0 = -r;
      const float x1 = -0.866f * r, y1 = 0.5f * r;
      const float x2 = 0.866f * r, y2 = 0.5f * r;
      auto side = [&](float ax, float ay, float bx, float by) {
        return (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
      };
      const float s0 = side(x0, y0, x1, y1);
      const float s1 = side(x1, y1, x2, y2);
      const float s2 = side(x2, y2, x0, y0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
  }
}

constexpr int kSupersample = 4;
constexpr float kNoiseSigma = 0.01f;

}  // namespace

LabeledExample gen_sprite(const SpriteAttributes& attrs, uint64_t bg_seed,
                          uint64_t noise_seed, int size) {
  check(size == 32 || size == 64, "gen_sprite: size must be 32 or 64");
  const int s = size;
  LabeledExample ex;
  ex.y = attrs.to_attributes();

  // smooth gradient background between two random colors, plus sensor noise;
  // noise lands on the background layer so the composition identity is exact
  Rng bg_rng(bg_seed);
  float c0[3], c1[3];
  for (int ch = 0; ch < 3; ++ch) c0[ch] = static_cast<float>(bg_rng.uniform(-0.9, 0.9));
  for (int ch = 0; ch < 3; ++ch) c1[ch] = static_cast<float>(bg_rng.uniform(-0.9, 0.9));
  const float theta = static_cast<float>(bg_rng.uniform(0.0, 2.0 * M_PI));
  const float dirx = std::cos(theta), diry = std::sin(theta);

  Rng noise_rng(noise_seed);
  ex.x_b = Tensor(Shape{3, s, s});
  const float span = std::fabs(dirx) * (s - 1) + std::fabs(diry) * (s - 1);
  const float proj0 = std::min(0.0f, dirx * (s - 1)) + std::min(0.0f, diry * (s - 1));
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      const float t = span > 0 ? (dirx * c + diry * r - proj0) / span : 0.5f;
      for (int ch = 0; ch < 3; ++ch) {
        float v = c0[ch] + t * (c1[ch] - c0[ch]) +
                  kNoiseSigma * static_cast<float>(noise_rng.normal());
        ex.x_b.data[(static_cast<size_t>(ch) * s + r) * s + c] =
            std::clamp(v, -1.0f, 1.0f);
      }
    }

  // anti-aliased coverage via supersampling
  const float cx = (0.30f + 0.40f * attrs.pos_x) * s;
  const float cy = (0.30f + 0.40f * attrs.pos_y) * s;
  const float radius = (0.12f + 0.23f * attrs.size) * s;
  const float fg[3] = {-0.9f + 1.8f * attrs.red, -0.9f + 1.8f * attrs.green,
                       -0.9f + 1.8f * attrs.blue};

  ex.g = Tensor(Shape{1, s, s});
  ex.x_f = Tensor(Shape{3, s, s});
  ex.x = Tensor(Shape{3, s, s});
  const float sub = 1.0f / kSupersample;
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy)
        for (int sx = 0; sx < kSupersample; ++sx) {
          const float px = c + (sx + 0.5f) * sub;
          const float py = r + (sy + 0.5f) * sub;
          if (inside_shape(attrs, px, py, cx, cy, radius)) ++hits;
        }
      const float alpha =
          static_cast<float>(hits) / (kSupersample * kSupersample);
      const float gate = 1.0f - alpha;
      ex.g.data[static_cast<size_t>(r) * s + c] = gate;
      for (int ch = 0; ch < 3; ++ch) {
        const size_t i = (static_cast<size_t>(ch) * s + r) * s + c;
        const float xf = fg[ch] * alpha;
        ex.x_f.data[i] = xf;
        const float bg_vis = ex.x_b.data[i] * gate;
        ex.x.data[i] = xf + bg_vis;
      }
    }
  return ex;
}

Dataset gen_examples(int n, uint64_t seed, int size) {
  check(n >= 1, "gen_examples: n must be >= 1");
  const int n_train = static_cast<int>(std::llround(0.7 * n));
  Rng master(seed);
  Rng train_rng = master.fork(1);
  Rng test_rng = master.fork(2);
  Rng seed_rng = master.fork(3);

  Dataset ds;
  ds.examples.reserve(static_cast<size_t>(n));
  char buf[32];
  for (int i = 0; i < n; ++i) {
    const bool is_train = i < n_train;
    Rng& attr_rng = is_train ? train_rng : test_rng;
    SpriteAttributes attrs = SpriteAttributes::random(attr_rng);
    LabeledExample ex = gen_sprite(attrs, seed_rng.next_u64(), seed_rng.next_u64(), size);
    std::snprintf(buf, sizeof(buf), "%s_%06d", is_train ? "train" : "test",
                  is_train ? i : i - n_train);
    ex.id = buf;
    if (is_train)
      ds.train_idx.push_back(ds.examples.size());
    else
      ds.test_idx.push_back(ds.examples.size());
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void write_manifest(const Dataset& ds, const std::string& out_dir) {
  const fs::path root(out_dir);
  fs::create_directories(root / "images");
  fs::create_directories(root / "fg");
  fs::create_directories(root / "masks");

  std::ofstream csv(root / "manifest.csv", std::ios::binary);
  check(csv.good(), "cannot write manifest under '" + out_dir + "'");
  const int ny = ds.n_y();
  csv << "id,image_path,fg_path,mask_path,split";
  for (int i = 0; i < ny; ++i) csv << ",y_" << i;
  csv << "\n";

  std::vector<bool> in_train(ds.examples.size(), false);
  for (size_t i : ds.train_idx) in_train[i] = true;

  char num[32];
  for (size_t i = 0; i < ds.examples.size(); ++i) {
    const LabeledExample& ex = ds.examples[i];
    const bool is_train = in_train[i];
    const std::string img = "images/" + ex.id + ".ppm";
    const std::string fg = "fg/" + ex.id + ".ppm";
    const std::string mask = "masks/" + ex.id + ".pgm";
    write_ppm((root / img).string(), ex.x);
    write_ppm((root / fg).string(), ex.x_f);
    write_pgm((root / mask).string(), ex.g);
    csv << ex.id << "," << img << "," << fg << "," << mask << ","
        << (is_train ? "train" : "test");
    for (int d = 0; d < ny; ++d) {
      std::snprintf(num, sizeof(num), "%.9g", ex.y.data[d]);
      csv << "," << num;
    }
    csv << "\n";
  }
  check(csv.good(), "short write while emitting manifest");
}

Dataset gen_dataset(int n, uint64_t seed, int size, const std::string& out_dir) {
  Dataset ds = gen_examples(n, seed, size);
  write_manifest(ds, out_dir);
  // hand back what the files actually hold
  return ingest((fs::path(out_dir) / "manifest.csv").string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Dataset ingest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  check(in.good(), "cannot open manifest '" + manifest_path + "'");
  const fs::path root = fs::path(manifest_path).parent_path();

  std::string line;
  check(static_cast<bool>(std::getline(in, line)), "manifest is empty");
  const std::vector<std::string> header = split_csv(line);
  check(header.size() >= 6 && header[0] == "id" && header[1] == "image_path" &&
            header[2] == "fg_path" && header[3] == "mask_path" && header[4] == "split",
        "manifest header must be id,image_path,fg_path,mask_path,split,y_0..");
  const int ny = static_cast<int>(header.size()) - 5;
  for (int i = 0; i < ny; ++i)
    check(header[static_cast<size_t>(5 + i)] == "y_" + std::to_string(i),
          "manifest attribute columns must be y_0..y_" + std::to_string(ny - 1));

  Dataset ds;
  int row = 1;
  int expect_layers = -1;  // -1 unknown, 0 absent, 1 present
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    const std::string where = "manifest row " + std::to_string(row);
    check(static_cast<int>(f.size()) == 5 + ny,
          where + ": expected " + std::to_string(5 + ny) + " fields, got " +
              std::to_string(f.size()));
    LabeledExample ex;
    ex.id = f[0];
    try {
      ex.x = read_ppm((root / f[1]).string());
    } catch (const std::exception& e) {
      fail(where + " (" + ex.id + "): " + e.what());
    }
    const bool has_fg = !f[2].empty();
    const bool has_mask = !f[3].empty();
    check(has_fg == has_mask, where + ": fg_path and mask_path must be both set or both empty");
    if (expect_layers == -1) expect_layers = has_fg ? 1 : 0;
    check((expect_layers == 1) == has_fg,
          where + ": layer annotations must be present for all rows or none");
    if (has_fg) {
      try {
        ex.x_f = read_ppm((root / f[2]).string());
        ex.g = read_pgm((root / f[3]).string());
      } catch (const std::exception& e) {
        fail(where + " (" + ex.id + "): " + e.what());
      }
      check(ex.x_f.same_shape(ex.x), where + ": foreground geometry " +
                                         shape_str(ex.x_f.shape) + " != image geometry " +
                                         shape_str(ex.x.shape));
      check(ex.g.shape[1] == ex.x.shape[1] && ex.g.shape[2] == ex.x.shape[2],
            where + ": mask geometry does not match image");
    }
    ex.y = Tensor(Shape{ny});
    for (int d = 0; d < ny; ++d) {
      try {
        ex.y.data[d] = std::stof(f[static_cast<size_t>(5 + d)]);
      } catch (const std::exception&) {
        fail(where + " (" + ex.id + "): bad attribute value '" + f[static_cast<size_t>(5 + d)] +
             "'");
      }
    }
    if (!ds.examples.empty())
      check(ex.x.same_shape(ds.examples[0].x),
            where + ": image geometry differs from the rest of the dataset");
    if (f[4] == "train")
      ds.train_idx.push_back(ds.examples.size());
    else if (f[4] == "test")
      ds.test_idx.push_back(ds.examples.size());
    else
      fail(where + ": unknown split '" + f[4] + "'");
    ds.examples.push_back(std::move(ex));
  }
  check(!ds.examples.empty(), "manifest has no data rows");
  return ds;
}

Tensor stack_field(const std::vector<LabeledExample>& examples,
                   const std::vector<size_t>& idx, Tensor LabeledExample::*field) {
  check(!idx.empty(), "stack_field: empty index list");
  const Tensor& first = examples.at(idx[0]).*field;
  check(!first.data.empty(), "stack_field: field is empty on example " +
                                 examples.at(idx[0]).id);
  Shape out_shape;
  out_shape.push_back(static_cast<int>(idx.size()));
  for (int d : first.shape) out_shape.push_back(d);
  Tensor out(out_shape);
  const int64_t stride = first.size();
  for (size_t i = 0; i < idx.size(); ++i) {
    const Tensor& t = examples.at(idx[i]).*field;
    check(t.same_shape(first), "stack_field: inconsistent shapes in batch");
    std::copy(t.data.begin(), t.data.end(), out.data.begin() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

}  // namespace lvae
