#include "lvae/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

namespace lvae {

uint8_t image_byte(float v) {
  const float scaled = (v + 1.0f) * 127.5f;
  const long r = std::lroundf(scaled);
  return static_cast<uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
}

float image_value(uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

uint8_t mask_byte(float v) {
  const long r = std::lroundf(v * 255.0f);
  return static_cast<uint8_t>(r < 0 ? 0 : (r > 255 ? 255 : r));
}

float mask_value(uint8_t b) { return static_cast<float>(b) / 255.0f; }

namespace {

void write_pnm(const std::string& path, const Tensor& img, bool color) {
  const int channels = color ? 3 : 1;
  check(img.rank() == 3 && img.shape[0] == channels,
        "image writer expects [" + std::to_string(channels) + ",H,W], got " +
            shape_str(img.shape));
  const int h = img.shape[1], w = img.shape[2];
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot open '" + path + "' for writing");
  out << (color ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w) * channels);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) {
        const float v = img.data[(static_cast<size_t>(ch) * h + r) * w + c];
        row[static_cast<size_t>(c) * channels + ch] = color ? image_byte(v) : mask_byte(v);
      }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  check(out.good(), "short write to '" + path + "'");
}

int read_pnm_token(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comments
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  in >> v;
  check(in.good() && v >= 0, "malformed PNM header in '" + path + "'");
  return v;
}

Tensor read_pnm(const std::string& path, bool color) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  check(magic == (color ? "P6" : "P5"),
        "'" + path + "' is not a " + (color ? "P6 PPM" : "P5 PGM") + " file");
  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  check(maxval == 255, "'" + path + "': only 8-bit images are supported");
  in.get();  // single whitespace after header
  const int channels = color ? 3 : 1;
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  check(in.gcount() == static_cast<std::streamsize>(raw.size()),
        "'" + path + "': truncated pixel data");
  Tensor img(Shape{channels, h, w});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < channels; ++ch) {
        const uint8_t b = raw[(static_cast<size_t>(r) * w + c) * channels + ch];
        img.data[(static_cast<size_t>(ch) * h + r) * w + c] =
            color ? image_value(b) : mask_value(b);
      }
  return img;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& img) { write_pnm(path, img, true); }
Tensor read_ppm(const std::string& path) { return read_pnm(path, true); }
void write_pgm(const std::string& path, const Tensor& mask) { write_pnm(path, mask, false); }
Tensor read_pgm(const std::string& path) { return read_pnm(path, false); }

}  // namespace lvae
