#include "nvsd/image_io.hpp"

#include <fstream>
#include <stdexcept>

namespace nvsd {

std::uint8_t quantize8(float v) {
  if (v <= 0.0f) return 0;
  if (v >= 1.0f) return 255;
  return static_cast<std::uint8_t>(v * 255.0f + 0.5f);
}

void write_ppm(const std::string& path, const Image& image) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << image.res << " " << image.res << "\n255\n";
  int res = image.res;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(res) * 3);
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + c] = quantize8(image.at(c, y, x));
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
}

namespace {
int read_pnm_int(std::istream& f) {
  int v;
  if (!(f >> v)) throw std::runtime_error("malformed PNM header");
  return v;
}
}  // namespace

Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: bad magic in " + path);
  int w = read_pnm_int(f), h = read_pnm_int(f), maxv = read_pnm_int(f);
  if (w != h || maxv != 255)
    throw std::runtime_error("read_ppm: unsupported format in " + path);
  f.get();  // single whitespace after header
  Image im;
  im.res = w;
  im.chw.assign(static_cast<std::size_t>(3) * w * h, 0.0f);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()), row.size());
    if (!f) throw std::runtime_error("read_ppm: truncated " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0f;
  }
  return im;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& mask,
               int res) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << res << " " << res << "\n255\n";
  f.write(reinterpret_cast<const char*>(mask.data()), mask.size());
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& res) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_pgm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: bad magic in " + path);
  int w = read_pnm_int(f), h = read_pnm_int(f), maxv = read_pnm_int(f);
  if (w != h || maxv != 255)
    throw std::runtime_error("read_pgm: unsupported format in " + path);
  f.get();
  res = w;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h);
  f.read(reinterpret_cast<char*>(mask.data()), mask.size());
  if (!f) throw std::runtime_error("read_pgm: truncated " + path);
  return mask;
}

}  // namespace nvsd
