#include "gpmotion/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gpmotion/config.hpp"
#include "gpmotion/errors.hpp"

namespace gpmotion {

void write_pgm(const std::filesystem::path& path, const Tensor& image, PgmScale scale) {
  if (image.rank() != 2) throw ShapeError("write_pgm: expected an [H, W] image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  const double span = scale.hi > scale.lo ? scale.hi - scale.lo : 1.0;
  for (double v : image.values()) {
    const double q = std::clamp(std::round(255.0 * (v - scale.lo) / span), 0.0, 255.0);
    os.put(static_cast<char>(static_cast<unsigned char>(q)));
  }
  if (!os) throw DataError("failed writing " + path.string());
  save_json(path.string() + ".json", {{"lo", scale.lo}, {"hi", scale.hi}, {"value_per_level", span / 255.0}});
}

PgmScale write_pgm_autoscale(const std::filesystem::path& path, const Tensor& image) {
  const auto [lo, hi] = std::minmax_element(image.values().begin(), image.values().end());
  PgmScale s{*lo, *hi};
  write_pgm(path, image, s);
  return s;
}

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255 || !w || !h) throw DataError("unsupported PGM " + path.string());
  is.get();
  Tensor out({h, w});
  for (auto& v : out.values()) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw DataError("truncated PGM " + path.string());
    v = static_cast<double>(c);
  }
  return out;
}

}  // namespace gpmotion
