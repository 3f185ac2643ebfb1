#include "gpmotion/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "gpmotion/errors.hpp"
#include "le_io.hpp"

namespace gpmotion {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'T', 'N'};
constexpr std::uint16_t kVersion = 1;
constexpr double kEdge = 0.4;  // px, softness of the rendered edges

double ramp(double from, double to, double u) {
  return from + (to - from) * 0.5 * (1.0 - std::cos(std::numbers::pi * std::clamp(u, 0.0, 1.0)));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct Wave {
  double kx, ky, phase, amplitude;
};

struct Pattern {
  double cx, cy, r_pool, r_outer;
  std::vector<Wave> texture;

  double operator()(double qx, double qy) const {
    const double dx = qx - cx, dy = qy - cy;
    const double r = std::hypot(dx, dy);
    const double pool = sigmoid((r_pool - r) / kEdge);
    const double tissue = sigmoid((r_outer - r) / kEdge);
    double v = 0.12 + 0.33 * tissue + 0.45 * pool;
    for (const Wave& w : texture) v += w.amplitude * std::cos(w.kx * dx + w.ky * dy + w.phase);
    return v;
  }

  std::uint8_t label(double qx, double qy) const {
    const double r = std::hypot(qx - cx, qy - cy);
    return r < r_pool ? 1 : (r < r_outer ? 2 : 0);
  }
};

}  // namespace

std::size_t Mask::count(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void SyntheticSpec::validate() const {
  if (height < 4 || width < 4) throw ConfigError("data: grid extents must be at least 4");
  if (!(spacing > 0.0)) throw ConfigError("data: spacing must be positive");
  if (frames < 2) throw ConfigError("data: need at least two frames");
  if (frames > 0xffff || height > 0xffff || width > 0xffff) throw ConfigError("data: extents exceed 65535");
  if (!(contraction >= 0.0 && contraction < 0.6)) throw ConfigError("data: contraction must be in [0, 0.6)");
  if (!(es_fraction > 0.0 && es_fraction < 1.0)) throw ConfigError("data: es_fraction must be in (0, 1)");
  if (!(plateau_fraction >= 0.0 && plateau_fraction < 1.0)) throw ConfigError("data: plateau_fraction must be in [0, 1)");
  if (!(pool_radius > 0.0 && ring_thickness > 0.0)) throw ConfigError("data: ring radii must be positive");
  if (center_jitter < 0.0 || noise_std < 0.0) throw ConfigError("data: jitter and noise must be >= 0");
  const double half = 0.5 * static_cast<double>(std::min(height, width) - 1);
  if (half - 2.0 * center_jitter - (pool_radius + ring_thickness) < 2.0)
    throw ConfigError("data: ring does not fit inside the grid with a 2 px margin");
}

std::size_t es_frame(const SyntheticSpec& spec) {
  const auto last = static_cast<double>(spec.frames - 1);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.es_fraction * last)));
}

double scale_curve(const SyntheticSpec& spec, std::size_t frame) {
  if (spec.frames < 2) return 1.0;
  const auto last = static_cast<double>(spec.frames - 1);
  const double tau = static_cast<double>(frame) / last;
  const double tau_es = static_cast<double>(es_frame(spec)) / last;
  const double c = spec.contraction;
  if (tau <= tau_es) return ramp(1.0, 1.0 - c, tau / tau_es);
  const double rest = 1.0 - tau_es;
  const double moving = (1.0 - spec.plateau_fraction) * rest;
  const double relax_end = tau_es + 0.6 * moving;
  const double plateau_end = relax_end + spec.plateau_fraction * rest;
  if (tau <= relax_end) return ramp(1.0 - c, 1.0 - 0.2 * c, (tau - tau_es) / (0.6 * moving));
  if (tau <= plateau_end) return 1.0 - 0.2 * c;
  return ramp(1.0 - 0.2 * c, 1.0, (tau - plateau_end) / (1.0 - plateau_end));
}

SequenceRecord generate_sequence(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, plane = h * w;
  Pattern pat;
  const double jx = std::clamp(spec.center_jitter * rng.normal(), -2.0 * spec.center_jitter, 2.0 * spec.center_jitter);
  const double jy = std::clamp(spec.center_jitter * rng.normal(), -2.0 * spec.center_jitter, 2.0 * spec.center_jitter);
  pat.cx = 0.5 * static_cast<double>(w - 1) + jx;
  pat.cy = 0.5 * static_cast<double>(h - 1) + jy;
  pat.r_pool = spec.pool_radius;
  pat.r_outer = spec.pool_radius + spec.ring_thickness;
  Rng own(spec.texture_seed);
  Rng& tex = spec.texture_seed ? own : rng;
  for (int i = 0; i < 4; ++i) {
    const double freq = tex.uniform(0.35, 0.9);
    const double angle = tex.uniform(0.0, 2.0 * std::numbers::pi);
    pat.texture.push_back({freq * std::cos(angle), freq * std::sin(angle), tex.uniform(0.0, 2.0 * std::numbers::pi),
                           tex.uniform(0.02, 0.05)});
  }

  SequenceRecord rec;
  rec.height = h;
  rec.width = w;
  rec.spacing = to_f32(spec.spacing);
  rec.has_truth = true;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    const double s = to_f32(scale_curve(spec, t));
    const double inv = 1.0 / s;
    Tensor frame({h, w});
    Tensor field({2, h, w});
    Mask mask{h, w, std::vector<std::uint8_t>(plane)};
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t p = y * w + x;
        const double dx = static_cast<double>(x) - pat.cx, dy = static_cast<double>(y) - pat.cy;
        const double qx = pat.cx + dx * inv, qy = pat.cy + dy * inv;
        double v = pat(qx, qy);
        if (spec.noise_std > 0.0) v += spec.noise_std * rng.normal();
        frame[p] = to_f32(std::clamp(v, 0.0, 1.0));
        mask.labels[p] = pat.label(qx, qy);
        field[p] = to_f32((inv - 1.0) * dx);
        field[plane + p] = to_f32((inv - 1.0) * dy);
      }
    rec.frames.push_back(std::move(frame));
    rec.masks.push_back(std::move(mask));
    rec.scale.push_back(s);
    rec.fields.push_back(std::move(field));
  }
  return rec;
}

std::vector<SequenceRecord> generate_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  spec.base.validate();
  if (!(spec.contraction_min <= spec.contraction_max) || !(spec.es_min <= spec.es_max))
    throw ConfigError("data: empty sampling range");
  std::vector<SequenceRecord> out(spec.count);
  const auto n = static_cast<std::ptrdiff_t>(spec.count);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(i));
      SyntheticSpec s = spec.base;
      s.contraction = rng.uniform(spec.contraction_min, spec.contraction_max);
      s.es_fraction = rng.uniform(spec.es_min, spec.es_max);
      out[static_cast<std::size_t>(i)] = generate_sequence(s, rng);
    } catch (...) {
#pragma omp critical
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<double> ground_truth_volume_curve(const SequenceRecord& record) {
  if (record.masks.empty()) throw DataError("sequence has no masks");
  std::vector<double> area;
  for (const Mask& m : record.masks) area.push_back(static_cast<double>(m.count(1)) * record.spacing * record.spacing);
  return area;
}

Tensor rotate90(const Tensor& image, int quarter_turns) {
  if (image.rank() != 2 || image.dim(0) != image.dim(1)) throw ShapeError("rotate90: square [H, W] image required");
  const std::size_t n = image.dim(0);
  Tensor cur = image;
  for (int k = ((quarter_turns % 4) + 4) % 4; k > 0; --k) {
    Tensor next({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next[i * n + j] = cur[j * n + (n - 1 - i)];
    cur = std::move(next);
  }
  return cur;
}

Mask rotate90(const Mask& mask, int quarter_turns) {
  if (mask.height != mask.width) throw ShapeError("rotate90: square mask required");
  const std::size_t n = mask.height;
  Mask cur = mask;
  for (int k = ((quarter_turns % 4) + 4) % 4; k > 0; --k) {
    Mask next = cur;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) next.labels[i * n + j] = cur.labels[j * n + (n - 1 - i)];
    cur = std::move(next);
  }
  return cur;
}

SequenceRecord rotate90(const SequenceRecord& record, int quarter_turns) {
  const int turns = ((quarter_turns % 4) + 4) % 4;
  SequenceRecord out = record;
  for (auto& f : out.frames) f = rotate90(f, turns);
  for (auto& m : out.masks) m = rotate90(m, turns);
  const std::size_t n = record.height, plane = n * n;
  for (auto& field : out.fields) {
    for (int k = 0; k < turns; ++k) {
      std::vector<double> ux(field.data(), field.data() + plane), uy(field.data() + plane, field.data() + 2 * plane);
      const Tensor rx = rotate90(Tensor({n, n}, std::move(ux)), 1);
      const Tensor ry = rotate90(Tensor({n, n}, std::move(uy)), 1);
      // Quarter turn of the vectors themselves: (dx, dy) -> (dy, -dx).
      for (std::size_t p = 0; p < plane; ++p) {
        field[p] = ry[p];
        field[plane + p] = -rx[p];
      }
    }
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<SequenceRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  io::write_u16(os, kVersion);
  io::write_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const SequenceRecord& r : records) {
    const std::size_t f = r.frames.size(), plane = r.height * r.width;
    if (f > 0xffff || r.height > 0xffff || r.width > 0xffff) throw DataError("record extents exceed u16");
    io::write_u16(os, static_cast<std::uint16_t>(f));
    io::write_u16(os, static_cast<std::uint16_t>(r.height));
    io::write_u16(os, static_cast<std::uint16_t>(r.width));
    io::write_f32(os, static_cast<float>(r.spacing));
    const bool has_mask = !r.masks.empty();
    io::write_u8(os, has_mask ? 1 : 0);
    for (const Tensor& frame : r.frames) {
      if (frame.size() != plane) throw DataError("frame size does not match the record grid");
      for (double v : frame.values()) io::write_f32(os, static_cast<float>(v));
    }
    if (has_mask) {
      if (r.masks.size() != f) throw DataError("mask count differs from frame count");
      for (const Mask& m : r.masks) {
        if (m.labels.size() != plane) throw DataError("mask size does not match the record grid");
        os.write(reinterpret_cast<const char*>(m.labels.data()), static_cast<std::streamsize>(plane));
      }
    }
    io::write_u8(os, r.has_truth ? 1 : 0);
    if (r.has_truth) {
      if (r.scale.size() != f || r.fields.size() != f) throw DataError("ground truth does not cover every frame");
      for (double s : r.scale) io::write_f32(os, static_cast<float>(s));
      for (const Tensor& u : r.fields)
        for (std::size_t p = 0; p < plane; ++p) {
          io::write_f32(os, static_cast<float>(u[p]));
          io::write_f32(os, static_cast<float>(u[plane + p]));
        }
    }
  }
  if (!os) throw DataError("failed writing " + path.string());
}

std::vector<SequenceRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw DataError("truncated file: " + path.string());
  if (!std::equal(magic, magic + 4, kMagic)) throw DataError("bad magic in " + path.string());
  try {
    const std::uint16_t version = io::read_u16(is);
    if (version != kVersion)
      throw DataError("unsupported version " + std::to_string(version) + " in " + path.string());
    const std::uint32_t count = io::read_u32(is);
    std::vector<SequenceRecord> out;
    for (std::uint32_t i = 0; i < count; ++i) {
      SequenceRecord r;
      const std::size_t f = io::read_u16(is);
      r.height = io::read_u16(is);
      r.width = io::read_u16(is);
      r.spacing = io::read_f32(is);
      const std::size_t plane = r.height * r.width;
      if (!f || !plane) throw DataError("empty record in " + path.string());
      const bool has_mask = io::read_u8(is) != 0;
      for (std::size_t t = 0; t < f; ++t) {
        Tensor frame({r.height, r.width});
        for (auto& v : frame.values()) v = io::read_f32(is);
        r.frames.push_back(std::move(frame));
      }
      if (has_mask)
        for (std::size_t t = 0; t < f; ++t) {
          const std::string raw = io::read_bytes(is, plane);
          r.masks.push_back({r.height, r.width, std::vector<std::uint8_t>(raw.begin(), raw.end())});
        }
      r.has_truth = io::read_u8(is) != 0;
      if (r.has_truth) {
        for (std::size_t t = 0; t < f; ++t) r.scale.push_back(io::read_f32(is));
        for (std::size_t t = 0; t < f; ++t) {
          Tensor u({2, r.height, r.width});
          for (std::size_t p = 0; p < plane; ++p) {
            u[p] = io::read_f32(is);
            u[plane + p] = io::read_f32(is);
          }
          r.fields.push_back(std::move(u));
        }
      }
      out.push_back(std::move(r));
    }
    return out;
  } catch (const DataError& e) {
    if (std::string(e.what()).rfind("truncated", 0) == 0) throw DataError("truncated file: " + path.string());
    throw;
  }
}

}  // namespace gpmotion
