#include "gpmotion/checkpoint.hpp"

#include <fstream>
#include <set>

#include "gpmotion/config.hpp"
#include "gpmotion/errors.hpp"
#include "le_io.hpp"

namespace gpmotion {

namespace {
constexpr char kMagic[4] = {'G', 'P', 'M', 'M'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MotionModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  io::write_u16(os, kVersion);
  const std::string cfg = model_to_json(model.config()).dump();
  io::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
  io::write_bytes(os, cfg);
  for (const Parameter& p : model.parameters()) {
    io::write_u16(os, static_cast<std::uint16_t>(p.name.size()));
    io::write_bytes(os, p.name);
    io::write_u8(os, static_cast<std::uint8_t>(p.value.rank()));
    for (auto e : p.value.shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
    for (double v : p.value.values()) io::write_f64(os, v);
  }
  if (!os) throw DataError("failed writing " + path.string());
}

MotionModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw DataError("truncated checkpoint " + path.string());
  if (!std::equal(magic, magic + 4, kMagic)) throw DataError("bad magic in checkpoint " + path.string());
  const std::uint16_t version = io::read_u16(is);
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t len = io::read_u32(is);
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(io::read_bytes(is, len));
  } catch (const nlohmann::json::parse_error&) {
    throw DataError("checkpoint config block is not valid JSON");
  }
  MotionModel model(model_from_json(cfg));
  std::set<std::string> loaded;
  while (is.peek() != std::char_traits<char>::eof()) {
    const std::string name = io::read_bytes(is, io::read_u16(is));
    Parameter* target = nullptr;
    for (auto& p : model.parameters())
      if (p.name == name) target = &p;
    if (!target) throw DataError("checkpoint holds unknown parameter " + name);
    Shape shape(io::read_u8(is));
    for (auto& e : shape) e = io::read_u32(is);
    if (shape != target->value.shape())
      throw DataError("parameter " + name + " has shape " + shape_str(shape) + ", model expects " +
                      shape_str(target->value.shape()));
    for (auto& v : target->value.values()) v = io::read_f64(is);
    loaded.insert(name);
  }
  if (loaded.size() != model.parameters().size()) throw DataError("checkpoint is missing parameters");
  return model;
}

}  // namespace gpmotion
