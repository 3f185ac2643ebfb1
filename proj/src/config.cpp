#include "gpmotion/config.hpp"

#include <fstream>
#include <set>

#include "gpmotion/errors.hpp"

namespace gpmotion {

namespace {

using nlohmann::json;

// Reads keys from one JSON object and rejects anything it was not asked for.
class Section {
 public:
  Section(const json& doc, std::string name) : doc_(doc), name_(std::move(name)) {
    if (!doc_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key " + name_ + "." + key + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return doc_.contains(key) ? &doc_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : doc_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown config key " + name_ + "." + item.key());
  }

 private:
  const json& doc_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_kernel(const json& doc, gp::KernelSpec& k) {
  Section s(doc, "kernel");
  std::string kind = gp::to_string(k.kind);
  s.get("kind", kind);
  k.kind = gp::kernel_kind_from_string(kind);
  s.get("length_scale", k.length_scale);
  s.get("sigma_k", k.sigma_k);
  s.get("jitter", k.jitter);
  s.finish();
}

json kernel_json(const gp::KernelSpec& k) {
  return {{"kind", gp::to_string(k.kind)}, {"length_scale", k.length_scale}, {"sigma_k", k.sigma_k}, {"jitter", k.jitter}};
}

void read_model_keys(Section& s, ModelConfig& m) {
  s.get("latent_dims", m.latent_dims);
  s.get("latent_steps", m.latent_steps);
  s.get("encoder_channels", m.encoder_channels);
  s.get("decoder_channels", m.decoder_channels);
  s.get("dilations", m.dilations);
  s.get("tcn_dropout", m.tcn_dropout);
  s.get("sigma_l", m.sigma_l);
  s.get("td_rate", m.td_rate);
  s.get("max_frames", m.max_frames);
  s.get("v_max", m.v_max);
  s.get("squaring_steps", m.squaring_steps);
  std::string rule = m.adaptive_squaring ? "adaptive" : "fixed";
  s.get("squaring_rule", rule);
  if (rule != "fixed" && rule != "adaptive") throw ConfigError("model.squaring_rule must be 'fixed' or 'adaptive'");
  m.adaptive_squaring = rule == "adaptive";
  s.get("sigma_spatial_mm", m.smoothing.sigma_spatial_mm);
  s.get("sigma_temporal", m.smoothing.sigma_temporal);
}

json model_keys(const ModelConfig& m) {
  return {{"latent_dims", m.latent_dims},
          {"latent_steps", m.latent_steps},
          {"encoder_channels", m.encoder_channels},
          {"decoder_channels", m.decoder_channels},
          {"dilations", m.dilations},
          {"tcn_dropout", m.tcn_dropout},
          {"sigma_l", m.sigma_l},
          {"td_rate", m.td_rate},
          {"max_frames", m.max_frames},
          {"v_max", m.v_max},
          {"squaring_steps", m.squaring_steps},
          {"squaring_rule", m.adaptive_squaring ? "adaptive" : "fixed"},
          {"sigma_spatial_mm", m.smoothing.sigma_spatial_mm},
          {"sigma_temporal", m.smoothing.sigma_temporal}};
}

}  // namespace

void RunConfig::validate() const {
  data.base.validate();
  model.validate();
  train.validate();
  if (model.height != data.base.height || model.width != data.base.width)
    throw ConfigError("model grid differs from the data grid");
  if (data.base.frames - 1 > model.latent_steps)
    throw ConfigError("data.frames - 1 exceeds model.latent_steps; frames would be dropped");
  if (!(data.contraction_min <= data.contraction_max && data.contraction_min >= 0.0 && data.contraction_max < 0.6))
    throw ConfigError("data contraction range must lie in [0, 0.6)");
  if (!(data.es_min <= data.es_max && data.es_min > 0.0 && data.es_max < 1.0))
    throw ConfigError("data ES range must lie in (0, 1)");
  for (int r : eval.rotations)
    if (r % 90 != 0) throw ConfigError("eval.rotations must be multiples of 90 degrees");
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  Section top(doc, "config");
  if (const json* d = top.child("data")) {
    Section s(*d, "data");
    auto& b = c.data.base;
    s.get("height", b.height);
    s.get("width", b.width);
    s.get("spacing", b.spacing);
    s.get("frames", b.frames);
    s.get("pool_radius", b.pool_radius);
    s.get("ring_thickness", b.ring_thickness);
    s.get("plateau_fraction", b.plateau_fraction);
    s.get("center_jitter", b.center_jitter);
    s.get("noise_std", b.noise_std);
    s.get("texture_seed", b.texture_seed);
    s.get("count", c.data.count);
    s.get("contraction_min", c.data.contraction_min);
    s.get("contraction_max", c.data.contraction_max);
    s.get("es_min", c.data.es_min);
    s.get("es_max", c.data.es_max);
    s.finish();
  }
  if (const json* m = top.child("model")) {
    Section s(*m, "model");
    read_model_keys(s, c.model);
    s.finish();
  }
  if (const json* k = top.child("kernel")) read_kernel(*k, c.model.kernel);
  if (const json* t = top.child("train")) {
    Section s(*t, "train");
    auto& tr = c.train;
    s.get("epochs", tr.epochs);
    s.get("learning_rate", tr.adam.learning_rate);
    s.get("beta1", tr.adam.beta1);
    s.get("beta2", tr.adam.beta2);
    s.get("epsilon", tr.adam.epsilon);
    s.get("weight_decay", tr.adam.weight_decay);
    s.get("augment", tr.augment.enabled);
    s.get("max_shift_px", tr.augment.max_shift_px);
    s.get("max_rotation_deg", tr.augment.max_rotation_deg);
    s.get("scale_min", tr.augment.scale_min);
    s.get("scale_max", tr.augment.scale_max);
    s.get("mirror_prob", tr.augment.mirror_prob);
    s.get("check_finite", tr.check_finite);
    s.finish();
  }
  if (const json* e = top.child("eval")) {
    Section s(*e, "eval");
    s.get("rotations", c.eval.rotations);
    s.finish();
  }
  top.get("seed", c.seed);
  top.finish();
  c.model.height = c.data.base.height;
  c.model.width = c.data.base.width;
  c.model.spacing = c.data.base.spacing;
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& b = c.data.base;
  const auto& tr = c.train;
  return {{"data",
           {{"height", b.height},
            {"width", b.width},
            {"spacing", b.spacing},
            {"frames", b.frames},
            {"pool_radius", b.pool_radius},
            {"ring_thickness", b.ring_thickness},
            {"plateau_fraction", b.plateau_fraction},
            {"center_jitter", b.center_jitter},
            {"noise_std", b.noise_std},
            {"texture_seed", b.texture_seed},
            {"count", c.data.count},
            {"contraction_min", c.data.contraction_min},
            {"contraction_max", c.data.contraction_max},
            {"es_min", c.data.es_min},
            {"es_max", c.data.es_max}}},
          {"model", model_keys(c.model)},
          {"kernel", kernel_json(c.model.kernel)},
          {"train",
           {{"epochs", tr.epochs},
            {"learning_rate", tr.adam.learning_rate},
            {"beta1", tr.adam.beta1},
            {"beta2", tr.adam.beta2},
            {"epsilon", tr.adam.epsilon},
            {"weight_decay", tr.adam.weight_decay},
            {"augment", tr.augment.enabled},
            {"max_shift_px", tr.augment.max_shift_px},
            {"max_rotation_deg", tr.augment.max_rotation_deg},
            {"scale_min", tr.augment.scale_min},
            {"scale_max", tr.augment.scale_max},
            {"mirror_prob", tr.augment.mirror_prob},
            {"check_finite", tr.check_finite}}},
          {"eval", {{"rotations", c.eval.rotations}}},
          {"seed", c.seed}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(doc);
}

void save_json(const std::filesystem::path& path, const json& doc) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << doc.dump(2) << '\n';
  if (!os) throw DataError("failed writing " + path.string());
}

json model_to_json(const ModelConfig& m) {
  json j = model_keys(m);
  j["height"] = m.height;
  j["width"] = m.width;
  j["spacing"] = m.spacing;
  j["kernel"] = kernel_json(m.kernel);
  return j;
}

ModelConfig model_from_json(const json& doc) {
  ModelConfig m;
  Section s(doc, "model");
  read_model_keys(s, m);
  s.get("height", m.height);
  s.get("width", m.width);
  s.get("spacing", m.spacing);
  if (const json* k = s.child("kernel")) read_kernel(*k, m.kernel);
  s.finish();
  m.validate();
  return m;
}

}  // namespace gpmotion
