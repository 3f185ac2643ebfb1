#include "gpmotion/inference.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "gpmotion/errors.hpp"

namespace gpmotion {

namespace {

Eigen::MatrixXd to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t[r * t.dim(1) + c];
  return m;
}

Tensor from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return t;
}

Inference decode_all(MotionModel& model, Tape& tape, Var z, const Tensor& i0) {
  const auto& cfg = model.config();
  std::vector<std::size_t> all(cfg.latent_steps);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const Decoded d = model.decode(tape, z, i0, all);
  Inference out;
  out.z.z = to_matrix(z.value());
  out.fields = d.fields.value();
  out.warped = d.warped.value().reshaped({cfg.latent_steps, cfg.height, cfg.width});
  if (!out.fields.all_finite()) throw NumericError("non-finite deformation fields; parameters diverged");
  return out;
}

Inference from_features(MotionModel& model, std::span<const Tensor> frames, std::span<const std::size_t> pairs) {
  if (!model.parameters_finite()) throw NumericError("model parameters are not finite");
  Tape tape;
  const Posterior post = model.tcn(tape, model.feature_matrix(tape, frames, pairs), nullptr, false);
  Inference out = decode_all(model, tape, post.mu, frames[0]);
  out.z.provenance = gp::Provenance::mean;
  out.s = post.s.value();
  out.slots = assign_slots(frames.size() - 1, model.config().latent_steps);
  return out;
}

}  // namespace

Tensor Inference::slot_field(std::size_t slot) const { return deform::field_at(fields, slot); }

std::vector<Tensor> Inference::pair_fields() const {
  std::vector<Tensor> out;
  for (auto s : slots) out.push_back(slot_field(s));
  return out;
}

std::vector<Tensor> Inference::all_fields() const {
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < fields.dim(0); ++s) out.push_back(slot_field(s));
  return out;
}

Inference register_sequence(MotionModel& model, std::span<const Tensor> frames) {
  if (frames.size() < 2) throw DataError("a sequence needs at least two frames");
  std::vector<std::size_t> all(frames.size() - 1);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return from_features(model, frames, all);
}

Inference interpolate(MotionModel& model, std::span<const Tensor> frames, std::span<const std::size_t> provided) {
  if (provided.empty()) throw ConfigError("interpolate: no frames provided (use simulate)");
  if (frames.size() < 2) throw DataError("a sequence needs at least two frames");
  for (auto k : provided)
    if (k + 1 >= frames.size()) throw ConfigError("interpolate: pair index " + std::to_string(k) + " out of range");
  return from_features(model, frames, provided);
}

Inference simulate(MotionModel& model, const Tensor& i0) {
  if (!model.parameters_finite()) throw NumericError("model parameters are not finite");
  const auto& cfg = model.config();
  Tape tape;
  const Posterior post = model.tcn(tape, tape.constant(Tensor({2 * cfg.latent_dims, cfg.latent_steps})), nullptr, false);
  Inference out = decode_all(model, tape, post.mu, i0);
  out.z.provenance = gp::Provenance::mean;
  out.s = post.s.value();
  return out;
}

Inference transport(MotionModel& model, const gp::MotionMatrix& z, const Tensor& i0) {
  const auto& cfg = model.config();
  if (static_cast<std::size_t>(z.z.rows()) != cfg.latent_dims || static_cast<std::size_t>(z.z.cols()) != cfg.latent_steps)
    throw ConfigError("transport: motion matrix is " + std::to_string(z.z.rows()) + "x" + std::to_string(z.z.cols()) +
                      ", model expects " + std::to_string(cfg.latent_dims) + "x" + std::to_string(cfg.latent_steps));
  if (!model.parameters_finite()) throw NumericError("model parameters are not finite");
  Tape tape;
  Inference out = decode_all(model, tape, tape.constant(from_matrix(z.z)), i0);
  out.z.provenance = gp::Provenance::transported;
  return out;
}

std::vector<std::size_t> frames_to_pairs(std::span<const std::size_t> frames, std::size_t frame_count) {
  std::vector<std::size_t> pairs;
  for (auto f : frames) {
    if (f >= frame_count) throw ConfigError("frame " + std::to_string(f) + " out of range");
    if (f == 0) continue;  // the reference is always available
    pairs.push_back(f - 1);
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

std::vector<std::size_t> parse_provide(const std::string& mode, std::size_t frame_count) {
  std::vector<std::size_t> frames;
  const auto every = [&](std::size_t step) {
    for (std::size_t f = 0; f < frame_count; f += step) frames.push_back(f);
  };
  if (mode == "all") {
    every(1);
  } else if (mode == "every2") {
    every(2);
  } else if (mode == "every5") {
    every(5);
  } else if (mode == "first5") {
    for (std::size_t f = 0; f < std::min<std::size_t>(5, frame_count); ++f) frames.push_back(f);
  } else if (mode.rfind("frames", 0) == 0 && mode.size() > 7 && (mode[6] == ' ' || mode[6] == ':')) {
    std::stringstream ss(mode.substr(7));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const long v = std::stol(item, &used);
        if (used != item.size() || v < 0) throw std::invalid_argument(item);
        frames.push_back(static_cast<std::size_t>(v));
      } catch (const std::logic_error&) {
        throw ConfigError("malformed frame list '" + mode.substr(7) + "'");
      }
    }
  } else {
    throw ConfigError("unknown --provide mode '" + mode + "'");
  }
  for (auto f : frames)
    if (f >= frame_count) throw ConfigError("frame " + std::to_string(f) + " out of range");
  std::sort(frames.begin(), frames.end());
  frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
  return frames;
}

metrics::EvalReport evaluate_dataset(MotionModel& model, const std::vector<SequenceRecord>& records,
                                     int quarter_turns) {
  metrics::EvalReport report;
  report.rows.resize(records.size());
  report.undeformed.resize(records.size());
  const auto n = static_cast<std::ptrdiff_t>(records.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto idx = static_cast<std::size_t>(i);
      const SequenceRecord rec = quarter_turns ? rotate90(records[idx], quarter_turns) : records[idx];
      const std::string name = "seq" + std::to_string(idx);
      const auto fields = register_sequence(model, rec.frames).pair_fields();
      report.rows[idx] = metrics::evaluate_sequence(rec, fields, name);
      const std::vector<Tensor> identity(fields.size(), Tensor(fields[0].shape()));
      report.undeformed[idx] = metrics::evaluate_sequence(rec, identity, name);
    } catch (...) {
#pragma omp critical
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

}  // namespace gpmotion
