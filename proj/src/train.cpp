#include "gpmotion/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>

#include "gpmotion/errors.hpp"

namespace gpmotion {

void TrainSettings::validate() const {
  if (!(adam.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("train: Adam betas must be in [0, 1)");
  if (!(adam.epsilon > 0.0) || adam.weight_decay < 0.0) throw ConfigError("train: bad epsilon or weight decay");
  if (augment.max_shift_px < 0.0 || augment.max_rotation_deg < 0.0 || !(augment.scale_min > 0.0) ||
      augment.scale_min > augment.scale_max || augment.mirror_prob < 0.0 || augment.mirror_prob > 1.0)
    throw ConfigError("train: invalid augmentation ranges");
}

std::vector<Tensor> augment_frames(std::span<const Tensor> frames, const AugmentSettings& a, Rng& rng) {
  std::vector<Tensor> out(frames.begin(), frames.end());
  if (!a.enabled || frames.empty()) return out;
  const std::size_t h = frames[0].dim(0), w = frames[0].dim(1), plane = h * w;
  const double angle = rng.uniform(-a.max_rotation_deg, a.max_rotation_deg) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(a.scale_min, a.scale_max);
  const double tx = rng.uniform(-a.max_shift_px, a.max_shift_px);
  const double ty = rng.uniform(-a.max_shift_px, a.max_shift_px);
  const bool mirror = rng.bernoulli(a.mirror_prob);
  const double cx = 0.5 * static_cast<double>(w - 1), cy = 0.5 * static_cast<double>(h - 1);
  const double ca = std::cos(angle) / scale, sa = std::sin(angle) / scale;
  // Pull-back map x -> A (x - c) + c + t, with A = R(angle) / scale (and a flip).
  Tensor field({2, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      if (mirror) dx = -dx;
      const double sx = ca * dx - sa * dy + cx + tx, sy = sa * dx + ca * dy + cy + ty;
      field[y * w + x] = sx - static_cast<double>(x);
      field[plane + y * w + x] = sy - static_cast<double>(y);
    }
  for (auto& f : out) f = deform::warp(f, field);
  return out;
}

TrainResult train(MotionModel& model, const std::vector<SequenceRecord>& data, const TrainSettings& settings,
                  std::uint64_t seed, const std::function<void(const TrainLogRow&)>& on_step) {
  settings.validate();
  if (data.empty() && settings.epochs > 0) throw DataError("training set is empty");
  const auto& cfg = model.config();
  for (const auto& r : data) {
    if (r.height != cfg.height || r.width != cfg.width)
      throw DataError("training sequence grid does not match the model");
    if (r.frames.size() < 2 || r.frames.size() - 1 > cfg.latent_steps)
      throw DataError("training sequence has " + std::to_string(r.frames.size()) + " frames; model fits at most " +
                      std::to_string(cfg.latent_steps + 1));
  }
  Rng rng(seed);
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= settings.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double epoch_sum = 0.0;
    for (std::size_t idx : order) {
      const auto frames = augment_frames(data[idx].frames, settings.augment, rng);
      StepPlan plan;
      plan.loss_pairs = subsequence_select(frames.size(), cfg.max_frames, rng);
      for (auto k : plan.loss_pairs)
        if (!rng.bernoulli(cfg.td_rate)) plan.encoded_pairs.push_back(k);

      Tape tape;
      tape.set_check_finite(settings.check_finite);
      model.zero_grad();
      const StepResult r = model.elbo(tape, frames, plan, rng);
      const double loss = r.loss.value()[0];
      if (!std::isfinite(loss)) throw NumericError("loss became non-finite at step " + std::to_string(step + 1));
      tape.backward(r.loss);
      adam_step(model.parameters(), settings.adam);
      if (!model.parameters_finite()) throw NumericError("parameters diverged at step " + std::to_string(step + 1));

      TrainLogRow row{epoch, ++step, loss, r.recon.value()[0], r.kl.value()[0]};
      epoch_sum += loss;
      result.log.push_back(row);
      if (on_step) on_step(row);
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(data.size()));
  }
  return result;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "epoch,step,loss,recon,kl\n" << std::setprecision(17);
  for (const auto& r : log) os << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.recon << ',' << r.kl << '\n';
  if (!os) throw DataError("failed writing " + path.string());
}

}  // namespace gpmotion
