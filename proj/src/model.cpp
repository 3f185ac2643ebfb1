#include "gpmotion/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gpmotion/errors.hpp"
#include "gpmotion/ops.hpp"

namespace gpmotion {

namespace {

constexpr std::size_t kConv = 3;

Tensor replicate(const Tensor& image, std::size_t n) {
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({n, 1, h, w});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(image.data(), h * w, out.data() + i * h * w);
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (latent_dims < 1) throw ConfigError("model.latent_dims must be >= 1");
  if (latent_steps < 2) throw ConfigError("model.latent_steps must be >= 2");
  if (max_frames < 2 || max_frames > latent_steps) throw ConfigError("model.max_frames must be in [2, latent_steps]");
  if (!(sigma_l > 0.0)) throw ConfigError("model.sigma_l must be positive");
  if (!(td_rate >= 0.0 && td_rate < 1.0)) throw ConfigError("model.td_rate must be in [0, 1)");
  if (!(tcn_dropout >= 0.0 && tcn_dropout < 1.0)) throw ConfigError("model.tcn_dropout must be in [0, 1)");
  if (height < 8 || width < 8 || height % 8 || width % 8) throw ConfigError("image extents must be multiples of 8");
  if (!(spacing > 0.0)) throw ConfigError("spacing must be positive");
  if (!(v_max > 0.0)) throw ConfigError("model.v_max must be positive");
  if (squaring_steps < 1) throw ConfigError("model.squaring_steps must be >= 1");
  if (dilations.empty()) throw ConfigError("model.dilations must not be empty");
  for (auto d : dilations)
    if (d < 1 || d >= latent_steps)
      throw ConfigError("dilation " + std::to_string(d) + " does not fit a latent sequence of " +
                        std::to_string(latent_steps));
  for (auto c : encoder_channels)
    if (!c) throw ConfigError("encoder channels must be positive");
  for (auto c : decoder_channels)
    if (!c) throw ConfigError("decoder channels must be positive");
  if (smoothing.sigma_spatial_mm < 0.0 || smoothing.sigma_temporal < 0.0)
    throw ConfigError("smoothing sigmas must be >= 0");
  kernel.validate();
}

std::vector<std::size_t> assign_slots(std::size_t pairs, std::size_t latent_steps) {
  if (pairs > latent_steps)
    throw ConfigError(std::to_string(pairs) + " frame pairs do not fit " + std::to_string(latent_steps) +
                      " latent steps");
  std::vector<std::size_t> slots(pairs);
  if (pairs == 1) slots[0] = 0;
  std::vector<bool> used(latent_steps, false);
  for (std::size_t k = 0; k < pairs && pairs > 1; ++k) {
    const double pos = static_cast<double>(k) * static_cast<double>(latent_steps - 1) / static_cast<double>(pairs - 1);
    auto s = static_cast<std::size_t>(std::lround(pos));
    while (s < latent_steps && used[s]) ++s;
    if (s == latent_steps) throw ConfigError("no free latent slot for pair " + std::to_string(k));
    used[s] = true;
    slots[k] = s;
  }
  return slots;
}

FeatureMatrix assemble_feature_matrix(const Tensor& features, std::size_t latent_steps) {
  if (features.rank() != 2) throw ShapeError("features must be [P, 2D]");
  const std::size_t pairs = features.dim(0), rows = features.dim(1);
  const auto slots = assign_slots(pairs, latent_steps);
  FeatureMatrix fm{Tensor({rows, latent_steps}), std::vector<bool>(latent_steps, false)};
  for (std::size_t k = 0; k < pairs; ++k) {
    fm.available[slots[k]] = true;
    for (std::size_t r = 0; r < rows; ++r) fm.gamma[r * latent_steps + slots[k]] = features[k * rows + r];
  }
  return fm;
}

std::vector<std::size_t> temporal_dropout(FeatureMatrix& fm, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("temporal dropout rate must be in [0, 1)");
  const std::size_t rows = fm.gamma.dim(0), cols = fm.gamma.dim(1);
  std::vector<std::size_t> dropped;
  for (std::size_t c = 0; c < cols; ++c) {
    if (!fm.available[c] || !rng.bernoulli(rate)) continue;
    dropped.push_back(c);
    for (std::size_t r = 0; r < rows; ++r) fm.gamma[r * cols + c] = 0.0;
  }
  return dropped;
}

std::vector<std::size_t> subsequence_select(std::size_t frames, std::size_t max_frames, Rng& rng) {
  if (max_frames < 2) throw ConfigError("sub-sequence length must be >= 2");
  if (frames < 2) throw DataError("a sequence needs at least two frames");
  const std::size_t pairs = frames - 1;
  std::vector<std::size_t> all(pairs);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (pairs <= max_frames) return all;
  // Partial Fisher-Yates driven by the run's stream.
  for (std::size_t i = 0; i < max_frames; ++i) std::swap(all[i], all[i + rng.index(pairs - i)]);
  all.resize(max_frames);
  std::sort(all.begin(), all.end());
  return all;
}

MotionModel::MotionModel(ModelConfig config, std::uint64_t init_seed)
    : config_((config.validate(), std::move(config))), kernel_(config_.kernel, config_.latent_steps) {
  const auto t = static_cast<Eigen::Index>(config_.latent_steps);
  mean_basis_ = Tensor({config_.latent_steps, config_.latent_steps});
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < t; ++j) mean_basis_[static_cast<std::size_t>(i * t + j)] = kernel_.root()(i, j);
  Rng rng(init_seed);
  const auto& ec = config_.encoder_channels;
  const auto& dc = config_.decoder_channels;
  const std::size_t d2 = 2 * config_.latent_dims;
  const std::size_t h8 = config_.height / 8, w8 = config_.width / 8;
  const auto he = [](std::size_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };
  const auto lin = [](std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); };
  params_.reserve(64);

  std::size_t c_prev = 2;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string n = "enc.conv" + std::to_string(i);
    add_param(n + ".w", {ec[i], c_prev, kConv, kConv}, he(c_prev * kConv * kConv), rng);
    add_param(n + ".b", {ec[i]}, 0.0, rng);
    c_prev = ec[i];
  }
  const std::size_t flat = ec[3] * h8 * w8;
  add_param("enc.fc.w", {d2, flat}, lin(flat), rng);
  add_param("enc.fc.b", {d2}, 0.0, rng);

  add_param("tcn.in.w", {d2, d2, 1}, lin(d2), rng);
  add_param("tcn.in.b", {d2}, 0.0, rng);
  for (std::size_t b = 0; b < config_.dilations.size(); ++b) {
    const std::string n = "tcn.block" + std::to_string(b);
    add_param(n + ".dil.w", {d2, d2, 3}, he(3 * d2), rng);
    add_param(n + ".dil.b", {d2}, 0.0, rng);
    add_param(n + ".mix.w", {d2, d2, 1}, 0.5 * lin(d2), rng);
    add_param(n + ".mix.b", {d2}, 0.0, rng);
  }

  add_param("dec.fc.w", {dc[0] * h8 * w8, config_.latent_dims}, lin(config_.latent_dims), rng);
  add_param("dec.fc.b", {dc[0] * h8 * w8}, 0.0, rng);
  // Each up-sampling stage sees the previous features plus one I_0 channel.
  add_param("dec.up0.w", {dc[0] + 1, dc[0], kConv, kConv}, he((dc[0] + 1) * kConv * kConv / 4), rng);
  add_param("dec.up0.b", {dc[0]}, 0.0, rng);
  add_param("dec.up1.w", {dc[0] + 1, dc[1], kConv, kConv}, he((dc[0] + 1) * kConv * kConv / 4), rng);
  add_param("dec.up1.b", {dc[1]}, 0.0, rng);
  add_param("dec.up2.w", {dc[1] + 1, dc[2], kConv, kConv}, he((dc[1] + 1) * kConv * kConv / 4), rng);
  add_param("dec.up2.b", {dc[2]}, 0.0, rng);
  add_param("dec.conv.w", {dc[3], dc[2] + 1, kConv, kConv}, he((dc[2] + 1) * kConv * kConv), rng);
  add_param("dec.conv.b", {dc[3]}, 0.0, rng);
  // Small output layer: training starts near the identity deformation.
  add_param("dec.out.w", {2, dc[3], kConv, kConv}, 1e-2 * lin(dc[3] * kConv * kConv), rng);
  add_param("dec.out.b", {2}, 0.0, rng);
}

Parameter& MotionModel::add_param(const std::string& name, Shape shape, double stddev, Rng& rng) {
  Tensor init(std::move(shape));
  if (stddev > 0.0)
    for (auto& v : init.values()) v = stddev * rng.normal();
  params_.emplace_back(name, std::move(init));
  return params_.back();
}

Parameter& MotionModel::parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ConfigError("unknown parameter " + name);
}

std::size_t MotionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void MotionModel::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

bool MotionModel::parameters_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const Parameter& p) { return p.value.all_finite(); });
}

Var MotionModel::param(Tape& tape, const std::string& name) { return tape.parameter(parameter(name)); }

Var MotionModel::encode_pairs(Tape& tape, std::span<const Tensor> frames, std::span<const std::size_t> pairs) {
  const std::size_t h = config_.height, w = config_.width, plane = h * w;
  if (frames.empty()) throw DataError("empty sequence");
  for (const Tensor& f : frames)
    if (f.shape() != Shape{h, w})
      throw ShapeError("frame grid " + shape_str(f.shape()) + " does not match the model (" + std::to_string(h) + "x" +
                       std::to_string(w) + ")");
  const std::size_t n = pairs.size();
  Tensor input({n, 2, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    if (pairs[i] + 1 >= frames.size()) throw ShapeError("pair index out of range");
    std::copy_n(frames[0].data(), plane, input.data() + (2 * i) * plane);
    std::copy_n(frames[pairs[i] + 1].data(), plane, input.data() + (2 * i + 1) * plane);
  }
  Var x = tape.constant(std::move(input));
  static constexpr std::size_t strides[4] = {2, 2, 2, 1};
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string p = "enc.conv" + std::to_string(i);
    x = nn::leaky_relu(nn::conv2d(x, param(tape, p + ".w"), param(tape, p + ".b"), strides[i]));
  }
  const std::size_t flat = x.value().size() / n;
  x = nn::reshape(x, {n, flat});
  return nn::fully_connected(x, param(tape, "enc.fc.w"), param(tape, "enc.fc.b"));
}

Var MotionModel::feature_matrix(Tape& tape, std::span<const Tensor> frames, std::span<const std::size_t> pairs) {
  const std::size_t t = config_.latent_steps, d2 = 2 * config_.latent_dims;
  if (frames.size() < 2) throw DataError("a sequence needs at least two frames");
  if (pairs.empty()) return tape.constant(Tensor({d2, t}));
  const auto slots = assign_slots(frames.size() - 1, t);
  std::vector<std::size_t> cols;
  for (auto k : pairs) cols.push_back(slots.at(k));
  return nn::scatter_columns(encode_pairs(tape, frames, pairs), cols, t);
}

Posterior MotionModel::tcn(Tape& tape, Var gamma, Rng* rng, bool training) {
  const std::size_t d = config_.latent_dims, t = config_.latent_steps;
  if (gamma.shape() != Shape{2 * d, t}) throw ShapeError("feature matrix must be [2D, T_lat]");
  const bool drop = training && rng && config_.tcn_dropout > 0.0;
  Var h = nn::conv1d_dilated(gamma, param(tape, "tcn.in.w"), param(tape, "tcn.in.b"), 1);
  Var total;
  for (std::size_t b = 0; b < config_.dilations.size(); ++b) {
    const std::string n = "tcn.block" + std::to_string(b);
    Var y = nn::conv1d_dilated(h, param(tape, n + ".dil.w"), param(tape, n + ".dil.b"), config_.dilations[b]);
    y = nn::leaky_relu(y);
    if (drop) y = nn::spatial_dropout1d(y, config_.tcn_dropout, *rng, true);
    y = nn::conv1d_dilated(y, param(tape, n + ".mix.w"), param(tape, n + ".mix.b"), 1);
    h = nn::add(y, h);
    total = total.valid() ? nn::add(total, h) : h;
  }
  Posterior post;
  // The mean head is whitened: mu_i = K^(1/2) nu_i, so the prior term
  // mu_i^T K^-1 mu_i = |nu_i|^2 stays well conditioned however smooth K is.
  post.mu = nn::fully_connected(nn::slice_rows(total, 0, d), tape.constant(mean_basis_), std::nullopt);
  post.s = nn::exp(nn::mean_columns(nn::slice_rows(total, d, 2 * d)));
  return post;
}

Decoded MotionModel::decode(Tape& tape, Var z, const Tensor& i0, std::span<const std::size_t> slots) {
  const std::size_t h = config_.height, w = config_.width, n = slots.size();
  const auto& dc = config_.decoder_channels;
  if (i0.shape() != Shape{h, w}) throw ShapeError("conditioning image does not match the model grid");
  if (z.shape() != Shape{config_.latent_dims, config_.latent_steps}) throw ShapeError("z must be [D, T_lat]");
  if (n == 0) throw ShapeError("decode: no slots requested");
  const auto cond = [&](std::size_t factor) {
    return tape.constant(replicate(resize_bilinear(i0, h / factor, w / factor), n));
  };
  Var x = nn::fully_connected(nn::gather_columns(z, slots), param(tape, "dec.fc.w"), param(tape, "dec.fc.b"));
  x = nn::reshape(x, {n, dc[0], h / 8, w / 8});
  x = nn::concat_channels(x, cond(8));
  x = nn::leaky_relu(nn::conv_transpose2d(x, param(tape, "dec.up0.w"), param(tape, "dec.up0.b")));
  x = nn::concat_channels(x, cond(4));
  x = nn::leaky_relu(nn::conv_transpose2d(x, param(tape, "dec.up1.w"), param(tape, "dec.up1.b")));
  x = nn::concat_channels(x, cond(2));
  x = nn::leaky_relu(nn::conv_transpose2d(x, param(tape, "dec.up2.w"), param(tape, "dec.up2.b")));
  x = nn::concat_channels(x, tape.constant(replicate(i0, n)));
  x = nn::leaky_relu(nn::conv2d(x, param(tape, "dec.conv.w"), param(tape, "dec.conv.b"), 1));
  x = nn::conv2d(x, param(tape, "dec.out.w"), param(tape, "dec.out.b"), 1);

  Decoded out;
  out.velocity = nn::scale(nn::tanh(x), config_.v_max);
  Var v = deform::smooth_temporal(out.velocity, config_.smoothing);
  v = deform::smooth_spatial(v, config_.smoothing, config_.grid());
  const int steps = config_.adaptive_squaring ? deform::adaptive_squaring_steps(v.value()) : config_.squaring_steps;
  out.fields = deform::exponentiate(v, steps);
  out.warped = deform::warp(tape.constant(i0.reshaped({1, 1, h, w})), out.fields);
  return out;
}

StepResult MotionModel::elbo(Tape& tape, std::span<const Tensor> frames, const StepPlan& plan, Rng& rng) {
  const std::size_t t = config_.latent_steps, d = config_.latent_dims;
  if (frames.size() < 2) throw DataError("a sequence needs at least two frames");
  if (plan.loss_pairs.empty()) throw DataError("no reconstructable frame in the step");
  const std::size_t pairs = frames.size() - 1;
  const auto slots = assign_slots(pairs, t);

  StepResult r;
  r.posterior = tcn(tape, feature_matrix(tape, frames, plan.encoded_pairs), &rng, plan.training);
  if (plan.sample) {
    Tensor eps({d, t});
    for (auto& e : eps.values()) e = rng.normal();
    r.z = gp::sample_posterior(r.posterior.mu, r.posterior.s, kernel_, eps);
  } else {
    r.z = r.posterior.mu;
  }

  // Whole latent grid when every pair is active, otherwise just the chosen slots.
  std::vector<std::size_t> decode_slots, rows;
  if (plan.loss_pairs.size() == pairs) {
    decode_slots.resize(t);
    std::iota(decode_slots.begin(), decode_slots.end(), std::size_t{0});
    for (auto k : plan.loss_pairs) rows.push_back(slots.at(k));
  } else {
    for (std::size_t i = 0; i < plan.loss_pairs.size(); ++i) {
      decode_slots.push_back(slots.at(plan.loss_pairs[i]));
      rows.push_back(i);
    }
  }
  r.decoded = decode(tape, r.z, frames[0], decode_slots);

  const std::size_t h = config_.height, w = config_.width;
  Tensor target({rows.size(), 1, h, w});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(frames[plan.loss_pairs[i] + 1].data(), h * w, target.data() + i * h * w);
  Var pred = nn::select_leading(r.decoded.warped, rows);
  r.recon = nn::scale(nn::half_squared_error(pred, target), 1.0 / config_.sigma_l);
  r.kl = gp::kl_gp(r.posterior.mu, r.posterior.s, kernel_);
  r.loss = nn::add(r.recon, r.kl);
  return r;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 2) throw ShapeError("resize_bilinear: expected [H, W]");
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({height, width});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double py = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = std::min(static_cast<std::size_t>(py), h > 1 ? h - 2 : 0);
    const double fy = h > 1 ? py - static_cast<double>(y0) : 0.0;
    const std::size_t y1 = h > 1 ? y0 + 1 : 0;
    for (std::size_t x = 0; x < width; ++x) {
      const double px = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = std::min(static_cast<std::size_t>(px), w > 1 ? w - 2 : 0);
      const double fx = w > 1 ? px - static_cast<double>(x0) : 0.0;
      const std::size_t x1 = w > 1 ? x0 + 1 : 0;
      out[y * width + x] = (1 - fy) * ((1 - fx) * image[y0 * w + x0] + fx * image[y0 * w + x1]) +
                           fy * ((1 - fx) * image[y1 * w + x0] + fx * image[y1 * w + x1]);
    }
  }
  return out;
}

}  // namespace gpmotion
