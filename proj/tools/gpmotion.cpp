// gpmotion: data generation, training and inference on synthetic sequences.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "gpmotion/baselines.hpp"
#include "gpmotion/checkpoint.hpp"
#include "gpmotion/config.hpp"
#include "gpmotion/deformation.hpp"
#include "gpmotion/errors.hpp"
#include "gpmotion/image_io.hpp"
#include "gpmotion/inference.hpp"
#include "gpmotion/kernels.hpp"
#include "gpmotion/metrics.hpp"
#include "gpmotion/synthdata.hpp"
#include "gpmotion/train.hpp"

namespace fs = std::filesystem;
using namespace gpmotion;

namespace {

struct Common {
  std::string config;
  int threads = 0;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void apply_threads(int threads) {
  if (threads <= 0) {
    if (const char* env = std::getenv("GPMOTION_THREADS")) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ConfigError("GPMOTION_THREADS must be an integer");
      }
    }
  }
  if (threads < 0) throw ConfigError("--threads must be >= 0");
  kernels::set_num_threads(threads);
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

const SequenceRecord& pick(const std::vector<SequenceRecord>& data, std::size_t index) {
  if (index >= data.size())
    throw ConfigError("sequence index " + std::to_string(index) + " out of range (" + std::to_string(data.size()) + ")");
  return data[index];
}

void check_compatible(const MotionModel& model, const SequenceRecord& rec) {
  const auto& m = model.config();
  if (rec.height != m.height || rec.width != m.width)
    throw ConfigError("checkpoint grid " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                      " does not match the data grid " + std::to_string(rec.height) + "x" + std::to_string(rec.width));
  if (rec.frames.size() - 1 > m.latent_steps)
    throw ConfigError("sequence has more frame pairs than the checkpoint's latent steps");
}

nlohmann::json z_json(const gp::MotionMatrix& z) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < z.z.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(z.z.cols()));
    for (Eigen::Index c = 0; c < z.z.cols(); ++c) row[static_cast<std::size_t>(c)] = z.z(r, c);
    rows.push_back(row);
  }
  return {{"z", rows}};
}

gp::MotionMatrix z_from_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
    const auto rows = doc.at("z").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw DataError("empty motion matrix in " + path.string());
    gp::MotionMatrix z;
    z.z.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows[0].size()) throw DataError("ragged motion matrix in " + path.string());
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        z.z(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return z;
  } catch (const nlohmann::json::exception&) {
    throw DataError("malformed motion matrix file " + path.string());
  }
}

// Fields, warped frames, Jacobian maps and z of one inference.
void dump(const fs::path& dir, const Inference& inf) {
  make_dir(dir);
  const auto fields = inf.all_fields();
  deform::write_fields_raw(dir / "fields.raw", fields);
  if (!inf.slots.empty()) deform::write_fields_raw(dir / "pair_fields.raw", inf.pair_fields());
  const std::size_t h = inf.warped.dim(1), w = inf.warped.dim(2);
  for (std::size_t t = 0; t < fields.size(); ++t) {
    std::ostringstream stem;
    stem << std::setw(2) << std::setfill('0') << t;
    std::vector<double> px(inf.warped.data() + t * h * w, inf.warped.data() + (t + 1) * h * w);
    write_pgm(dir / ("warped_" + stem.str() + ".pgm"), Tensor({h, w}, std::move(px)), {0.0, 1.0});
    write_pgm_autoscale(dir / ("jacdet_" + stem.str() + ".pgm"), deform::jacobian_determinant(fields[t]));
  }
  save_json(dir / "z.json", z_json(inf.z));
}

void write_curves(const fs::path& path, const std::vector<std::pair<std::string, std::vector<double>>>& curves) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "frame";
  for (const auto& [name, _] : curves) os << ',' << name;
  os << '\n' << std::setprecision(17);
  for (std::size_t f = 0; f < curves.front().second.size(); ++f) {
    os << f;
    for (const auto& [_, c] : curves) os << ',' << c[f];
    os << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-prior motion model on synthetic image sequences"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "run configuration (JSON)");
  app.add_option("--threads", common.threads, "OpenMP threads (0: GPMOTION_THREADS or default)");
  app.add_option("--seed", common.seed, "override the config seed");

  std::string out, data_path, checkpoint;
  std::size_t index = 0, source = 0, target = 0;
  std::optional<std::size_t> count, epochs;
  std::optional<double> td_rate;
  bool no_gp = false;
  std::string provide = "all", z_path, rotations;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--out", out, "dataset file")->required();
  gen->add_option("--count", count, "number of sequences");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", data_path, "dataset file")->required();
  tr->add_option("--out", out, "output directory")->required();
  tr->add_option("--epochs", epochs);
  tr->add_option("--td-rate", td_rate, "temporal dropout rate");
  tr->add_flag("--no-gp", no_gp, "identity temporal kernel");

  const auto add_infer = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint)->required();
    sub->add_option("--data", data_path, "dataset file")->required();
    sub->add_option("--out", out, "output directory")->required();
  };
  auto* reg = app.add_subcommand("register", "register one sequence");
  add_infer(reg);
  reg->add_option("--index", index);
  auto* itp = app.add_subcommand("interpolate", "decode all slots from a subset of frames");
  add_infer(itp);
  itp->add_option("--index", index);
  itp->add_option("--provide", provide, "all|every2|every5|first5|'frames 0,10'");
  auto* sim = app.add_subcommand("simulate", "decode from the reference frame alone");
  add_infer(sim);
  sim->add_option("--index", index);
  auto* trn = app.add_subcommand("transport", "apply one sequence's motion to another reference");
  add_infer(trn);
  trn->add_option("--source", source, "sequence providing z");
  trn->add_option("--z", z_path, "z.json from a previous run (instead of --source)");
  trn->add_option("--target", target, "sequence providing I_0");
  auto* ev = app.add_subcommand("eval", "evaluate on a dataset");
  add_infer(ev);
  ev->add_option("--rotations", rotations, "comma-separated degrees, e.g. 0,90,180,270");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    apply_threads(common.threads);
    RunConfig cfg = resolve(common);

    if (gen->parsed()) {
      if (count) cfg.data.count = *count;
      const auto records = generate_dataset(cfg.data, cfg.seed);
      write_dataset(out, records);
      nlohmann::json manifest = to_json(cfg)["data"];
      save_json(out + ".manifest.json", {{"count", records.size()}, {"seed", cfg.seed}, {"spec", manifest}});
      std::cout << "wrote " << records.size() << " sequences to " << out << '\n';
      return 0;
    }

    if (tr->parsed()) {
      if (epochs) cfg.train.epochs = *epochs;
      if (td_rate) cfg.model.td_rate = *td_rate;
      if (no_gp) cfg.model.kernel.kind = gp::KernelKind::identity;
      cfg.validate();
      const auto records = read_dataset(data_path);
      make_dir(out);
      save_json(fs::path(out) / "config.json", to_json(cfg));
      MotionModel model(cfg.model, cfg.seed);
      std::cout << "parameters: " << model.parameter_count() << '\n';
      const auto result = train(model, records, cfg.train, cfg.seed, [](const TrainLogRow& r) {
        if (r.step % 200 == 0)
          std::cout << "epoch " << r.epoch << " step " << r.step << " loss " << r.loss << " recon " << r.recon
                    << " kl " << r.kl << std::endl;
      });
      write_train_log(fs::path(out) / "train_log.csv", result.log);
      save_checkpoint(fs::path(out) / "model.gpmm", model);
      std::cout << "checkpoint written to " << (fs::path(out) / "model.gpmm").string() << '\n';
      return 0;
    }

    MotionModel model = load_checkpoint(checkpoint);
    const auto records = read_dataset(data_path);
    make_dir(out);
    save_json(fs::path(out) / "config.json", to_json(cfg));

    if (reg->parsed()) {
      const auto& rec = pick(records, index);
      check_compatible(model, rec);
      const Inference inf = register_sequence(model, rec.frames);
      dump(out, inf);
      metrics::EvalReport rep;
      if (rec.masks.size() == rec.frames.size()) {
        rep.rows.push_back(metrics::evaluate_sequence(rec, inf.pair_fields(), "seq" + std::to_string(index)));
        rep.write_csv(fs::path(out) / "metrics.csv");
      }
      return 0;
    }

    if (itp->parsed()) {
      const auto& rec = pick(records, index);
      check_compatible(model, rec);
      const std::size_t f = rec.frames.size();
      const auto frames = parse_provide(provide, f);
      const auto pairs = frames_to_pairs(frames, f);
      const Inference inf = interpolate(model, rec.frames, pairs);
      dump(out, inf);
      // Baselines: interpolate the model's fields at the provided frames over time.
      const auto pf = inf.pair_fields();
      std::vector<double> knots{0.0}, queries;
      std::vector<Tensor> knot_fields{Tensor(pf[0].shape())};
      for (auto k : pairs) {
        knots.push_back(static_cast<double>(k + 1));
        knot_fields.push_back(pf[k]);
      }
      for (std::size_t q = 1; q < f; ++q) queries.push_back(static_cast<double>(q));
      const auto linear = baselines::interpolate_fields(knots, knot_fields, queries, baselines::Kind::linear);
      const auto cubic = baselines::interpolate_fields(knots, knot_fields, queries, baselines::Kind::cubic);
      deform::write_fields_raw(fs::path(out) / "linear_fields.raw", linear);
      deform::write_fields_raw(fs::path(out) / "cubic_fields.raw", cubic);
      if (rec.masks.size() == f) {
        const auto full = register_sequence(model, rec.frames).pair_fields();
        metrics::EvalReport rep;
        rep.rows.push_back(metrics::evaluate_sequence(rec, pf, "model"));
        rep.rows.push_back(metrics::evaluate_sequence(rec, linear, "linear"));
        rep.rows.push_back(metrics::evaluate_sequence(rec, cubic, "cubic"));
        rep.write_csv(fs::path(out) / "metrics.csv");
        write_curves(fs::path(out) / "volume_curves.csv",
                     {{"truth", ground_truth_volume_curve(rec)},
                      {"all_frames", metrics::volume_curve(rec.masks[0], full, rec.spacing)},
                      {"model", metrics::volume_curve(rec.masks[0], pf, rec.spacing)},
                      {"linear", metrics::volume_curve(rec.masks[0], linear, rec.spacing)},
                      {"cubic", metrics::volume_curve(rec.masks[0], cubic, rec.spacing)}});
      }
      return 0;
    }

    if (sim->parsed()) {
      const auto& rec = pick(records, index);
      check_compatible(model, rec);
      const Inference inf = simulate(model, rec.frames[0]);
      dump(out, inf);
      if (!rec.masks.empty())
        write_curves(fs::path(out) / "volume_curve.csv",
                     {{"simulated", metrics::volume_curve(rec.masks[0], inf.all_fields(), rec.spacing)}});
      return 0;
    }

    if (trn->parsed()) {
      const auto& tgt = pick(records, target);
      check_compatible(model, tgt);
      gp::MotionMatrix z;
      if (!z_path.empty()) {
        z = z_from_json(z_path);
      } else {
        const auto& src = pick(records, source);
        check_compatible(model, src);
        z = register_sequence(model, src.frames).z;
      }
      const Inference inf = transport(model, z, tgt.frames[0]);
      dump(out, inf);
      if (!tgt.masks.empty())
        write_curves(fs::path(out) / "volume_curve.csv",
                     {{"transported", metrics::volume_curve(tgt.masks[0], inf.all_fields(), tgt.spacing)}});
      return 0;
    }

    if (ev->parsed()) {
      for (const auto& rec : records) {
        check_compatible(model, rec);
        if (rec.masks.size() != rec.frames.size()) throw DataError("eval needs masks on every frame");
      }
      std::vector<int> degrees = cfg.eval.rotations;
      if (!rotations.empty()) {
        degrees.clear();
        std::stringstream ss(rotations);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            degrees.push_back(std::stoi(item));
          } catch (const std::exception&) {
            throw ConfigError("malformed --rotations list '" + rotations + "'");
          }
          if (degrees.back() % 90 != 0) throw ConfigError("rotations must be multiples of 90 degrees");
        }
      }
      if (degrees.size() <= 1) {
        const int turns = degrees.empty() ? 0 : degrees[0] / 90;
        const auto rep = evaluate_dataset(model, records, turns);
        rep.write_csv(fs::path(out) / "eval.csv");
        save_json(fs::path(out) / "eval_summary.json", rep.summary());
        return 0;
      }
      nlohmann::json summary = {{"rotations", nlohmann::json::array()}};
      std::vector<std::vector<double>> means;
      for (int deg : degrees) {
        const auto rep = evaluate_dataset(model, records, deg / 90);
        rep.write_csv(fs::path(out) / ("eval_rot" + std::to_string(deg) + ".csv"));
        const auto agg = metrics::aggregate(rep.rows);
        summary["rotations"].push_back({{"degrees", deg}, {"model", agg}, {"undeformed", metrics::aggregate(rep.undeformed)}});
        std::vector<double> m;
        for (const auto& c : metrics::eval_columns()) m.push_back(agg[c]["mean"].get<double>());
        means.push_back(m);
      }
      nlohmann::json across = nlohmann::json::object();
      const auto& cols = metrics::eval_columns();
      for (std::size_t c = 0; c < cols.size(); ++c) {
        double mu = 0.0, sq = 0.0;
        for (const auto& m : means) mu += m[c];
        mu /= static_cast<double>(means.size());
        for (const auto& m : means) sq += (m[c] - mu) * (m[c] - mu);
        across[cols[c]] = {{"mean", mu}, {"std", std::sqrt(sq / static_cast<double>(means.size()))}};
      }
      summary["summary"] = across;
      save_json(fs::path(out) / "eval_summary.json", summary);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
