#pragma once

// Command-line front end. Kept in a header so the test suite can drive
// run() in-process.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dgmm/dgmm.hpp"

namespace dgmm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2 };

/// Bad flag values that CLI11 itself cannot see.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<double> parse_list(const std::string& text, const std::string& flag, std::size_t expected = 0) {
  std::vector<double> out;
  for (auto f : dgmm::detail::split_fields(text, false)) {
    auto v = dgmm::detail::parse_double(f);
    if (!v) throw UsageError(flag + ": '" + std::string(f) + "' is not a number");
    out.push_back(*v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  if (expected && out.size() != expected)
    throw UsageError(flag + ": expected " + std::to_string(expected) + " values, got " + std::to_string(out.size()));
  return out;
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// What produced an output: the full argument list and the seed in effect.
struct Invocation {
  std::string subcommand;
  std::vector<std::string> args;
  std::uint64_t seed = 0;

  nlohmann::json json() const { return {{"tool", "dgmm"}, {"subcommand", subcommand}, {"args", args}, {"seed", seed}}; }

  std::string comment() const {
    std::string s = "dgmm";
    for (const auto& a : args) s += " " + a;
    return s + " (seed " + std::to_string(seed) + ")";
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

// Reports go to <stem>.json and <stem>.tsv, or as JSON to `out` without a stem.
inline void emit_report(EvalReport report, const Invocation& inv, const std::string& stem, std::ostream& out) {
  report.config["invocation"] = inv.json();
  const std::string json = report.to_json().dump(2) + "\n";
  if (stem.empty()) {
    out << json;
    return;
  }
  write_text(stem + ".json", json);
  std::ostringstream tsv;
  report.write_tsv(tsv, inv.comment());
  write_text(stem + ".tsv", tsv.str());
}

inline std::string sidecar(const std::string& path) { return path + ".meta.json"; }

}  // namespace detail

/// Runs one invocation; `args` excludes the program name. Diagnostics go to
/// `err`, data to files or `out`.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic Gaussian mixture motion models", "dgmm"};
  app.require_subcommand(1);

  std::string input, output, model_path, command, z_text, x_text, k_grid_text = "0.001,0.003,0.01,0.03,0.1,0.3,1,3";
  double k = 0.7, horizon = kDefaultPriorHorizon, slope_deg = 18.0, drift_gain = 1.0, noise_scale = 1.0;
  std::uint64_t seed = 1;
  int folds = 10, repeats = 10, needed = 100, max_attempts = 0, components = 2, reps = 5;
  std::size_t n_points = 500;
  bool no_z = false, standardize = false, no_standardize = false, score_training = false;

  auto add_seed = [&](CLI::App* s) { s->add_option("--seed", seed, "master random seed")->capture_default_str(); };
  auto add_k = [&](CLI::App* s) { s->add_option("--k", k, "merge likelihood constant")->capture_default_str(); };

  auto* fit = app.add_subcommand("fit", "train a motion model from a sample CSV");
  fit->add_option("--input", input, "sample CSV")->required();
  fit->add_option("--out", output, "model JSON to write")->required();
  add_k(fit);
  add_seed(fit);
  fit->add_flag("--no-z", no_z, "ignore terrain columns and train p(x | c)");
  fit->add_flag("--standardize", standardize, "train on per-dimension standardized samples");
  fit->add_option("--prior-horizon", horizon, "sample count over which the creation covariance fades out")
      ->capture_default_str();

  auto* query = app.add_subcommand("query", "evaluate a trained model's density");
  query->add_option("--model", model_path, "model JSON")->required();
  query->add_option("--command", command, "command triple, e.g. 0.5,0,0")->required();
  query->add_option("--x", x_text, "pose change dx,dy,dz,droll,dpitch,dyaw")->required();
  query->add_option("--z", z_text, "terrain vector pitch,roll (augmented models)");

  auto* sweep = app.add_subcommand("sweep-k", "component count as a function of k");
  sweep->add_option("--input", input, "point table")->required();
  sweep->add_option("--out", output, "report stem (writes .json and .tsv)");
  sweep->add_option("--k-grid", k_grid_text, "ascending comma list of k values")->capture_default_str();
  sweep->add_option("--repeats", repeats, "shuffled repeats per k")->capture_default_str();
  add_seed(sweep);

  auto* compare = app.add_subcommand("compare-em", "MISE of online fits against an EM reference");
  compare->add_option("--input", input, "point table (e.g. Old Faithful)")->required();
  compare->add_option("--out", output, "report stem (writes .json and .tsv)");
  add_k(compare);
  compare->add_option("--needed", needed, "accepted runs to collect")->capture_default_str();
  compare->add_option("--max-attempts", max_attempts, "attempt budget (default 20 x needed)");
  compare->add_option("--components", components, "EM components / accepted run size")->capture_default_str();
  compare->add_flag("--standardize", standardize, "standardize columns (default)");
  compare->add_flag("--no-standardize", no_standardize, "use raw columns");
  add_seed(compare);

  auto* xval = app.add_subcommand("xval-terrain", "cross-validated log-likelihood with and without terrain");
  xval->add_option("--input", input, "sample CSV with terrain columns")->required();
  xval->add_option("--out", output, "report stem (writes .json and .tsv)");
  add_k(xval);
  xval->add_option("--folds", folds, "folds per repeat")->capture_default_str();
  xval->add_option("--repeats", repeats, "repeats of the fold split")->capture_default_str();
  xval->add_flag("--standardize", standardize, "standardize on each training fold (default)");
  xval->add_flag("--no-standardize", no_standardize, "train in raw units");
  xval->add_flag("--score-training", score_training, "score training folds instead of held-out folds");
  add_seed(xval);

  auto* gen_incline = app.add_subcommand("gen-incline", "simulate the incline dataset");
  gen_incline->add_option("--out", output, "sample CSV to write")->required();
  gen_incline->add_option("--slope-deg", slope_deg, "incline angle in degrees")->capture_default_str();
  gen_incline->add_option("--reps", reps, "repetitions per command and orientation")->capture_default_str();
  gen_incline->add_option("--drift-gain", drift_gain, "downhill slip multiplier")->capture_default_str();
  gen_incline->add_option("--noise-scale", noise_scale, "motion noise multiplier")->capture_default_str();
  gen_incline->add_flag("--no-z", no_z, "omit terrain columns");
  add_seed(gen_incline);

  auto* gen_gmm = app.add_subcommand("gen-gmm", "draw points from the three-cluster 2-D mixture");
  gen_gmm->add_option("--out", output, "point CSV to write")->required();
  gen_gmm->add_option("--n", n_points, "number of points")->capture_default_str();
  add_seed(gen_gmm);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  detail::Invocation inv{app.get_subcommands().front()->get_name(), args, seed};
  try {
    if (*fit) {
      const auto records = load_samples(input);
      const bool augmented = !no_z && !records.empty() && records.front().z.has_value();
      const Layout layout{DeltaPose::kDim, augmented ? TerrainVector::kDim : 0};
      std::optional<Standardizer> s;
      if (standardize) {
        std::vector<Vector> rows;
        for (const auto& r : records) {
          Vector d(layout.dim());
          d.head(DeltaPose::kDim) = r.x.to_vector();
          if (augmented) d.tail(TerrainVector::kDim) = r.z->to_vector();
          rows.push_back(std::move(d));
        }
        if (rows.empty()) throw DataError(input + ": no records");
        s = Standardizer::fit(rows);
      }
      if (!(horizon >= 0.0)) throw UsageError("--prior-horizon must be non-negative");
      if (!(k >= 0.0)) throw UsageError("--k must be non-negative");
      MotionModel mm(layout, k, s, 1.0, horizon);
      RngStream rng(seed);
      for (const auto& r : records) {
        std::optional<Vector> z;
        if (augmented) z = r.z->to_vector();
        mm.record_sample(r.command, r.x.to_vector(), z, rng);
      }
      save_model(mm, output, inv.json());
      err << "trained " << mm.models().size() << " command densities from " << records.size() << " records\n";
    } else if (*query) {
      const MotionModel mm = load_model(model_path);
      const auto c = detail::parse_list(command, "--command", 3);
      const CommandKey key{c[0], c[1], c[2]};
      const Vector x = detail::to_vector(detail::parse_list(x_text, "--x", DeltaPose::kDim));
      double p = 0.0;
      if (mm.layout().augmented()) {
        if (z_text.empty()) throw UsageError("model has a terrain block; --z is required");
        const Vector z = detail::to_vector(detail::parse_list(z_text, "--z", static_cast<std::size_t>(mm.layout().z_dim)));
        p = mm.conditional_motion_density(key, z).density(x);
      } else {
        if (!z_text.empty()) throw UsageError("model has no terrain block; drop --z");
        p = mm.motion_density(key, x);
      }
      out << dgmm::detail::fmt_double(p) << '\n';
    } else if (*sweep) {
      const auto grid = detail::parse_list(k_grid_text, "--k-grid");
      if (!std::is_sorted(grid.begin(), grid.end())) throw UsageError("--k-grid must be ascending");
      if (repeats < 1) throw UsageError("--repeats must be positive");
      detail::emit_report(k_sweep(load_points(input), grid, repeats, seed), inv, output, out);
    } else if (*compare) {
      if (standardize && no_standardize) throw UsageError("--standardize and --no-standardize conflict");
      if (needed < 1) throw UsageError("--needed must be positive");
      if (components < 1) throw UsageError("--components must be positive");
      const int budget = max_attempts > 0 ? max_attempts : 20 * needed;
      if (budget < needed) throw UsageError("--max-attempts must be at least --needed");
      auto points = load_points(input);
      if (!no_standardize) {
        const Standardizer s = Standardizer::fit(points);
        for (auto& p : points) p = s.apply(p);
      }
      EvalReport report = mise_experiment(points, k, components, needed, budget, seed);
      report.config["standardize"] = !no_standardize;
      if (!report.complete)
        err << "warning: only " << report.runs.size() << " of " << needed << " runs reached " << components
            << " components\n";
      detail::emit_report(std::move(report), inv, output, out);
    } else if (*xval) {
      if (standardize && no_standardize) throw UsageError("--standardize and --no-standardize conflict");
      if (folds < 2) throw UsageError("--folds must be at least 2");
      if (repeats < 1) throw UsageError("--repeats must be positive");
      const auto records = load_samples(input, true);
      TerrainOptions opts;
      opts.standardize = !no_standardize;
      opts.score_training = score_training;
      EvalReport report = terrain_comparison(records, folds, repeats, k, seed, opts);
      for (const auto& w : report.diagnostics["warnings"]) err << "warning: " << w.get<std::string>() << '\n';
      detail::emit_report(std::move(report), inv, output, out);
    } else if (*gen_incline) {
      InclineConfig cfg;
      cfg.slope_deg = slope_deg;
      cfg.reps_per_orientation = reps;
      cfg.drift_gain = drift_gain;
      cfg.noise_scale = noise_scale;
      cfg.seed = seed;
      try {
        cfg.validate();
      } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
      }
      InclineDataset ds = simulate_incline(cfg);
      std::ostringstream csv;
      write_samples(csv, no_z ? strip_terrain(ds.records) : ds.records, inv.comment());
      detail::write_text(output, csv.str());
      ds.metadata["invocation"] = inv.json();
      ds.metadata["terrain_columns"] = !no_z;
      detail::write_text(detail::sidecar(output), ds.metadata.dump(2) + "\n");
    } else if (*gen_gmm) {
      const Gmm gmm = three_cluster_gmm();
      RngStream rng(seed);
      std::ostringstream csv;
      write_points(csv, sample_gmm(gmm, n_points, rng), inv.comment());
      detail::write_text(output, csv.str());
      nlohmann::json comps = nlohmann::json::array();
      for (const auto& c : gmm.components) {
        const Matrix& cov = c.g.cov();
        comps.push_back({{"weight", c.w},
                         {"mean", std::vector<double>(c.g.mean().data(), c.g.mean().data() + c.g.mean().size())},
                         {"cov", std::vector<double>(cov.data(), cov.data() + cov.size())}});
      }
      const nlohmann::json meta = {{"generator", "three_cluster_gmm"},
                                   {"points", n_points},
                                   {"components", comps},
                                   {"invocation", inv.json()}};
      detail::write_text(detail::sidecar(output), meta.dump(2) + "\n");
    }
  } catch (const UsageError& e) {
    err << "dgmm " << inv.subcommand << ": " << e.what() << "\n\n" << app.get_subcommand(inv.subcommand)->help();
    return kUsage;
  } catch (const Error& e) {
    err << "dgmm " << inv.subcommand << ": " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "dgmm " << inv.subcommand << ": " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}

}  // namespace dgmm::cli
