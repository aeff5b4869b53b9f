#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dgmm/datasets.hpp"
#include "dgmm/em.hpp"
#include "dgmm/mixture.hpp"
#include "dgmm/motion_model.hpp"
#include "dgmm/rng.hpp"

namespace dgmm {

/// One run of an experiment: a group label (e.g. the k value of a sweep
/// cell), the run's seed and its named metrics in insertion order.
struct RunRecord {
  std::string group;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> metrics;

  double metric(const std::string& name) const {
    for (const auto& [n, v] : metrics)
      if (n == name) return v;
    throw InvalidArgument("RunRecord: no metric '" + name + "'");
  }
};

/// Mean and sample standard deviation of one metric within one group.
struct Aggregate {
  std::string group;
  std::string metric;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::string name;
  nlohmann::json config = nlohmann::json::object();
  std::vector<RunRecord> runs;
  std::vector<Aggregate> aggregates;
  bool complete = true;
  nlohmann::json diagnostics = nlohmann::json::object();

  /// Recomputes `aggregates` from `runs`. Groups and metrics keep their
  /// first-appearance order.
  void summarize() {
    aggregates.clear();
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<double>> values;
    for (const auto& r : runs)
      for (const auto& [m, v] : r.metrics) {
        auto key = std::make_pair(r.group, m);
        if (!values.count(key)) keys.push_back(key);
        values[key].push_back(v);
      }
    for (const auto& key : keys) {
      const auto& v = values[key];
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      aggregates.push_back({key.first, key.second, mean, sd, v.size()});
    }
  }

  const Aggregate& aggregate(const std::string& metric, const std::string& group = {}) const {
    for (const auto& a : aggregates)
      if (a.metric == metric && a.group == group) return a;
    throw InvalidArgument("EvalReport: no aggregate for '" + metric + "' in group '" + group + "'");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["config"] = config;
    j["complete"] = complete;
    j["diagnostics"] = diagnostics;
    nlohmann::json aggs = nlohmann::json::array();
    for (const auto& a : aggregates)
      aggs.push_back({{"group", a.group}, {"metric", a.metric}, {"mean", a.mean}, {"stddev", a.stddev}, {"count", a.count}});
    j["aggregates"] = aggs;
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : runs) {
      nlohmann::json m = nlohmann::json::object();
      for (const auto& [n, v] : r.metrics) m[n] = v;
      rs.push_back({{"group", r.group}, {"seed", r.seed}, {"metrics", m}});
    }
    j["runs"] = rs;
    return j;
  }

  /// Tab-separated runs table: group, seed, then every metric column.
  void write_tsv(std::ostream& out, const std::string& comment = {}) const {
    std::vector<std::string> columns;
    for (const auto& r : runs)
      for (const auto& [n, v] : r.metrics)
        if (std::find(columns.begin(), columns.end(), n) == columns.end()) columns.push_back(n);
    if (!comment.empty()) out << "# " << comment << '\n';
    out << "group\tseed";
    for (const auto& c : columns) out << '\t' << c;
    out << '\n';
    for (const auto& r : runs) {
      out << r.group << '\t' << r.seed;
      for (const auto& c : columns) {
        out << '\t';
        for (const auto& [n, v] : r.metrics)
          if (n == c) out << detail::fmt_double(v);
      }
      out << '\n';
    }
  }
};

/// Partition of record indices into folds.
struct FoldSplit {
  std::vector<std::vector<std::size_t>> folds;
  std::vector<std::string> warnings;

  /// All indices outside fold `f`, in ascending order.
  std::vector<std::size_t> training(std::size_t f) const {
    std::vector<std::size_t> out;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) out.insert(out.end(), folds[g].begin(), folds[g].end());
    std::sort(out.begin(), out.end());
    return out;
  }
};

/// Stratified k-fold split by command. Each stratum is shuffled and dealt
/// round-robin, continuing the deal position across strata so fold sizes
/// differ by at most one.
inline FoldSplit stratified_kfold(const std::vector<SampleRecord>& records, int folds, RngStream& rng) {
  if (folds < 2) throw InvalidArgument("stratified_kfold: need at least 2 folds");
  std::map<CommandKey, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < records.size(); ++i) strata[records[i].command].push_back(i);

  FoldSplit split;
  split.folds.resize(static_cast<std::size_t>(folds));
  std::size_t deal = 0;
  for (auto& [key, idx] : strata) {
    if (idx.size() < static_cast<std::size_t>(folds))
      split.warnings.push_back("command " + key.to_string() + " has " + std::to_string(idx.size()) +
                               " records for " + std::to_string(folds) + " folds");
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    for (std::size_t i : idx) split.folds[deal++ % split.folds.size()].push_back(i);
  }
  for (auto& f : split.folds) std::sort(f.begin(), f.end());
  return split;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidArgument("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

/// Streams `points` (in the order given) through a fresh DGMM.
inline Dgmm stream_dgmm(const std::vector<Vector>& points, double k, RngStream& rng, double init_cov_scale = 1.0) {
  Dgmm m(0, init_cov_scale);
  for (const auto& p : points) m.add_sample(p, k, rng);
  return m;
}

/// Final component count as a function of k. Each (k, repeat) cell
/// shuffles the points with its own derived seed and streams them through a
/// fresh DGMM. Groups are the k values.
inline EvalReport k_sweep(const std::vector<Vector>& points, const std::vector<double>& k_grid, int repeats,
                          std::uint64_t master_seed) {
  if (k_grid.empty()) throw InvalidArgument("k_sweep: empty k grid");
  if (!std::is_sorted(k_grid.begin(), k_grid.end())) throw InvalidArgument("k_sweep: k grid must be ascending");
  if (repeats < 1) throw InvalidArgument("k_sweep: repeats must be positive");
  if (points.empty()) throw InvalidArgument("k_sweep: no points");
  EvalReport report;
  report.name = "k_sweep";
  report.config = {{"k_grid", k_grid}, {"repeats", repeats}, {"seed", master_seed}, {"points", points.size()}};
  std::uint64_t cell = 0;
  for (double k : k_grid) {
    for (int r = 0; r < repeats; ++r, ++cell) {
      const std::uint64_t seed = derive_seed(master_seed, cell);
      RngStream rng(seed);
      std::vector<Vector> order = points;
      std::shuffle(order.begin(), order.end(), rng.engine());
      const Dgmm m = stream_dgmm(order, k, rng);
      report.runs.push_back({detail::fmt_double(k), seed, {{"k", k}, {"components", static_cast<double>(m.size())}}});
    }
  }
  report.summarize();
  return report;
}

/// Per-k mean component counts of a k_sweep report, in grid order.
inline std::vector<double> mean_counts(const EvalReport& sweep, const std::vector<double>& k_grid) {
  std::vector<double> out;
  for (double k : k_grid) out.push_back(sweep.aggregate("components", detail::fmt_double(k)).mean);
  return out;
}

/// MISE between two mixtures over the 150x150 grid spanning both mixtures'
/// component means +/- 8 standard deviations.
inline double mixture_mise(std::span<const WeightedGaussian> a, std::span<const WeightedGaussian> b,
                           int resolution = 150) {
  std::vector<WeightedGaussian> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  const Grid grid = Grid::covering(all, 8.0, resolution);
  return mise([&](const Vector& x) { return weighted_density(a, x); },
              [&](const Vector& x) { return weighted_density(b, x); }, grid);
}

/// Online-vs-offline comparison: fits an EM reference with `target_m`
/// components once, then repeatedly streams freshly shuffled points through a
/// DGMM until `needed` runs end with exactly `target_m` components (or
/// `max_attempts` runs were made), scoring each accepted run by its MISE
/// against the reference.
inline EvalReport mise_experiment(const std::vector<Vector>& points, double k, int target_m, int needed,
                                  int max_attempts, std::uint64_t master_seed, const EmOptions& em = {}) {
  if (needed < 1) throw InvalidArgument("mise_experiment: needed must be positive");
  if (max_attempts < needed) throw InvalidArgument("mise_experiment: max_attempts below needed");
  EvalReport report;
  report.name = "mise_experiment";
  report.config = {{"k", k},          {"target_m", target_m},         {"needed", needed},
                   {"max_attempts", max_attempts}, {"seed", master_seed}, {"points", points.size()}};

  RngStream em_rng(derive_seed(master_seed, 0));
  const EmResult reference = em_fit(points, target_m, em_rng, em);

  std::map<std::size_t, int> histogram;
  int attempts = 0;
  int accepted = 0;
  while (accepted < needed && attempts < max_attempts) {
    const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(attempts) + 1);
    ++attempts;
    RngStream rng(seed);
    std::vector<Vector> order = points;
    std::shuffle(order.begin(), order.end(), rng.engine());
    const Dgmm m = stream_dgmm(order, k, rng);
    ++histogram[m.size()];
    if (m.size() != static_cast<std::size_t>(target_m)) continue;
    ++accepted;
    report.runs.push_back({"", seed, {{"attempt", static_cast<double>(attempts)},
                                      {"mise", mixture_mise(m.components(), reference.gmm.components)}}});
  }
  report.complete = accepted >= needed;
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [count, n] : histogram) hist[std::to_string(count)] = n;
  nlohmann::json ref = nlohmann::json::array();
  for (const auto& c : reference.gmm.components) {
    ref.push_back({{"weight", c.w},
                   {"mean", std::vector<double>(c.g.mean().data(), c.g.mean().data() + c.g.mean().size())},
                   {"cov", std::vector<double>(c.g.cov().data(), c.g.cov().data() + c.g.cov().size())}});
  }
  report.diagnostics = {{"attempts", attempts},
                        {"accepted", accepted},
                        {"acceptance_rate", attempts ? static_cast<double>(accepted) / attempts : 0.0},
                        {"component_histogram", hist},
                        {"em_log_likelihood", reference.log_likelihood},
                        {"em_iterations", reference.iterations},
                        {"em_reference", ref}};
  report.summarize();
  return report;
}

struct TerrainOptions {
  bool standardize = true;
  /// Score the training folds instead of the held-out fold.
  bool score_training = false;
};

/// Cross-validated comparison of a terrain-augmented motion model (scored by
/// ln p(x | c, z)) against the plain model trained on the same records
/// without z (scored by ln p(x | c)). Each run is one repetition of a
/// stratified k-fold split; its metrics are the fold log-likelihoods summed
/// over all folds.
inline EvalReport terrain_comparison(const std::vector<SampleRecord>& s1, int folds, int repeats, double k,
                                     std::uint64_t master_seed, const TerrainOptions& opts = {}) {
  if (s1.empty()) throw InvalidArgument("terrain_comparison: no records");
  for (const auto& r : s1)
    if (!r.z) throw InvalidArgument("terrain_comparison: every record needs a terrain vector");
  if (repeats < 1) throw InvalidArgument("terrain_comparison: repeats must be positive");

  EvalReport report;
  report.name = "terrain_comparison";
  report.config = {{"folds", folds},
                   {"repeats", repeats},
                   {"k", k},
                   {"seed", master_seed},
                   {"records", s1.size()},
                   {"standardize", opts.standardize},
                   {"scored", opts.score_training ? "training" : "held_out"}};

  const Layout plain{DeltaPose::kDim, 0};
  const Layout augmented{DeltaPose::kDim, TerrainVector::kDim};
  auto joint_vector = [](const SampleRecord& r) {
    Vector d(DeltaPose::kDim + TerrainVector::kDim);
    d << r.x.to_vector(), r.z->to_vector();
    return d;
  };

  std::size_t uncovered = 0;
  std::size_t out_of_support = 0;
  std::vector<std::string> warnings;
  for (int rep = 0; rep < repeats; ++rep) {
    const std::uint64_t seed = derive_seed(master_seed, static_cast<std::uint64_t>(rep));
    RngStream split_rng(seed);
    const FoldSplit split = stratified_kfold(s1, folds, split_rng);
    if (rep == 0) warnings = split.warnings;

    double with_terrain = 0.0;
    double without_terrain = 0.0;
    for (std::size_t f = 0; f < split.folds.size(); ++f) {
      std::vector<std::size_t> train = split.training(f);
      const std::uint64_t fold_seed = derive_seed(seed, f + 1);
      RngStream order_rng(fold_seed);
      std::shuffle(train.begin(), train.end(), order_rng.engine());

      std::optional<Standardizer> s_joint, s_plain;
      if (opts.standardize) {
        std::vector<Vector> dj, dp;
        for (std::size_t i : train) {
          dj.push_back(joint_vector(s1[i]));
          dp.push_back(s1[i].x.to_vector());
        }
        s_joint = Standardizer::fit(dj);
        s_plain = Standardizer::fit(dp);
      }
      MotionModel with(augmented, k, s_joint);
      MotionModel without(plain, k, s_plain);
      RngStream rng_with(derive_seed(fold_seed, 1));
      RngStream rng_without(derive_seed(fold_seed, 1));
      for (std::size_t i : train) {
        const auto& r = s1[i];
        with.record_sample(r.command, r.x.to_vector(), r.z->to_vector(), rng_with);
        without.record_sample(r.command, r.x.to_vector(), std::nullopt, rng_without);
      }

      const std::vector<std::size_t>& scored = opts.score_training ? train : split.folds[f];
      for (std::size_t i : scored) {
        const auto& r = s1[i];
        const Vector x = r.x.to_vector();
        if (!with.contains(r.command)) {
          ++uncovered;
          with_terrain += std::log(kDensityFloor);
          without_terrain += std::log(kDensityFloor);
          continue;
        }
        double p_with = kDensityFloor;
        try {
          p_with = with.conditional_motion_density(r.command, *r.z).density(x);
        } catch (const OutOfSupport&) {
          ++out_of_support;
        }
        with_terrain += std::log(std::max(p_with, kDensityFloor));
        without_terrain += std::log(std::max(without.motion_density(r.command, x), kDensityFloor));
      }
    }
    report.runs.push_back({"", seed, {{"with_terrain", with_terrain}, {"without_terrain", without_terrain}}});
  }
  report.diagnostics = {{"uncovered_records", uncovered}, {"out_of_support", out_of_support}, {"warnings", warnings}};
  report.summarize();
  return report;
}

/// sqrt(s_a^2 / n_a + s_b^2 / n_b)
inline double pooled_standard_error(const Aggregate& a, const Aggregate& b) {
  return std::sqrt(a.stddev * a.stddev / static_cast<double>(a.count) +
                   b.stddev * b.stddev / static_cast<double>(b.count));
}

}  // namespace dgmm
