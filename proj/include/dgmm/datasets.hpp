#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dgmm/em.hpp"
#include "dgmm/error.hpp"
#include "dgmm/motion_model.hpp"
#include "dgmm/rng.hpp"

namespace dgmm {

/// One observation: command, optional terrain vector, pose change.
struct SampleRecord {
  CommandKey command;
  std::optional<TerrainVector> z;
  DeltaPose x;

  bool operator==(const SampleRecord&) const = default;
};

inline constexpr std::string_view kSampleHeaderWithZ =
    "cmd_long,cmd_lat,cmd_turn,z_pitch,z_roll,dx,dy,dz,droll,dpitch,dyaw";
inline constexpr std::string_view kSampleHeaderNoZ = "cmd_long,cmd_lat,cmd_turn,dx,dy,dz,droll,dpitch,dyaw";

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, bool whitespace_too) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  auto is_sep = [&](char c) { return c == ',' || (whitespace_too && (c == ' ' || c == '\t')); };
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || is_sep(line[i])) {
      std::string_view f = trim(line.substr(start, i - start));
      if (!(whitespace_too && f.empty())) out.push_back(f);
      start = i + 1;
    }
  }
  return out;
}

inline bool skippable(std::string_view line) {
  line = trim(line);
  return line.empty() || line.front() == '#';
}

inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Reads a sample CSV. The header must be the fixed column list, with the
/// z_pitch,z_roll block present exactly when `expect_z` (either schema when
/// it is empty). Lines starting with '#' are comments.
inline std::vector<SampleRecord> load_samples(const std::filesystem::path& path,
                                              std::optional<bool> expect_z = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open sample file '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  bool has_z = false;
  std::vector<SampleRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::skippable(line)) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (!have_header) {
      std::string header;
      for (auto f : detail::split_fields(line, false)) header += (header.empty() ? "" : ",") + std::string(f);
      if (header == kSampleHeaderWithZ) {
        has_z = true;
      } else if (header != kSampleHeaderNoZ) {
        throw DataError(where + "header does not match the sample schema");
      }
      if (expect_z && has_z != *expect_z)
        throw DataError(where + (has_z ? "file has terrain columns but none were expected"
                                       : "terrain columns expected but missing"));
      have_header = true;
      continue;
    }
    const auto fields = detail::split_fields(line, false);
    const std::size_t expected = has_z ? 11 : 9;
    if (fields.size() != expected)
      throw DataError(where + "expected " + std::to_string(expected) + " columns, found " +
                      std::to_string(fields.size()));
    std::vector<double> v;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      auto d = detail::parse_double(fields[i]);
      if (!d) throw DataError(where + "column " + std::to_string(i + 1) + " is not numeric: '" + std::string(fields[i]) + "'");
      v.push_back(*d);
    }
    SampleRecord r;
    r.command = {v[0], v[1], v[2]};
    std::size_t o = 3;
    if (has_z) {
      r.z = TerrainVector{v[3], v[4]};
      o = 5;
    }
    r.x = {v[o], v[o + 1], v[o + 2], v[o + 3], v[o + 4], v[o + 5]};
    out.push_back(r);
  }
  if (!have_header) throw DataError(path.string() + ": missing header");
  return out;
}

/// Writes records as sample CSV; `comment` lines (if any) precede the header
/// as '#'-prefixed lines.
inline void write_samples(std::ostream& out, const std::vector<SampleRecord>& records,
                          const std::string& comment = {}) {
  const bool has_z = !records.empty() && records.front().z.has_value();
  if (!comment.empty()) out << "# " << comment << '\n';
  out << (has_z ? kSampleHeaderWithZ : kSampleHeaderNoZ) << '\n';
  for (const auto& r : records) {
    if (r.z.has_value() != has_z) throw InvalidArgument("write_samples: mixed terrain presence");
    out << detail::fmt_double(r.command.longitudinal) << ',' << detail::fmt_double(r.command.lateral) << ','
        << detail::fmt_double(r.command.turn);
    if (has_z) out << ',' << detail::fmt_double(r.z->pitch) << ',' << detail::fmt_double(r.z->roll);
    for (double v : {r.x.dx, r.x.dy, r.x.dz, r.x.droll, r.x.dpitch, r.x.dyaw}) out << ',' << detail::fmt_double(v);
    out << '\n';
  }
}

inline void write_samples(const std::filesystem::path& path, const std::vector<SampleRecord>& records,
                          const std::string& comment = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_samples(out, records, comment);
}

/// Drops terrain vectors, keeping command and pose change.
inline std::vector<SampleRecord> strip_terrain(std::vector<SampleRecord> records) {
  for (auto& r : records) r.z.reset();
  return records;
}

/// Numeric table: whitespace- or comma-separated columns, '#' comments, an
/// optional non-numeric header line. All rows must have the same width.
inline std::vector<Vector> load_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open point file '" + path.string() + "'");
  std::string line;
  std::size_t line_no = 0;
  std::vector<Vector> out;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::skippable(line)) continue;
    const auto fields = detail::split_fields(line, true);
    Vector v(static_cast<Eigen::Index>(fields.size()));
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      auto d = detail::parse_double(fields[i]);
      if (!d) {
        numeric = false;
        break;
      }
      v(static_cast<Eigen::Index>(i)) = *d;
    }
    const bool header = first && !numeric;
    first = false;
    if (header) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (!numeric) throw DataError(where + "non-numeric value");
    if (!out.empty() && v.size() != out.front().size())
      throw DataError(where + "expected " + std::to_string(out.front().size()) + " columns, found " +
                      std::to_string(v.size()));
    out.push_back(std::move(v));
  }
  if (out.empty()) throw DataError(path.string() + ": no data rows");
  return out;
}

inline void write_points(std::ostream& out, const std::vector<Vector>& points, const std::string& comment = {}) {
  if (!comment.empty()) out << "# " << comment << '\n';
  if (points.empty()) return;
  for (Eigen::Index i = 0; i < points.front().size(); ++i) out << (i ? "," : "") << "x" << i;
  out << '\n';
  for (const auto& p : points) {
    for (Eigen::Index i = 0; i < p.size(); ++i) out << (i ? "," : "") << detail::fmt_double(p(i));
    out << '\n';
  }
}

struct PointSet {
  std::vector<Vector> points;
  std::optional<Standardizer> standardizer;
};

/// Two-column Old Faithful data (eruption duration, waiting time). With
/// `standardize`, each column is mapped to zero mean and unit variance.
inline PointSet load_old_faithful(const std::filesystem::path& path, bool standardize) {
  PointSet set{load_points(path), std::nullopt};
  if (set.points.front().size() != 2)
    throw DataError(path.string() + ": expected 2 columns, found " + std::to_string(set.points.front().size()));
  if (standardize) {
    set.standardizer = Standardizer::fit(set.points);
    for (auto& p : set.points) p = set.standardizer->apply(p);
  }
  return set;
}

/// n independent draws: component by weight, then mean + L * N(0, I).
inline std::vector<Vector> sample_gmm(const Gmm& gmm, std::size_t n, RngStream& rng) {
  std::vector<Vector> out;
  if (n == 0) return out;
  if (gmm.components.empty()) throw InvalidArgument("sample_gmm: empty mixture");
  std::vector<double> weights;
  std::vector<Matrix> factors;
  for (const auto& c : gmm.components) {
    weights.push_back(c.w);
    Eigen::LLT<Matrix> llt(c.g.effective_cov());
    factors.push_back(llt.matrixL());
  }
  const int d = gmm.dim();
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = rng.categorical(weights);
    Vector u(d);
    for (int j = 0; j < d; ++j) u(j) = rng.normal();
    out.push_back(gmm.components[k].g.mean() + factors[k] * u);
  }
  return out;
}

/// Parameters of the simulated incline experiment.
struct InclineConfig {
  double slope_deg = 18.0;
  std::vector<double> orientations_deg{0.0, 90.0, -90.0};
  int reps_per_orientation = 5;
  double noise_scale = 1.0;
  double drift_gain = 1.0;
  /// Attitude measurement noise as a fraction of the slope angle.
  double attitude_noise = 0.03;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(slope_deg >= 0.0 && slope_deg <= 45.0)) throw InvalidArgument("InclineConfig: slope_deg must be in [0, 45]");
    if (reps_per_orientation < 1) throw InvalidArgument("InclineConfig: reps_per_orientation must be >= 1");
    if (orientations_deg.empty()) throw InvalidArgument("InclineConfig: no orientations");
    if (!(noise_scale >= 0.0) || !(drift_gain >= 0.0) || !(attitude_noise >= 0.0))
      throw InvalidArgument("InclineConfig: noise_scale, drift_gain and attitude_noise must be non-negative");
  }
};

/// Fixed constants of the simulated robot's motion law.
struct InclineMotionLaw {
  double stride = 0.30;        ///< metres per unit of long/lat command
  double turn_rate = 0.60;     ///< radians per unit of turn command
  double drift_length = 0.10;  ///< metres of downhill slip per unit drift_gain at sin(slope) = 1
  /// Noise standard deviations for dx, dy, dz, droll, dpitch, dyaw at noise_scale 1.
  std::array<double, 6> noise_sd{0.01, 0.01, 0.003, 0.01, 0.01, 0.02};
};

struct InclineDataset {
  std::vector<SampleRecord> records;
  nlohmann::json metadata;
};

/// Expected pose change (noise-free) for command `c` at heading `theta`
/// (radians; pi/2 faces straight downhill) on a plane inclined by `slope`.
inline DeltaPose incline_nominal_delta(const CommandKey& c, double theta, double slope, double drift_gain,
                                       const InclineMotionLaw& law = {}) {
  // Downhill direction in the robot frame (x forward, y left).
  const double down_x = std::sin(theta);
  const double down_y = -std::cos(theta);
  const double slip = drift_gain * law.drift_length * std::sin(slope);
  DeltaPose d;
  d.dx = law.stride * c.longitudinal + slip * down_x;
  d.dy = law.stride * c.lateral + slip * down_y;
  // Travel along the downhill direction loses height.
  d.dz = -std::sin(slope) * (d.dx * down_x + d.dy * down_y);
  d.dyaw = law.turn_rate * c.turn;
  return d;
}

/// Robot attitude (pitch, roll) on the incline at heading `theta`.
inline TerrainVector incline_attitude(double theta, double slope) {
  return {-slope * std::sin(theta), slope * std::cos(theta)};
}

/// Synthetic stand-in for the incline experiment: every command of the
/// 26-command set, in random order, issued reps_per_orientation times at each
/// starting orientation. z is the attitude measured before the command; x is
/// the nominal displacement plus downhill slip plus Gaussian noise.
inline InclineDataset simulate_incline(const InclineConfig& cfg) {
  cfg.validate();
  const InclineMotionLaw law;
  RngStream rng(cfg.seed);
  std::vector<CommandKey> commands = discrete_command_set();
  std::shuffle(commands.begin(), commands.end(), rng.engine());

  const double slope = cfg.slope_deg * std::numbers::pi / 180.0;
  InclineDataset ds;
  for (const auto& c : commands) {
    for (double orientation : cfg.orientations_deg) {
      const double theta = orientation * std::numbers::pi / 180.0;
      const TerrainVector attitude = incline_attitude(theta, slope);
      const DeltaPose nominal = incline_nominal_delta(c, theta, slope, cfg.drift_gain, law);
      for (int rep = 0; rep < cfg.reps_per_orientation; ++rep) {
        SampleRecord r;
        r.command = c;
        const double z_sd = cfg.attitude_noise * slope;
        r.z = TerrainVector{attitude.pitch + z_sd * rng.normal(), attitude.roll + z_sd * rng.normal()};
        const auto& s = law.noise_sd;
        const double ns = cfg.noise_scale;
        r.x = {nominal.dx + ns * s[0] * rng.normal(),     nominal.dy + ns * s[1] * rng.normal(),
               nominal.dz + ns * s[2] * rng.normal(),     nominal.droll + ns * s[3] * rng.normal(),
               nominal.dpitch + ns * s[4] * rng.normal(), wrap_angle(nominal.dyaw + ns * s[5] * rng.normal())};
        ds.records.push_back(r);
      }
    }
  }

  nlohmann::json truth = nlohmann::json::array();
  for (const auto& c : discrete_command_set()) {
    for (double orientation : cfg.orientations_deg) {
      const double theta = orientation * std::numbers::pi / 180.0;
      const DeltaPose m = incline_nominal_delta(c, theta, slope, cfg.drift_gain, law);
      const TerrainVector a = incline_attitude(theta, slope);
      truth.push_back({{"command", {c.longitudinal, c.lateral, c.turn}},
                       {"orientation_deg", orientation},
                       {"attitude", {a.pitch, a.roll}},
                       {"mean_delta", {m.dx, m.dy, m.dz, m.droll, m.dpitch, m.dyaw}}});
    }
  }
  ds.metadata = {{"generator", "incline"},
                 {"config",
                  {{"slope_deg", cfg.slope_deg},
                   {"orientations_deg", cfg.orientations_deg},
                   {"reps_per_orientation", cfg.reps_per_orientation},
                   {"noise_scale", cfg.noise_scale},
                   {"drift_gain", cfg.drift_gain},
                   {"attitude_noise", cfg.attitude_noise},
                   {"seed", cfg.seed}}},
                 {"motion_law",
                  {{"stride", law.stride},
                   {"turn_rate", law.turn_rate},
                   {"drift_length", law.drift_length},
                   {"noise_sd", law.noise_sd}}},
                 {"record_count", ds.records.size()},
                 {"ground_truth", truth}};
  return ds;
}

/// The three-cluster 2-D mixture used for the k-sweep fixture.
inline Gmm three_cluster_gmm() {
  Gmm g;
  auto add = [&](double w, double mx, double my, double sxx, double sxy, double syy) {
    Vector m(2);
    m << mx, my;
    Matrix c(2, 2);
    c << sxx, sxy, sxy, syy;
    g.components.push_back({Gaussian(m, c), w});
  };
  add(0.3, -2.0, 0.0, 0.30, 0.10, 0.30);
  add(0.4, 2.0, 1.0, 0.40, -0.15, 0.25);
  add(0.3, 0.0, -2.5, 0.20, 0.00, 0.50);
  return g;
}

}  // namespace dgmm
