#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dgmm/error.hpp"
#include "dgmm/motion_model.hpp"

namespace dgmm {

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline nlohmann::json to_json_array(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline nlohmann::json to_json_row_major(const Matrix& m) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
  return a;
}

// Reader that names the offending field on every failure.
class FieldReader {
 public:
  [[noreturn]] static void fail(const std::string& field, const std::string& why) {
    throw DataError("model file: field '" + field + "': " + why);
  }

  static const nlohmann::json& member(const nlohmann::json& obj, const std::string& parent,
                                      const std::string& key) {
    const std::string field = parent.empty() ? key : parent + "." + key;
    if (!obj.is_object()) fail(parent.empty() ? "<root>" : parent, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(field, "missing");
    return *it;
  }

  static double number(const nlohmann::json& j, const std::string& field) {
    if (!j.is_number()) fail(field, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(field, "non-finite value");
    return v;
  }

  static int count(const nlohmann::json& j, const std::string& field) {
    if (!j.is_number_integer() || j.get<long long>() < 0) fail(field, "expected a non-negative integer");
    return j.get<int>();
  }

  static Vector vector(const nlohmann::json& j, const std::string& field, Eigen::Index expected) {
    if (!j.is_array()) fail(field, "expected an array");
    if (static_cast<Eigen::Index>(j.size()) != expected)
      fail(field, "expected " + std::to_string(expected) + " values, found " + std::to_string(j.size()));
    Vector v(expected);
    for (Eigen::Index i = 0; i < expected; ++i)
      v(i) = number(j[static_cast<std::size_t>(i)], field + "[" + std::to_string(i) + "]");
    return v;
  }
};

}  // namespace detail

/// Serializes a motion model. `provenance` (if not null) is embedded verbatim.
inline nlohmann::json model_to_json(const MotionModel& mm, const nlohmann::json& provenance = nullptr) {
  nlohmann::json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["k"] = mm.k();
  doc["init_cov_scale"] = mm.init_cov_scale();
  doc["prior_horizon"] = mm.prior_horizon();
  doc["layout"] = {{"x_dim", mm.layout().x_dim}, {"z_dim", mm.layout().z_dim}};
  if (mm.standardizer()) {
    doc["standardizer"] = {{"offset", detail::to_json_array(mm.standardizer()->offset)},
                           {"scale", detail::to_json_array(mm.standardizer()->scale)}};
  }
  nlohmann::json commands = nlohmann::json::array();
  for (const auto& [key, m] : mm.models()) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : m.components()) {
      comps.push_back({{"w", c.w},
                       {"mean", detail::to_json_array(c.g.mean())},
                       {"cov", detail::to_json_row_major(c.g.cov())}});
    }
    commands.push_back({{"key", {key.longitudinal, key.lateral, key.turn}}, {"components", comps}});
  }
  doc["commands"] = commands;
  if (!provenance.is_null()) doc["provenance"] = provenance;
  return doc;
}

inline MotionModel model_from_json(const nlohmann::json& doc) {
  using R = detail::FieldReader;
  const int version = R::count(R::member(doc, "", "format_version"), "format_version");
  if (version != kModelFormatVersion) R::fail("format_version", "unsupported version " + std::to_string(version));
  const double k = R::number(R::member(doc, "", "k"), "k");
  if (k < 0.0) R::fail("k", "must be non-negative");
  double init_scale = 1.0;
  if (doc.contains("init_cov_scale")) {
    init_scale = R::number(doc["init_cov_scale"], "init_cov_scale");
    if (!(init_scale > 0.0)) R::fail("init_cov_scale", "must be positive");
  }
  double horizon = kDefaultPriorHorizon;
  if (doc.contains("prior_horizon")) {
    horizon = R::number(doc["prior_horizon"], "prior_horizon");
    if (horizon < 0.0) R::fail("prior_horizon", "must be non-negative");
  }
  const auto& lj = R::member(doc, "", "layout");
  Layout layout{R::count(R::member(lj, "layout", "x_dim"), "layout.x_dim"),
                R::count(R::member(lj, "layout", "z_dim"), "layout.z_dim")};
  if (layout.x_dim < 1) R::fail("layout.x_dim", "must be at least 1");
  const Eigen::Index dim = layout.dim();

  std::optional<Standardizer> standardizer;
  if (doc.contains("standardizer")) {
    const auto& sj = doc["standardizer"];
    Standardizer s{R::vector(R::member(sj, "standardizer", "offset"), "standardizer.offset", dim),
                   R::vector(R::member(sj, "standardizer", "scale"), "standardizer.scale", dim)};
    if (!(s.scale.array() > 0.0).all()) R::fail("standardizer.scale", "values must be positive");
    standardizer = std::move(s);
  }

  MotionModel mm(layout, k, standardizer, init_scale, horizon);
  const auto& cj = R::member(doc, "", "commands");
  if (!cj.is_array()) R::fail("commands", "expected an array");
  for (std::size_t ci = 0; ci < cj.size(); ++ci) {
    const std::string base = "commands[" + std::to_string(ci) + "]";
    const Vector kv = R::vector(R::member(cj[ci], base, "key"), base + ".key", 3);
    const CommandKey key{kv(0), kv(1), kv(2)};
    if (mm.contains(key)) R::fail(base + ".key", "duplicate command " + key.to_string());
    const auto& comps = R::member(cj[ci], base, "components");
    if (!comps.is_array()) R::fail(base + ".components", "expected an array");
    Dgmm m(static_cast<int>(dim), init_scale, horizon);
    for (std::size_t i = 0; i < comps.size(); ++i) {
      const std::string cb = base + ".components[" + std::to_string(i) + "]";
      const double w = R::number(R::member(comps[i], cb, "w"), cb + ".w");
      if (!(w > 0.0)) R::fail(cb + ".w", "weight must be positive");
      Vector mean = R::vector(R::member(comps[i], cb, "mean"), cb + ".mean", dim);
      const Vector flat = R::vector(R::member(comps[i], cb, "cov"), cb + ".cov", dim * dim);
      Matrix cov(dim, dim);
      for (Eigen::Index r = 0; r < dim; ++r)
        for (Eigen::Index c = 0; c < dim; ++c) cov(r, c) = flat(r * dim + c);
      if (!detail::symmetric(cov)) R::fail(cb + ".cov", "covariance is not symmetric");
      try {
        m.append(make_component(std::move(mean), std::move(cov), w, init_scale, horizon));
      } catch (const Error& e) {
        R::fail(cb + ".cov", e.what());
      }
    }
    mm.set_model(key, std::move(m));
  }
  return mm;
}

inline void save_model(const MotionModel& mm, const std::filesystem::path& path,
                       const nlohmann::json& provenance = nullptr) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << model_to_json(mm, provenance).dump(2) << '\n';
  if (!out) throw DataError("failed writing '" + path.string() + "'");
}

inline MotionModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("model file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return model_from_json(doc);
}

}  // namespace dgmm
