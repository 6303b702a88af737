#pragma once

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ktube/io.hpp"
#include "ktube/plant.hpp"

namespace ktube {

// ---------------------------------------------------------------------------
// Config file parsing: "[section]" headers with "key = value" lines, or an
// equivalent JSON document.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// split on commas at parenthesis depth zero
inline std::vector<std::string> split_top_level(const std::string& s) {
  std::vector<std::string> parts;
  int depth = 0;
  std::string cur;
  for (char c : s) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) parts.push_back(trim(cur));
  return parts;
}

inline Json parse_scalar(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (...) {
  }
  return s;
}

inline Json parse_value(const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[' && s.back() == ']')
    s = trim(s.substr(1, s.size() - 2));
  auto parts = split_top_level(s);
  if (parts.size() > 1) {
    Json arr = Json::array();
    for (const auto& p : parts) arr.push_back(parse_scalar(p));
    return arr;
  }
  return parse_scalar(s);
}

}  // namespace detail

inline Json parse_config_text(const std::string& text) {
  Json root = Json::object();
  Json* section = &root;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw Error("BadFormat",
                    "unterminated section header at line " + std::to_string(lineno));
      std::string name = detail::trim(line.substr(1, line.size() - 2));
      root[name] = Json::object();
      section = &root[name];
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("BadFormat", "expected key = value at line " + std::to_string(lineno));
    std::string key = detail::trim(line.substr(0, eq));
    (*section)[key] = detail::parse_value(line.substr(eq + 1));
  }
  return root;
}

/// Reads either the sectioned key-value format or plain JSON.
inline Json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("IoError", "cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  const std::string trimmed = detail::trim(text);
  if (!trimmed.empty() && trimmed.front() == '{') return Json::parse(text);
  return parse_config_text(text);
}

// ---------------------------------------------------------------------------
// Json helpers tolerant to both config styles
// ---------------------------------------------------------------------------

namespace detail {

inline Vec json_to_vec(const Json& j) {
  if (j.is_number()) return Vec::Constant(1, j.get<double>());
  if (!j.is_array()) throw Error("BadFormat", "expected a numeric list");
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

// matrix given as "a b; c d" rows or as an array of arrays
inline Mat json_to_mat(const Json& j) {
  std::vector<std::vector<double>> rows;
  if (j.is_string()) {
    std::istringstream in(j.get<std::string>());
    std::string row;
    while (std::getline(in, row, ';')) {
      std::istringstream rs(row);
      std::vector<double> vals;
      double v;
      while (rs >> v) vals.push_back(v);
      if (!vals.empty()) rows.push_back(vals);
    }
  } else if (j.is_array()) {
    for (const auto& r : j) {
      std::vector<double> vals;
      for (const auto& v : r) vals.push_back(v.get<double>());
      rows.push_back(vals);
    }
  } else {
    throw Error("BadFormat", "expected a matrix");
  }
  if (rows.empty()) throw Error("BadFormat", "empty matrix");
  Mat m(rows.size(), rows[0].size());
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw Error("BadFormat", "ragged matrix rows");
    for (size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

inline DisturbanceSpec parse_disturbance(const std::string& s) {
  const std::string t = trim(s);
  if (t == "zero") return DisturbanceSpec::zero();
  size_t open = t.find('(');
  if (open == std::string::npos || t.back() != ')')
    throw Error("BadFormat", "cannot parse disturbance " + t);
  const std::string name = trim(t.substr(0, open));
  auto args = split_top_level(t.substr(open + 1, t.size() - open - 2));
  std::vector<double> a;
  for (const auto& x : args) a.push_back(std::stod(x));
  if (name == "uniform" && a.size() == 2)
    return DisturbanceSpec::uniform(a[0], a[1]);
  if (name == "beta" && a.size() == 4)
    return DisturbanceSpec::beta_affine(a[0], a[1], a[2], a[3]);
  throw Error("BadFormat", "cannot parse disturbance " + t);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct EstimationConfig {
  int samples = 330;
  double eps_x = 0.001;
  double lipschitz = 1.2;
  double eps_h = 0.1;
  double delta_h = 0.05;
  // pairs with max-norm state above this are excluded from the residual hull
  double error_state_bound = 1.1;
};

struct DroConfig {
  double radius = 1e-4;
  bool inflate_radius = false;
  Vec alpha;  // one per state-constraint row
};

struct ConstraintConfig {
  Mat f_rows;
  Vec f_bounds;
  Mat g_rows;
  Vec g_bounds;
};

struct McConfig {
  int runs = 500;
  int steps = 60;
  Vec x0;
  int threads = 4;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out = "out";
  PlantSpec plant;
  std::vector<std::string> dictionary;
  TrainingProtocol training;
  EstimationConfig estimation;
  DroConfig dro;
  ConstraintConfig constraints;
  Vec q_diag;
  double r_weight = 0.1;
  int horizon = 5;
  McConfig mc;

  void validate() const {
    plant.validate();
    if (horizon < 1) throw Error("BadProblem", "horizon must be >= 1");
    if (constraints.f_rows.rows() != constraints.f_bounds.size())
      throw Error("BadProblem", "state constraint rows/bounds mismatch");
    if (constraints.g_rows.rows() != constraints.g_bounds.size())
      throw Error("BadProblem", "input constraint rows/bounds mismatch");
    if (constraints.f_rows.cols() != plant.state_dim())
      throw Error("BadProblem", "state constraint dimension mismatch");
    if (dro.alpha.size() != constraints.f_rows.rows())
      throw Error("BadProblem", "need one risk level per state constraint row");
    if ((dro.alpha.array() <= 0.0).any() || (dro.alpha.array() >= 1.0).any())
      throw Error("BadProblem", "risk levels must lie in (0, 1)");
    if (mc.x0.size() != plant.state_dim())
      throw Error("BadProblem", "initial state dimension mismatch");
    if (mc.runs < 1 || mc.steps < 1 || mc.threads < 1)
      throw Error("BadProblem", "Monte-Carlo settings must be positive");
  }

  static ExperimentConfig from_json(const Json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", 1.0);
    c.out = j.value("out", std::string("out"));

    const Json& p = j.at("plant");
    c.plant.field = p.value("field", c.plant.field);
    c.plant.mass_spring_corrected = p.value("mass_spring_corrected", false);
    c.plant.damping = p.value("damping", c.plant.damping);
    c.plant.input_gain = p.value("input_gain", c.plant.input_gain);
    c.plant.dt = p.value("dt", c.plant.dt);
    c.plant.integrator = p.value("integrator", c.plant.integrator);
    for (int i = 1; i <= c.plant.state_dim(); ++i) {
      const std::string key = "disturbance" + std::to_string(i);
      if (!p.contains(key))
        throw Error("BadFormat", "plant config missing " + key);
      c.plant.disturbance.push_back(
          detail::parse_disturbance(p.at(key).get<std::string>()));
    }

    for (const auto& t : j.at("dictionary").at("terms")) {
      if (t.is_string())
        c.dictionary.push_back(t.get<std::string>());
      else
        c.dictionary.push_back("1");  // the bare constant parses as a number
    }

    if (j.contains("training")) {
      const Json& t = j.at("training");
      c.training.n_traj = t.value("trajectories", c.training.n_traj);
      c.training.traj_len = t.value("length", c.training.traj_len);
      c.training.init_std = t.value("init_std", c.training.init_std);
      c.training.input_mean = t.value("input_mean", c.training.input_mean);
      c.training.input_std = t.value("input_std", c.training.input_std);
      c.training.safety_bound = t.value("safety_bound", c.training.safety_bound);
    }

    if (j.contains("estimation")) {
      const Json& e = j.at("estimation");
      c.estimation.samples = e.value("samples", c.estimation.samples);
      c.estimation.eps_x = e.value("eps_x", c.estimation.eps_x);
      c.estimation.lipschitz = e.value("lipschitz", c.estimation.lipschitz);
      c.estimation.eps_h = e.value("eps_h", c.estimation.eps_h);
      c.estimation.delta_h = e.value("delta_h", c.estimation.delta_h);
      c.estimation.error_state_bound =
          e.value("error_state_bound", c.estimation.error_state_bound);
    }

    const Json& d = j.at("dro");
    c.dro.radius = d.value("radius", c.dro.radius);
    c.dro.inflate_radius = d.value("inflate_radius", false);
    c.dro.alpha = detail::json_to_vec(d.at("alpha"));

    const Json& k = j.at("constraints");
    c.constraints.f_rows = detail::json_to_mat(k.at("f_rows"));
    c.constraints.f_bounds = detail::json_to_vec(k.at("f_bounds"));
    c.constraints.g_rows = detail::json_to_mat(k.at("g_rows"));
    c.constraints.g_bounds = detail::json_to_vec(k.at("g_bounds"));

    const Json& w = j.at("weights");
    c.q_diag = detail::json_to_vec(w.at("q"));
    c.r_weight = w.at("r").get<double>();

    c.horizon = static_cast<int>(j.at("mpc").value("horizon", 5.0));

    const Json& m = j.at("montecarlo");
    c.mc.runs = m.value("runs", c.mc.runs);
    c.mc.steps = m.value("steps", c.mc.steps);
    c.mc.x0 = detail::json_to_vec(m.at("x0"));
    c.mc.threads = m.value("threads", c.mc.threads);

    c.validate();
    return c;
  }
};

inline ExperimentConfig load_experiment(const std::string& path) {
  return ExperimentConfig::from_json(load_config(path));
}

}  // namespace ktube
