#include "daeident/model_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace daeident {

using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in '" + path + "': " + e.what());
  }
  return j;
}

Eigen::VectorXd parse_vector(const json& j, const char* what) {
  if (!j.is_array()) throw IoError(std::string(what) + " must be an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw IoError(std::string(what) + " must contain only numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd parse_matrix(const json& j, const std::string& base_dir, const char* what) {
  if (j.is_string()) {
    std::filesystem::path p(j.get<std::string>());
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    return load_csv_matrix(p.string());
  }
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw IoError(std::string(what) + " must be a matrix (array of rows) or a CSV path");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Eigen::MatrixXd M(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw IoError(std::string(what) + " has ragged rows");
    for (std::size_t k = 0; k < cols; ++k)
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
  }
  return M;
}

}  // namespace

Eigen::MatrixXd load_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open matrix file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) {
      std::istringstream cs(cell);
      double v;
      while (cs >> v) row.push_back(v);  // also splits space-separated cells
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("matrix file '" + path + "' is empty");
  const std::size_t cols = rows[0].size();
  Eigen::MatrixXd M(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw IoError("matrix file '" + path + "' has ragged rows");
    for (std::size_t k = 0; k < cols; ++k)
      M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return M;
}

DaeModel parse_dae_json(const json& j) {
  DaeModel m;
  if (j.contains("name")) m.name = j.at("name").get<std::string>();

  auto declare_list = [&](const char* key, SymbolKind kind, std::vector<SymbolId>& out) {
    if (!j.contains(key)) return;
    for (const auto& item : j.at(key)) {
      out.push_back(m.symbols->declare(item.get<std::string>(), kind));
    }
  };
  declare_list("states_differential", SymbolKind::State, m.differential_states);
  declare_list("states_algebraic", SymbolKind::AlgebraicState, m.algebraic_states);
  if (m.differential_states.empty() && m.algebraic_states.empty())
    throw IoError("model declares no states");

  if (j.contains("parameters")) {
    for (const auto& [key, value] : j.at("parameters").items()) {
      SymbolId id = m.symbols->declare(key, SymbolKind::Parameter);
      m.parameters.push_back(id);
      if (!value.is_null()) m.parameter_values[id] = value.get<double>();
    }
  }

  auto parse_rows = [&](const char* key, std::vector<Expr>& out) {
    if (!j.contains(key)) return false;
    for (const auto& item : j.at(key)) {
      try {
        out.push_back(parse_expression(item.get<std::string>(), *m.symbols));
      } catch (const ExprError& e) {
        throw IoError(std::string("in ") + key + " row '" + item.get<std::string>() +
                      "': " + e.what());
      }
    }
    return true;
  };

  bool has_f1 = parse_rows("f1", m.f1);
  bool has_f2 = parse_rows("f2", m.f2);
  bool has_F = parse_rows("F", m.implicit_residuals);
  if (has_F && (has_f1 || has_f2))
    throw IoError("declare either F or the pair f1/f2, not both");
  if (!has_F && !has_f1)
    throw IoError("model needs residuals: either F or f1 (with optional f2)");
  if (!parse_rows("outputs", m.outputs)) throw IoError("model needs outputs");

  if (j.contains("initial_condition"))
    m.initial_condition = parse_vector(j.at("initial_condition"), "initial_condition");

  try {
    validate_model(m);
  } catch (const ModelError& e) {
    throw IoError(std::string("invalid model: ") + e.what());
  }
  return m;
}

std::vector<std::pair<int, int>> parse_theta_spec(const LinearDae& d, const json& spec) {
  if (spec.is_string()) {
    if (spec.get<std::string>() == "nonzero") return theta_nonzero(d);
    throw IoError("theta spec string must be \"nonzero\"");
  }
  if (!spec.is_array() || spec.empty()) throw IoError("theta spec must be a nonempty array");
  if (spec[0].is_array()) {  // boolean mask
    const int n = d.n();
    if (static_cast<int>(spec.size()) != n) throw IoError("theta mask must be n x n");
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(n, n);
    for (int i = 0; i < n; ++i) {
      if (static_cast<int>(spec[static_cast<std::size_t>(i)].size()) != n)
        throw IoError("theta mask must be n x n");
      for (int k = 0; k < n; ++k)
        mask(i, k) = spec[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<bool>();
    }
    return theta_from_mask(mask);
  }
  std::vector<std::string> names;
  for (const auto& item : spec) names.push_back(item.get<std::string>());
  if (names.size() == 1 && names[0] == "nonzero") return theta_nonzero(d);
  // Either block names (A, A11, ...) or entry names (a12, ...).
  if (!names.empty() && names[0].size() >= 1 && names[0][0] == 'A')
    return theta_block(d, names);
  std::vector<std::pair<int, int>> out;
  for (const std::string& s : names) {
    if (s.size() < 3 || s[0] != 'a') throw IoError("bad entry name '" + s + "'");
    int i, jcol;
    if (s.find('_') != std::string::npos) {
      auto us = s.find('_');
      i = std::stoi(s.substr(1, us - 1)) - 1;
      jcol = std::stoi(s.substr(us + 1)) - 1;
    } else {
      i = s[1] - '1';
      jcol = s[2] - '1';
    }
    if (i < 0 || jcol < 0 || i >= d.n() || jcol >= d.n())
      throw IoError("entry '" + s + "' out of range");
    out.emplace_back(i, jcol);
  }
  return out;
}

LinearDae parse_linear_json(const json& j, const std::string& base_dir) {
  LinearDae d;
  d.A = parse_matrix(j.at("A"), base_dir, "A");
  const int n = static_cast<int>(d.A.rows());
  d.E = j.contains("E") ? parse_matrix(j.at("E"), base_dir, "E")
                        : Eigen::MatrixXd::Identity(n, n);
  d.C = j.contains("C") ? parse_matrix(j.at("C"), base_dir, "C")
                        : Eigen::MatrixXd::Identity(n, n);
  if (j.contains("partition")) {
    auto part = j.at("partition");
    if (!part.is_array() || part.size() != 2) throw IoError("partition must be [n1, n2]");
    d.partition = std::make_pair(part[0].get<int>(), part[1].get<int>());
  }
  if (j.contains("theta")) d.theta = parse_theta_spec(d, j.at("theta"));
  try {
    validate_linear(d);
  } catch (const LinearError& e) {
    throw IoError(std::string("invalid linear model: ") + e.what());
  }
  return d;
}

LoadedModel parse_model_json(const json& j, const std::string& base_dir) {
  LoadedModel out;
  out.raw = j;
  if (j.contains("linear")) {
    out.linear = parse_linear_json(j.at("linear"), base_dir);
    if (j.contains("initial_condition")) {
      // kept in raw for scenario use
    }
  } else {
    out.dae = parse_dae_json(j);
  }
  return out;
}

LoadedModel load_model_file(const std::string& path) {
  json j = read_json_file(path);
  std::string dir = std::filesystem::path(path).parent_path().string();
  if (dir.empty()) dir = ".";
  try {
    return parse_model_json(j, dir);
  } catch (const IoError& e) {
    throw IoError("in model file '" + path + "': " + e.what());
  }
}

std::string format_numeric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string save_model_json(const DaeModel& m) {
  const SymbolTable& t = *m.symbols;
  std::ostringstream os;
  auto name_list = [&](const std::vector<SymbolId>& ids) {
    std::string s = "[";
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s += ", ";
      s += "\"" + t[ids[i]].name + "\"";
    }
    return s + "]";
  };
  auto expr_list = [&](const std::vector<Expr>& es) {
    std::string s = "[";
    for (std::size_t i = 0; i < es.size(); ++i) {
      if (i) s += ", ";
      s += json(to_string(es[i], t)).dump();
    }
    return s + "]";
  };
  os << "{\n";
  if (!m.name.empty()) os << "  \"name\": " << json(m.name).dump() << ",\n";
  os << "  \"states_differential\": " << name_list(m.differential_states) << ",\n";
  if (!m.algebraic_states.empty())
    os << "  \"states_algebraic\": " << name_list(m.algebraic_states) << ",\n";
  os << "  \"parameters\": {";
  for (std::size_t i = 0; i < m.parameters.size(); ++i) {
    if (i) os << ", ";
    SymbolId id = m.parameters[i];
    os << "\"" << t[id].name << "\": ";
    auto it = m.parameter_values.find(id);
    if (it == m.parameter_values.end()) os << "null";
    else os << format_numeric(it->second);
  }
  os << "},\n";
  if (m.has_semi_explicit()) {
    os << "  \"f1\": " << expr_list(m.f1) << ",\n";
    if (!m.f2.empty()) os << "  \"f2\": " << expr_list(m.f2) << ",\n";
  } else {
    os << "  \"F\": " << expr_list(m.implicit_residuals) << ",\n";
  }
  os << "  \"outputs\": " << expr_list(m.outputs);
  if (m.initial_condition.size() > 0) {
    os << ",\n  \"initial_condition\": [";
    for (Eigen::Index i = 0; i < m.initial_condition.size(); ++i) {
      if (i) os << ", ";
      os << format_numeric(m.initial_condition[i]);
    }
    os << "]";
  }
  os << "\n}\n";
  return os.str();
}

nlohmann::json rank_report_json(const RankReport& r, bool svd_audit) {
  json j;
  j["verdict"] = r.satisfied ? "satisfied" : "not-satisfied";
  j["satisfied"] = r.satisfied;
  j["rank_full"] = r.rank_full;
  j["rank_right"] = r.rank_right;
  j["required"] = r.required;
  j["mu"] = r.mu;
  j["nu"] = r.nu;
  j["sigma"] = r.sigma;
  j["tolerance"] = r.tolerance;
  j["min_counted_ratio"] =
      std::isfinite(r.min_counted_ratio) ? json(r.min_counted_ratio) : json();
  j["ill_conditioned"] = r.ill_conditioned;
  if (svd_audit) j["singular_values"] = r.singular_values;
  return j;
}

PointFile load_point_file(const std::string& path) {
  json j = read_json_file(path);
  PointFile pf;
  if (j.contains("x")) pf.x = parse_vector(j.at("x"), "x");
  if (j.contains("x1")) pf.x1 = parse_vector(j.at("x1"), "x1");
  if (!pf.x && !pf.x1) throw IoError("point file needs \"x\" or \"x1\"");
  if (j.contains("theta")) pf.theta = parse_vector(j.at("theta"), "theta");
  if (j.contains("time")) pf.time = j.at("time").get<double>();
  return pf;
}

void write_trajectory_csv(const Trajectory& traj, const std::vector<std::string>& state_names,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "t";
  for (const std::string& s : state_names) out << "," << s;
  const int deriv_order =
      traj.derivative_arrays.empty() ? 0
                                     : static_cast<int>(traj.derivative_arrays[0].size()) - 1;
  for (int k = 1; k <= deriv_order; ++k)
    for (const std::string& s : state_names)
      out << "," << s << std::string(static_cast<std::size_t>(k), '\'');
  out << ",residual\n";
  for (std::size_t i = 0; i < traj.times.size(); ++i) {
    out << format_numeric(traj.times[i]);
    const Eigen::VectorXd& x = traj.states[i];
    for (Eigen::Index c = 0; c < x.size(); ++c) out << "," << format_numeric(x[c]);
    for (int k = 1; k <= deriv_order; ++k) {
      const Eigen::VectorXd& d = traj.derivative_arrays[i][static_cast<std::size_t>(k)];
      for (Eigen::Index c = 0; c < d.size(); ++c) out << "," << format_numeric(d[c]);
    }
    out << "," << format_numeric(traj.consistency_residuals[i]) << "\n";
  }
}

void write_trajectory_meta(const Trajectory& traj, const SimOptions& opts,
                           const std::string& path) {
  json j;
  j["dt"] = opts.dt;
  j["richardson"] = opts.richardson;
  j["algebraic_tol"] = opts.algebraic_tol;
  j["samples"] = traj.times.size();
  j["max_consistency_residual"] = traj.max_residual();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace daeident
