#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "inett/tensor.hpp"

namespace inett {

/// Run configuration, read from line-based `key = value` text split into
/// [geometry] / [unet] / [training] / [solver] sections. Unknown sections or
/// keys are rejected so typos fail loudly.
struct AppConfig {
  struct Geometry {
    std::size_t n = 64;
    std::size_t n_det = 64;
    std::size_t n_views = 30;
  } geometry;
  struct Unet {
    std::size_t levels = 2;
    std::size_t base_channels = 8;
    std::size_t channel_mult = 2;
    double bn_eps = 1e-5;
    double a = 1e-3;
    double p = 2.0;
    double q = 2.0;
  } unet;
  struct Training {
    std::size_t epochs = 100;
    std::size_t batch = 10;
    double lr = 5e-4;
    double lambda = 5e-4;
    double noise_max = 0.10;
    std::size_t art_rounds = 5;
  } training;
  struct Solver {
    double tau = 1.01;
    std::size_t n_max = 30;
    double inner_step = 1.0;
    std::size_t inner_iters = 200;
    double inner_tol = 1e-6;
    double cg_tol = 1e-10;
    std::size_t art_rounds = 5;
  } solver;
};

namespace detail_config {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_f64(const std::string& v, const std::string& key, std::size_t line) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw ParseError("config line " + std::to_string(line) + ": bad number for " + key +
                     ": '" + v + "'");
  }
}

inline std::size_t to_uz(const std::string& v, const std::string& key, std::size_t line) {
  try {
    std::size_t pos = 0;
    const long long d = std::stoll(v, &pos);
    if (pos != v.size() || d < 0) throw std::invalid_argument("");
    return static_cast<std::size_t>(d);
  } catch (...) {
    throw ParseError("config line " + std::to_string(line) + ": bad count for " + key +
                     ": '" + v + "'");
  }
}

}  // namespace detail_config

inline AppConfig parse_config(std::istream& is) {
  using detail_config::to_f64;
  using detail_config::to_uz;
  AppConfig cfg;
  std::string section, raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = detail_config::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("config line " + std::to_string(lineno) + ": malformed section");
      section = line.substr(1, line.size() - 2);
      if (section != "geometry" && section != "unet" && section != "training" &&
          section != "solver")
        throw ParseError("config line " + std::to_string(lineno) + ": unknown section [" +
                         section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail_config::trim(line.substr(0, eq));
    const std::string val = detail_config::trim(line.substr(eq + 1));
    auto unknown = [&]() -> ParseError {
      return ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                        "' in section [" + section + "]");
    };
    if (section == "geometry") {
      if (key == "n") cfg.geometry.n = to_uz(val, key, lineno);
      else if (key == "n_det") cfg.geometry.n_det = to_uz(val, key, lineno);
      else if (key == "n_views") cfg.geometry.n_views = to_uz(val, key, lineno);
      else throw unknown();
    } else if (section == "unet") {
      if (key == "levels") cfg.unet.levels = to_uz(val, key, lineno);
      else if (key == "base_channels") cfg.unet.base_channels = to_uz(val, key, lineno);
      else if (key == "channel_mult") cfg.unet.channel_mult = to_uz(val, key, lineno);
      else if (key == "bn_eps") cfg.unet.bn_eps = to_f64(val, key, lineno);
      else if (key == "a") cfg.unet.a = to_f64(val, key, lineno);
      else if (key == "p") cfg.unet.p = to_f64(val, key, lineno);
      else if (key == "q") cfg.unet.q = to_f64(val, key, lineno);
      else throw unknown();
    } else if (section == "training") {
      if (key == "epochs") cfg.training.epochs = to_uz(val, key, lineno);
      else if (key == "batch") cfg.training.batch = to_uz(val, key, lineno);
      else if (key == "lr") cfg.training.lr = to_f64(val, key, lineno);
      else if (key == "lambda") cfg.training.lambda = to_f64(val, key, lineno);
      else if (key == "noise_max") cfg.training.noise_max = to_f64(val, key, lineno);
      else if (key == "art_rounds") cfg.training.art_rounds = to_uz(val, key, lineno);
      else throw unknown();
    } else if (section == "solver") {
      if (key == "tau") cfg.solver.tau = to_f64(val, key, lineno);
      else if (key == "n_max") cfg.solver.n_max = to_uz(val, key, lineno);
      else if (key == "inner_step") cfg.solver.inner_step = to_f64(val, key, lineno);
      else if (key == "inner_iters") cfg.solver.inner_iters = to_uz(val, key, lineno);
      else if (key == "inner_tol") cfg.solver.inner_tol = to_f64(val, key, lineno);
      else if (key == "cg_tol") cfg.solver.cg_tol = to_f64(val, key, lineno);
      else if (key == "art_rounds") cfg.solver.art_rounds = to_uz(val, key, lineno);
      else throw unknown();
    } else {
      throw ParseError("config line " + std::to_string(lineno) +
                       ": key outside any section");
    }
  }
  return cfg;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config: " + path);
  return parse_config(is);
}

/// Fully resolved config, defaults included; every run logs this next to its
/// outputs so results are reproducible from the artifacts alone.
inline void write_config(std::ostream& os, const AppConfig& c) {
  os << "[geometry]\n"
     << "n = " << c.geometry.n << "\n"
     << "n_det = " << c.geometry.n_det << "\n"
     << "n_views = " << c.geometry.n_views << "\n\n";
  os << "[unet]\n"
     << "levels = " << c.unet.levels << "\n"
     << "base_channels = " << c.unet.base_channels << "\n"
     << "channel_mult = " << c.unet.channel_mult << "\n"
     << "bn_eps = " << c.unet.bn_eps << "\n"
     << "a = " << c.unet.a << "\n"
     << "p = " << c.unet.p << "\n"
     << "q = " << c.unet.q << "\n\n";
  os << "[training]\n"
     << "epochs = " << c.training.epochs << "\n"
     << "batch = " << c.training.batch << "\n"
     << "lr = " << c.training.lr << "\n"
     << "lambda = " << c.training.lambda << "\n"
     << "noise_max = " << c.training.noise_max << "\n"
     << "art_rounds = " << c.training.art_rounds << "\n\n";
  os << "[solver]\n"
     << "tau = " << c.solver.tau << "\n"
     << "n_max = " << c.solver.n_max << "\n"
     << "inner_step = " << c.solver.inner_step << "\n"
     << "inner_iters = " << c.solver.inner_iters << "\n"
     << "inner_tol = " << c.solver.inner_tol << "\n"
     << "cg_tol = " << c.solver.cg_tol << "\n"
     << "art_rounds = " << c.solver.art_rounds << "\n";
}

inline void save_config(const std::string& path, const AppConfig& c) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open for writing: " + path);
  write_config(os, c);
}

}  // namespace inett
