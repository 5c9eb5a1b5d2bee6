#pragma once
// Experiment configuration: "key = value" lines grouped under [section]
// headers, '#' comments; a JSON object of section objects is accepted as
// well. Every key is checked against the schema and every range validated
// before a run starts. Errors name the source line.

#include "fbi/aniso_norm.hpp"
#include "fbi/contact_geometry.hpp"
#include "fbi/partial_fbi.hpp"
#include "fbi/spectra.hpp"
#include "fbi/transfer_ops.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbi {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string value;
  int line = 0;
};

class Config {
 public:
  std::string source = "<config>";
  std::map<std::string, ConfigEntry> entries;  // "section.key"

  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }

  static Config parse_text(const std::string& text, const std::string& source = "<config>") {
    Config c;
    c.source = source;
    std::istringstream is(text);
    std::string line, section;
    int no = 0;
    while (std::getline(is, line)) {
      ++no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']' || line.size() < 3) c.fail(no, "malformed section header '" + line + "'");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) c.fail(no, "expected 'key = value', got '" + line + "'");
      std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
      if (key.empty()) c.fail(no, "empty key");
      if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
      std::string full = section.empty() ? key : section + "." + key;
      if (c.entries.count(full)) c.fail(no, "duplicate key '" + full + "' (first on line " +
                                                std::to_string(c.entries[full].line) + ")");
      c.entries[full] = {val, no};
    }
    return c;
  }

  // Sections are objects; arrays of numbers become space-separated lists.
  static Config parse_json(const std::string& text, const std::string& source = "<config>") {
    Config c;
    c.source = source;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(source + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(source + ": top level must be an object");
    auto scalar = [&](const std::string& key, const nlohmann::json& v) -> std::string {
      if (v.is_string()) return v.get<std::string>();
      if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
      if (v.is_number_integer()) return std::to_string(v.get<long long>());
      if (v.is_number()) {
        std::ostringstream os;
        os.precision(17);
        os << v.get<double>();
        return os.str();
      }
      if (v.is_array()) {
        std::string s;
        for (auto& x : v) {
          if (!x.is_number()) throw ConfigError(source + ": array '" + key + "' must hold numbers");
          std::ostringstream os;
          os.precision(17);
          os << x.get<double>();
          s += (s.empty() ? "" : " ") + os.str();
        }
        return s;
      }
      throw ConfigError(source + ": unsupported value for '" + key + "'");
    };
    for (auto& [k, v] : j.items()) {
      if (v.is_object()) {
        for (auto& [k2, v2] : v.items()) c.entries[k + "." + k2] = {scalar(k + "." + k2, v2), 0};
      } else {
        c.entries[k] = {scalar(k, v), 0};
      }
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path + ": cannot open config file");
    std::stringstream ss;
    ss << is.rdbuf();
    std::string text = ss.str();
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') return parse_json(text, path);
    return parse_text(text, path);
  }

  [[noreturn]] void fail(int line, const std::string& msg) const {
    throw ConfigError(source + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + msg);
  }
  [[noreturn]] void fail_key(const std::string& key, const std::string& msg) const {
    auto it = entries.find(key);
    fail(it == entries.end() ? 0 : it->second.line, key + ": " + msg);
  }

  bool has(const std::string& key) const { return entries.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& def) const {
    used_.insert(key);
    auto it = entries.find(key);
    return it == entries.end() ? def : it->second.value;
  }
  double get_double(const std::string& key, double def) const {
    used_.insert(key);
    auto it = entries.find(key);
    if (it == entries.end()) return def;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail_key(key, "expects a number, got '" + it->second.value + "'");
    }
  }
  long long get_int(const std::string& key, long long def) const {
    used_.insert(key);
    auto it = entries.find(key);
    if (it == entries.end()) return def;
    try {
      std::size_t pos = 0;
      long long v = std::stoll(it->second.value, &pos);
      if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail_key(key, "expects an integer, got '" + it->second.value + "'");
    }
  }
  bool get_bool(const std::string& key, bool def) const {
    std::string s = get_string(key, def ? "true" : "false");
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    fail_key(key, "expects true or false, got '" + s + "'");
  }
  std::vector<double> get_list(const std::string& key, const std::vector<double>& def) const {
    used_.insert(key);
    auto it = entries.find(key);
    if (it == entries.end()) return def;
    std::string s = it->second.value;
    for (auto& ch : s)
      if (ch == ',') ch = ' ';
    std::istringstream is(s);
    std::vector<double> out;
    std::string tok;
    while (is >> tok) {
      try {
        std::size_t pos = 0;
        out.push_back(std::stod(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail_key(key, "expects a list of numbers, bad entry '" + tok + "'");
      }
    }
    if (out.empty()) fail_key(key, "list is empty");
    return out;
  }

  // Keys present in the file that no getter asked for.
  void reject_unknown() const {
    for (auto& [k, e] : entries)
      if (!used_.count(k)) fail(e.line, "unknown key '" + k + "'");
  }

 private:
  mutable std::set<std::string> used_;
};

struct GridConfig {
  int d = 1;
  double L0 = kPi;
  int n0 = 2;
  double trans_half_width = 3.0;
  int trans_n = 48;
  double x_half_width = 2.4, xi_half_width = 2.4;
  int x_n = 6, xi_n = 6;
};

struct IdentityConfig {
  int dim = 1;
  double space_half_width = 8, x_half_width = 14;
  int space_n = 64, x_n = 56;
  double tolerance = 1e-6;
  bool partial = true;
  double partial_half_width = 5;
  int partial_n = 24, partial_n0 = 8;
};

struct NormConfig {
  std::vector<double> lambdas{4, 8, 16, 32}, s_values{1, 16, 256}, unit_lambdas{4, 8, 16};
  double half_width = 8;
  int n = 40;
  double slope_tolerance = 0.15;
};

struct SpectrumConfig {
  double margin = 0.1;
  double inside_fraction = 0.95;
};

struct LowerConfig {
  double m = 4;  // window sharpness of the test family
  std::vector<double> frequencies{8, 16, 32};
  double gram_tolerance = 0.1;
};

struct CentralConfig {
  std::vector<double> ks{6, 8, 12};
  double in_x_half_width = 0.8, in_xi_half_width = 2.1, out_x_half_width = 3.6, out_xi_half_width = 6.4;
  int in_x_n = 4, in_xi_n = 6, out_x_n = 6, out_xi_n = 8;
  double y_half_width = 5;
  int y_n = 32;
};

struct LiftConfig {
  double rho = 2;
  int kernel_samples = 24;
  double decay_orders = 3;
  int decay_window = 50;
};

struct ExperimentConfig {
  std::string tag = "experiment";
  std::string output;
  std::uint64_t seed = 1;
  GridConfig grid, fine;
  GridConfig lower_grid{.n0 = 96, .trans_half_width = 2.0, .trans_n = 40, .x_half_width = 3.0, .xi_half_width = 3.0, .x_n = 12, .xi_n = 12};
  WeightSpec weight;
  std::string map_family = "linear";
  double lambda = 4, epsilon = 0, box = 3, f_base = 0;
  std::vector<double> matrix;
  std::string amplitude = "bump";
  double height = 1, radius = 0.75;
  IdentityConfig identity;
  NormConfig norm;
  SpectrumConfig spectrum;
  LowerConfig lower;
  CentralConfig central;
  LiftConfig lift;

  ContactMap make_map() const {
    if (map_family == "linear") {
      RMat B;
      if (matrix.empty()) {
        B = hyperbolic_diag(grid.d, lambda);
      } else {
        B.resize(2 * grid.d, 2 * grid.d);
        for (int i = 0; i < 2 * grid.d; ++i)
          for (int j = 0; j < 2 * grid.d; ++j) B(i, j) = matrix[i * 2 * grid.d + j];
      }
      return make_linear_contact(B, box, f_base);
    }
    return make_shear_contact(grid.d, lambda, epsilon, box, f_base);
  }
  Amplitude make_amplitude() const {
    if (amplitude == "zero") return amplitude_zero();
    if (amplitude == "constant") {
      std::vector<std::function<double(double)>> prof(2 * grid.d, [](double) { return 1.0; });
      return make_separable_amplitude(height, prof, std::numeric_limits<double>::infinity(), "constant");
    }
    return amplitude_bump(grid.d, height, radius);
  }
  TransferSpec make_transfer() const { return {make_map(), make_amplitude()}; }

  static PartialGrid partial_grid(const GridConfig& g) {
    auto sp = make_partial_space(g.d, g.L0, g.n0, g.trans_half_width, g.trans_n);
    return make_partial_grid_scaled(sp, make_phase_grid(make_grid(2 * g.d, g.x_half_width, g.x_n),
                                                        make_grid(2 * g.d, g.xi_half_width, g.xi_n)));
  }
};

namespace detail {
inline void read_grid(const Config& c, const std::string& sec, GridConfig& g, const GridConfig& def) {
  auto key = [&](const char* k) { return sec + "." + k; };
  g.d = static_cast<int>(c.get_int(key("d"), def.d));
  g.L0 = c.get_double(key("L0"), def.L0);
  g.n0 = static_cast<int>(c.get_int(key("n0"), def.n0));
  g.trans_half_width = c.get_double(key("trans_half_width"), def.trans_half_width);
  g.trans_n = static_cast<int>(c.get_int(key("trans_n"), def.trans_n));
  g.x_half_width = c.get_double(key("x_half_width"), def.x_half_width);
  g.x_n = static_cast<int>(c.get_int(key("x_n"), def.x_n));
  g.xi_half_width = c.get_double(key("xi_half_width"), def.xi_half_width);
  g.xi_n = static_cast<int>(c.get_int(key("xi_n"), def.xi_n));
  if (g.d < 1) c.fail_key(key("d"), "must be >= 1");
  if (!(g.L0 > 0)) c.fail_key(key("L0"), "must be positive");
  if (g.n0 < 2 || g.n0 % 2) c.fail_key(key("n0"), "must be even and >= 2");
  for (auto [k, v] : {std::pair{"trans_half_width", g.trans_half_width}, {"x_half_width", g.x_half_width},
                      {"xi_half_width", g.xi_half_width}})
    if (!(v > 0)) c.fail_key(key(k), "must be positive");
  for (auto [k, v] : {std::pair{"trans_n", g.trans_n}, {"x_n", g.x_n}, {"xi_n", g.xi_n}})
    if (v < 4 || v % 2) c.fail_key(key(k), "must be even and >= 4");
}

inline void positive(const Config& c, const std::string& key, double v) {
  if (!(v > 0)) c.fail_key(key, "must be positive");
}
}  // namespace detail

inline ExperimentConfig parse_experiment(const Config& c) {
  ExperimentConfig e;
  e.tag = c.get_string("experiment.tag", e.tag);
  e.output = c.get_string("experiment.output", "");
  {
    long long s = c.get_int("experiment.seed", 1);
    if (s < 0) c.fail_key("experiment.seed", "must be non-negative");
    e.seed = static_cast<std::uint64_t>(s);
  }
  detail::read_grid(c, "grid", e.grid, GridConfig{});
  GridConfig fine_def = e.grid;
  fine_def.x_half_width *= 7.0 / 6.0;
  fine_def.x_n = e.grid.x_n + 2;
  detail::read_grid(c, "refine", e.fine, fine_def);
  if (e.fine.d != e.grid.d || e.fine.L0 != e.grid.L0 || e.fine.n0 != e.grid.n0)
    c.fail_key("refine.d", "the refined grid must keep d, L0 and n0");

  const int d = e.grid.d;
  double r = c.get_double("weight.r", 4);
  if (!(r >= 0)) c.fail_key("weight.r", "must be non-negative");
  e.weight = make_weight_spec(d, r, c.get_double("weight.N", 32), c.get_double("weight.delta", 0.1));
  e.weight.tau = c.get_double("weight.tau", e.weight.tau);
  std::string chi_name = c.get_string("weight.chi", "exp-mollifier");
  if (chi_name != "exp-mollifier") c.fail_key("weight.chi", "only 'exp-mollifier' is implemented");
  try {
    e.weight.validate();
  } catch (const std::invalid_argument& ex) {
    c.fail_key("weight.r", ex.what());
  }

  e.map_family = c.get_string("map.family", "linear");
  if (e.map_family != "linear" && e.map_family != "shear")
    c.fail_key("map.family", "must be 'linear' or 'shear', got '" + e.map_family + "'");
  e.lambda = c.get_double("map.lambda", 4);
  e.epsilon = c.get_double("map.epsilon", 0);
  e.box = c.get_double("map.box", 3);
  e.f_base = c.get_double("map.f_base", 0);
  if (c.has("map.matrix")) {
    e.matrix = c.get_list("map.matrix", {});
    if (static_cast<int>(e.matrix.size()) != 4 * d * d)
      c.fail_key("map.matrix", "needs (2d)^2 = " + std::to_string(4 * d * d) + " entries");
  }
  detail::positive(c, "map.lambda", e.lambda);
  detail::positive(c, "map.box", e.box);

  e.amplitude = c.get_string("amplitude.kind", "bump");
  if (e.amplitude != "bump" && e.amplitude != "constant" && e.amplitude != "zero")
    c.fail_key("amplitude.kind", "must be bump, constant or zero");
  e.height = c.get_double("amplitude.height", 1);
  e.radius = c.get_double("amplitude.radius", 0.75);
  detail::positive(c, "amplitude.radius", e.radius);
  if (e.amplitude == "bump" && e.radius > e.box) c.fail_key("amplitude.radius", "support must fit in map.box");

  auto& id = e.identity;
  id.dim = static_cast<int>(c.get_int("identity.dim", id.dim));
  if (id.dim != 1 && id.dim != 2) c.fail_key("identity.dim", "must be 1 or 2");
  id.space_half_width = c.get_double("identity.space_half_width", id.space_half_width);
  id.space_n = static_cast<int>(c.get_int("identity.space_n", id.space_n));
  id.x_half_width = c.get_double("identity.x_half_width", id.x_half_width);
  id.x_n = static_cast<int>(c.get_int("identity.x_n", id.x_n));
  id.tolerance = c.get_double("identity.tolerance", id.tolerance);
  id.partial = c.get_bool("identity.partial", id.partial);
  id.partial_half_width = c.get_double("identity.partial_half_width", id.partial_half_width);
  id.partial_n = static_cast<int>(c.get_int("identity.partial_n", id.partial_n));
  id.partial_n0 = static_cast<int>(c.get_int("identity.partial_n0", id.partial_n0));
  for (auto [k, v] : {std::pair{"identity.space_n", id.space_n}, {"identity.x_n", id.x_n},
                      {"identity.partial_n", id.partial_n}, {"identity.partial_n0", id.partial_n0}})
    if (v < 4 || v % 2) c.fail_key(k, "must be even and >= 4");
  detail::positive(c, "identity.space_half_width", id.space_half_width);
  detail::positive(c, "identity.x_half_width", id.x_half_width);
  detail::positive(c, "identity.tolerance", id.tolerance);

  auto& nm = e.norm;
  nm.lambdas = c.get_list("norm.lambdas", nm.lambdas);
  nm.s_values = c.get_list("norm.s", nm.s_values);
  nm.unit_lambdas = c.get_list("norm.unit_lambdas", nm.unit_lambdas);
  nm.half_width = c.get_double("norm.half_width", nm.half_width);
  nm.n = static_cast<int>(c.get_int("norm.n", nm.n));
  nm.slope_tolerance = c.get_double("norm.slope_tolerance", nm.slope_tolerance);
  for (double l : nm.unit_lambdas)
    if (!(l > 1)) c.fail_key("norm.unit_lambdas", "expansion factors must exceed 1");
  for (double l : nm.lambdas)
    if (!(l > 1)) c.fail_key("norm.lambdas", "expansion factors must exceed 1");
  for (double s : nm.s_values)
    if (!(s >= 1)) c.fail_key("norm.s", "scales must be >= 1");
  if (nm.n < 4 || nm.n % 2) c.fail_key("norm.n", "must be even and >= 4");
  if (std::pow(static_cast<double>(nm.n), 4 * d) > 4e8) c.fail_key("norm.n", "model grid too large for a dense kernel");

  e.spectrum.margin = c.get_double("spectrum.margin", e.spectrum.margin);
  e.spectrum.inside_fraction = c.get_double("spectrum.inside_fraction", e.spectrum.inside_fraction);
  if (!(e.spectrum.margin >= 0)) c.fail_key("spectrum.margin", "must be non-negative");
  if (!(e.spectrum.inside_fraction >= 0 && e.spectrum.inside_fraction <= 1))
    c.fail_key("spectrum.inside_fraction", "must lie in [0, 1]");

  e.lower.m = c.get_double("lower.m", e.lower.m);
  e.lower.frequencies = c.get_list("lower.frequencies", e.lower.frequencies);
  e.lower.gram_tolerance = c.get_double("lower.gram_tolerance", e.lower.gram_tolerance);
  detail::positive(c, "lower.m", e.lower.m);
  for (double f : e.lower.frequencies)
    if (!(f > 0)) c.fail_key("lower.frequencies", "frequencies must be positive");
  {
    GridConfig def = e.lower_grid;
    def.d = e.grid.d;
    detail::read_grid(c, "lower", e.lower_grid, def);
    if (e.lower_grid.d != e.grid.d) c.fail_key("lower.d", "must equal grid.d");
  }

  auto& ce = e.central;
  ce.ks = c.get_list("central.ks", ce.ks);
  for (double k : ce.ks)
    if (k < 1 || k != std::floor(k)) c.fail_key("central.ks", "slab indices must be positive integers");
  ce.in_x_half_width = c.get_double("central.in_x_half_width", ce.in_x_half_width);
  ce.in_x_n = static_cast<int>(c.get_int("central.in_x_n", ce.in_x_n));
  ce.in_xi_half_width = c.get_double("central.in_xi_half_width", ce.in_xi_half_width);
  ce.in_xi_n = static_cast<int>(c.get_int("central.in_xi_n", ce.in_xi_n));
  ce.out_x_half_width = c.get_double("central.out_x_half_width", ce.out_x_half_width);
  ce.out_x_n = static_cast<int>(c.get_int("central.out_x_n", ce.out_x_n));
  ce.out_xi_half_width = c.get_double("central.out_xi_half_width", ce.out_xi_half_width);
  ce.out_xi_n = static_cast<int>(c.get_int("central.out_xi_n", ce.out_xi_n));
  ce.y_half_width = c.get_double("central.y_half_width", ce.y_half_width);
  ce.y_n = static_cast<int>(c.get_int("central.y_n", ce.y_n));
  for (auto [k, v] : {std::pair{"central.in_x_n", ce.in_x_n}, {"central.in_xi_n", ce.in_xi_n},
                      {"central.out_x_n", ce.out_x_n}, {"central.out_xi_n", ce.out_xi_n}, {"central.y_n", ce.y_n}})
    if (v < 4 || v % 2) c.fail_key(k, "must be even and >= 4");

  e.lift.rho = c.get_double("lift.rho", e.lift.rho);
  e.lift.kernel_samples = static_cast<int>(c.get_int("lift.kernel_samples", e.lift.kernel_samples));
  e.lift.decay_orders = c.get_double("lift.decay_orders", e.lift.decay_orders);
  e.lift.decay_window = static_cast<int>(c.get_int("lift.decay_window", e.lift.decay_window));
  detail::positive(c, "lift.rho", e.lift.rho);
  if (e.lift.decay_window < 2) c.fail_key("lift.decay_window", "must be >= 2");

  c.reject_unknown();

  // cross-section checks that need the assembled objects
  try {
    e.make_map();
  } catch (const std::exception& ex) {
    c.fail_key(c.has("map.matrix") ? "map.matrix" : "map.family", ex.what());
  }
  for (auto [sec, g] : {std::pair{"grid", &e.grid}, {"refine", &e.fine}, {"lower", &e.lower_grid}}) {
    try {
      ExperimentConfig::partial_grid(*g);
    } catch (const std::exception& ex) {
      c.fail_key(std::string(sec) + ".xi_half_width", ex.what());
    }
  }
  try {
    auto sp = make_partial_space(d, e.grid.L0, e.grid.n0, e.grid.trans_half_width, e.grid.trans_n);
    validate_support(e.make_transfer(), sp);
  } catch (const std::exception& ex) {
    c.fail_key("amplitude.radius", ex.what());
  }
  return e;
}

inline ExperimentConfig load_experiment(const std::string& path) { return parse_experiment(Config::load(path)); }

}  // namespace fbi
