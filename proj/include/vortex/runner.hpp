#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vortex/chaos.hpp"
#include "vortex/deviation.hpp"
#include "vortex/fluctuation.hpp"
#include "vortex/io.hpp"
#include "vortex/meanfield.hpp"
#include "vortex/particle.hpp"
#include "vortex/regularity.hpp"

namespace vortex {

// ---------------------------------------------------------------------------
// Configuration

/// Bad configuration: names the offending key and, when known, the line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message, std::size_t line = 0, const std::string& source = "")
      : std::runtime_error(format(key, message, line, source)), key_(std::move(key)), line_(line) {}

  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }

 private:
  static std::string format(const std::string& key, const std::string& message, std::size_t line,
                            const std::string& source) {
    std::string out;
    if (!source.empty()) out += source + ":";
    if (line > 0) out += std::to_string(line) + ":";
    if (!out.empty()) out += " ";
    if (!key.empty()) out += key + ": ";
    return out + message;
  }

  std::string key_;
  std::size_t line_ = 0;
};

enum class Experiment { pde_validation, chaos_rate, regularity_suite, large_deviation, fluctuation };

inline const char* to_string(Experiment e) {
  switch (e) {
    case Experiment::pde_validation: return "pde_validation";
    case Experiment::chaos_rate: return "chaos_rate";
    case Experiment::regularity_suite: return "regularity_suite";
    case Experiment::large_deviation: return "large_deviation";
    case Experiment::fluctuation: return "fluctuation";
  }
  return "?";
}

inline std::optional<Experiment> experiment_from_string(std::string_view s) {
  for (auto e : {Experiment::pde_validation, Experiment::chaos_rate, Experiment::regularity_suite,
                 Experiment::large_deviation, Experiment::fluctuation})
    if (s == to_string(e)) return e;
  return std::nullopt;
}

/// Named initial densities; "mixture2" and "mixture3" are the asymmetric presets.
inline InitialDensity initial_preset(const std::string& name, double t0) {
  if (name == "lamb_oseen") return InitialDensity{LambOseenInit{t0}};
  if (name == "mixture2")
    return InitialDensity{GaussianMixtureInit{{{0.6, {-0.8, 0.2}, 0.5, 0.1, 0.4}, {0.4, {1.0, -0.4}, 0.3, 0.0, 0.6}}}};
  if (name == "mixture3")
    return InitialDensity{GaussianMixtureInit{{{0.5, {-1.0, 0.3}, 0.6, 0.2, 0.4},
                                               {0.3, {1.2, -0.5}, 0.3, 0.0, 0.5},
                                               {0.2, {0.2, 1.4}, 0.5, -0.1, 0.25}}}};
  throw std::invalid_argument("unknown initial density '" + name + "'");
}

/// Everything a run needs. Particle experiments stop at times.back(); run r
/// uses seed ensemble.base_seed + r.
struct ExperimentConfig {
  std::optional<Experiment> experiment;
  std::string init = "lamb_oseen";
  double init_t0 = 0.25;
  SimConfig sim{};
  GridGeometry pde_grid{12.0, 256};
  double pde_dt = 1e-3;
  double pde_t_end = 1.0;
  std::size_t pde_snapshot_every = 10;
  std::size_t n_runs = 64;
  std::uint64_t base_seed = 0;
  std::vector<std::size_t> n_list{128, 512, 2048, 8192};
  std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
  std::string output_dir = "out";
  EstimatorConfig estimator{EstimatorKind::kde, 0.2, GridGeometry{8.0, 128}, 1000};
  std::size_t jackknife_groups = 8;
  SuiteOptions suite{};
  double probe_time = -1.0;  ///< negative: t' = 1 for Lamb-Oseen, none otherwise
  double ldp_c2_prime = 1.72;
  double ldp_eta = 0.5;
  double ldp_entropy = 0.0;
  std::size_t ldp_stride = 16;
  int ldp_p_max = 64;
  std::size_t ldp_gamma_stride = 1;
  int fluct_max_degree = 4;
  std::size_t fluct_replicas = 2000;
  double fluct_dt = 0.025;
  GridGeometry fluct_grid{8.0, 64};

  ExperimentConfig() { sim.dt = 0.01; }

  InitialDensity initial_density() const { return initial_preset(init, init_t0); }
  bool lamb_oseen_init() const { return init == "lamb_oseen"; }

  void validate() const;
  void validate_for(Experiment e) const;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_scalar(const std::string& s) {
  T v{};
  if constexpr (std::is_same_v<T, std::string>) {
    if (s.empty()) throw std::invalid_argument("empty value");
    return s;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw std::invalid_argument("expected true or false, got '" + s + "'");
  } else {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
      throw std::invalid_argument("cannot parse '" + s + "' as a number");
    return v;
  }
}

template <class T>
std::string format_scalar(const T& v) {
  if constexpr (std::is_same_v<T, std::string>)
    return v;
  else if constexpr (std::is_same_v<T, bool>)
    return v ? "true" : "false";
  else if constexpr (std::is_floating_point_v<T>)
    return format_double(v);
  else
    return std::to_string(v);
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::size_t start = 0;
  if (trim(s).empty()) return out;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(parse_scalar<T>(trim(std::string_view(s).substr(start, comma - start))));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
std::string format_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_scalar(v[i]);
  return out;
}

struct FieldSpec {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T, class Ref>
FieldSpec scalar_field(std::string key, Ref ref) {
  return {std::move(key), [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_scalar<T>(v); },
          [ref](const ExperimentConfig& c) { return format_scalar<T>(ref(c)); }};
}

template <class T, class Ref>
FieldSpec list_field(std::string key, Ref ref) {
  return {std::move(key), [ref](ExperimentConfig& c, const std::string& v) { ref(c) = parse_list<T>(v); },
          [ref](const ExperimentConfig& c) { return format_list<T>(ref(c)); }};
}

// Every accepted key, in echo order.
inline const std::vector<FieldSpec>& field_table() {
  static const std::vector<FieldSpec> table = [] {
    std::vector<FieldSpec> t;
    t.push_back({"experiment",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.experiment = experiment_from_string(v);
                   if (!c.experiment) throw std::invalid_argument("unknown experiment '" + v + "'");
                 },
                 [](const ExperimentConfig& c) { return c.experiment ? std::string(to_string(*c.experiment)) : ""; }});
    t.push_back(scalar_field<std::string>("init", [](auto& c) -> auto& { return c.init; }));
    t.push_back(scalar_field<double>("init.t0", [](auto& c) -> auto& { return c.init_t0; }));
    t.push_back(scalar_field<std::size_t>("sim.n_particles", [](auto& c) -> auto& { return c.sim.n_particles; }));
    t.push_back(scalar_field<double>("sim.sigma", [](auto& c) -> auto& { return c.sim.sigma; }));
    t.push_back(scalar_field<double>("sim.dt", [](auto& c) -> auto& { return c.sim.dt; }));
    t.push_back(scalar_field<double>("sim.epsilon", [](auto& c) -> auto& { return c.sim.kernel.epsilon; }));
    t.push_back({"sim.drift",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "direct")
                     c.sim.drift_method = DriftMethod::direct;
                   else if (v == "treecode")
                     c.sim.drift_method = DriftMethod::treecode;
                   else
                     throw std::invalid_argument("expected direct or treecode, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.sim.drift_method == DriftMethod::direct ? "direct" : "treecode");
                 }});
    t.push_back(scalar_field<double>("sim.theta", [](auto& c) -> auto& { return c.sim.treecode.theta; }));
    t.push_back(scalar_field<std::size_t>("sim.order", [](auto& c) -> auto& { return c.sim.treecode.order; }));
    t.push_back(scalar_field<std::size_t>("sim.leaf_size", [](auto& c) -> auto& { return c.sim.treecode.leaf_size; }));
    t.push_back(scalar_field<double>("pde.half_width", [](auto& c) -> auto& { return c.pde_grid.half_width; }));
    t.push_back(scalar_field<std::size_t>("pde.n", [](auto& c) -> auto& { return c.pde_grid.n; }));
    t.push_back(scalar_field<double>("pde.dt", [](auto& c) -> auto& { return c.pde_dt; }));
    t.push_back(scalar_field<double>("pde.t_end", [](auto& c) -> auto& { return c.pde_t_end; }));
    t.push_back(scalar_field<std::size_t>("pde.snapshot_every", [](auto& c) -> auto& { return c.pde_snapshot_every; }));
    t.push_back(scalar_field<std::size_t>("ensemble.n_runs", [](auto& c) -> auto& { return c.n_runs; }));
    t.push_back(scalar_field<std::uint64_t>("ensemble.base_seed", [](auto& c) -> auto& { return c.base_seed; }));
    t.push_back(list_field<std::size_t>("N_list", [](auto& c) -> auto& { return c.n_list; }));
    t.push_back(list_field<double>("times", [](auto& c) -> auto& { return c.times; }));
    t.push_back(scalar_field<std::string>("output_dir", [](auto& c) -> auto& { return c.output_dir; }));
    t.push_back({"estimator.kind",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "kde")
                     c.estimator.kind = EstimatorKind::kde;
                   else if (v == "histogram")
                     c.estimator.kind = EstimatorKind::histogram;
                   else
                     throw std::invalid_argument("expected kde or histogram, got '" + v + "'");
                 },
                 [](const ExperimentConfig& c) { return std::string(to_string(c.estimator.kind)); }});
    t.push_back(scalar_field<double>("estimator.bandwidth", [](auto& c) -> auto& { return c.estimator.bandwidth; }));
    t.push_back(scalar_field<double>("estimator.half_width", [](auto& c) -> auto& { return c.estimator.grid.half_width; }));
    t.push_back(scalar_field<std::size_t>("estimator.n", [](auto& c) -> auto& { return c.estimator.grid.n; }));
    t.push_back(scalar_field<std::size_t>("estimator.groups", [](auto& c) -> auto& { return c.jackknife_groups; }));
    t.push_back(scalar_field<std::size_t>("regularity.harnack_samples", [](auto& c) -> auto& { return c.suite.harnack_samples; }));
    t.push_back(scalar_field<double>("regularity.harnack_radius", [](auto& c) -> auto& { return c.suite.harnack_radius; }));
    t.push_back(scalar_field<std::uint64_t>("regularity.harnack_seed", [](auto& c) -> auto& { return c.suite.harnack_seed; }));
    t.push_back(scalar_field<double>("regularity.probe_time", [](auto& c) -> auto& { return c.probe_time; }));
    t.push_back(scalar_field<double>("ldp.c2_prime", [](auto& c) -> auto& { return c.ldp_c2_prime; }));
    t.push_back(scalar_field<double>("ldp.eta", [](auto& c) -> auto& { return c.ldp_eta; }));
    t.push_back(scalar_field<double>("ldp.entropy", [](auto& c) -> auto& { return c.ldp_entropy; }));
    t.push_back(scalar_field<std::size_t>("ldp.stride", [](auto& c) -> auto& { return c.ldp_stride; }));
    t.push_back(scalar_field<int>("ldp.p_max", [](auto& c) -> auto& { return c.ldp_p_max; }));
    t.push_back(scalar_field<std::size_t>("ldp.gamma_stride", [](auto& c) -> auto& { return c.ldp_gamma_stride; }));
    t.push_back(scalar_field<int>("fluct.max_degree", [](auto& c) -> auto& { return c.fluct_max_degree; }));
    t.push_back(scalar_field<std::size_t>("fluct.replicas", [](auto& c) -> auto& { return c.fluct_replicas; }));
    t.push_back(scalar_field<double>("fluct.dt", [](auto& c) -> auto& { return c.fluct_dt; }));
    t.push_back(scalar_field<double>("fluct.half_width", [](auto& c) -> auto& { return c.fluct_grid.half_width; }));
    t.push_back(scalar_field<std::size_t>("fluct.n", [](auto& c) -> auto& { return c.fluct_grid.n; }));
    return t;
  }();
  return table;
}

inline bool is_multiple(double t, double dt) {
  const double r = t / dt;
  return std::abs(r - std::round(r)) <= 1e-9 * std::max(1.0, r);
}

inline void require(bool ok, const char* key, const std::string& message) {
  if (!ok) throw ConfigError(key, message);
}

inline void require_grid(const GridGeometry& g, const char* key) {
  require(g.half_width > 0.0 && std::isfinite(g.half_width), key, "half_width must be positive");
  require(g.n >= 16 && (g.n & (g.n - 1)) == 0, key, "n must be a power of two >= 16");
}

inline void require_times_on(const std::vector<double>& times, double dt, const char* dt_key) {
  for (double t : times)
    require(is_multiple(t, dt), "times", "time " + format_double(t) + " is not a multiple of " + dt_key);
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  using detail::require;
  try {
    initial_preset(init, 1.0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("init", e.what());
  }
  require(init_t0 > 0.0, "init.t0", "must be positive");
  require(sim.n_particles >= 1, "sim.n_particles", "must be >= 1");
  require(sim.sigma > 0.0, "sim.sigma", "must be positive");
  require(sim.dt > 0.0, "sim.dt", "must be positive");
  require(sim.kernel.epsilon >= 0.0 && std::isfinite(sim.kernel.epsilon), "sim.epsilon", "must be finite and >= 0");
  require(sim.treecode.theta > 0.0 && sim.treecode.theta < 1.0, "sim.theta", "must lie in (0, 1)");
  require(sim.treecode.order >= 1, "sim.order", "must be >= 1");
  require(sim.treecode.leaf_size >= 1, "sim.leaf_size", "must be >= 1");
  detail::require_grid(pde_grid, "pde.n");
  require(pde_dt > 0.0, "pde.dt", "must be positive");
  require(pde_t_end >= 0.0, "pde.t_end", "must be nonnegative");
  require(detail::is_multiple(pde_t_end, pde_dt), "pde.t_end", "must be a multiple of pde.dt");
  require(pde_snapshot_every >= 1, "pde.snapshot_every", "must be >= 1");
  require(n_runs >= 1, "ensemble.n_runs", "must be >= 1");
  require(!n_list.empty(), "N_list", "must not be empty");
  for (std::size_t i = 0; i < n_list.size(); ++i) {
    require(n_list[i] >= 1, "N_list", "entries must be >= 1");
    require(i == 0 || n_list[i] > n_list[i - 1], "N_list", "must be strictly increasing");
  }
  require(!times.empty(), "times", "must not be empty");
  for (std::size_t i = 0; i < times.size(); ++i) {
    require(times[i] >= 0.0 && std::isfinite(times[i]), "times", "entries must be finite and >= 0");
    require(i == 0 || times[i] > times[i - 1], "times", "must be strictly increasing");
  }
  require(!output_dir.empty(), "output_dir", "must not be empty");
  require(estimator.bandwidth >= 0.0, "estimator.bandwidth", "must be >= 0");
  detail::require_grid(estimator.grid, "estimator.n");
  require(jackknife_groups >= 2, "estimator.groups", "must be >= 2");
  require(suite.harnack_samples >= 1, "regularity.harnack_samples", "must be >= 1");
  require(suite.harnack_radius >= 2.0, "regularity.harnack_radius", "must be >= 2");
  require(ldp_c2_prime > 0.0, "ldp.c2_prime", "must be positive");
  require(ldp_eta > 0.0, "ldp.eta", "must be positive");
  require(ldp_entropy >= 0.0, "ldp.entropy", "must be >= 0");
  require(ldp_stride >= 1, "ldp.stride", "must be >= 1");
  require(ldp_p_max >= 8, "ldp.p_max", "must be >= 8");
  require(ldp_gamma_stride >= 1, "ldp.gamma_stride", "must be >= 1");
  require(fluct_max_degree >= 0 && fluct_max_degree <= 8, "fluct.max_degree", "must lie in [0, 8]");
  require(fluct_replicas >= 4, "fluct.replicas", "must be >= 4");
  require(fluct_dt > 0.0, "fluct.dt", "must be positive");
  detail::require_grid(fluct_grid, "fluct.n");
}

inline void ExperimentConfig::validate_for(Experiment e) const {
  using detail::require;
  validate();
  switch (e) {
    case Experiment::pde_validation:
      require(lamb_oseen_init(), "init", "pde_validation needs init = lamb_oseen");
      require(times.back() <= pde_t_end + 1e-12, "times", "must not exceed pde.t_end");
      detail::require_times_on(times, pde_dt, "pde.dt");
      break;
    case Experiment::chaos_rate:
      require(times.back() > 0.0, "times", "the last time must be positive");
      detail::require_times_on(times, sim.dt, "sim.dt");
      if (!lamb_oseen_init()) detail::require_times_on(times, pde_dt, "pde.dt");
      require(n_runs >= 2, "ensemble.n_runs", "chaos_rate needs at least 2 runs");
      require(n_list.size() >= 3, "N_list", "chaos_rate needs at least 3 entries for the fit");
      break;
    case Experiment::regularity_suite:
      require(pde_t_end >= 2.0 * pde_dt * static_cast<double>(pde_snapshot_every), "pde.t_end",
              "must cover at least 3 snapshots");
      break;
    case Experiment::large_deviation:
      detail::require_times_on(times, sim.dt, "sim.dt");
      detail::require_times_on(times, pde_dt, "pde.dt");
      break;
    case Experiment::fluctuation:
      require(n_runs >= 4, "ensemble.n_runs", "fluctuation needs at least 4 runs");
      detail::require_times_on(times, sim.dt, "sim.dt");
      detail::require_times_on(times, pde_dt, "pde.dt");
      detail::require_times_on(times, fluct_dt, "fluct.dt");
      break;
  }
}

/// Parses `key = value` lines; `#` starts a comment; lists are comma separated.
/// Unknown and repeated keys are errors; invariants are checked after parsing.
inline ExperimentConfig parse_config_text(std::string_view text, const std::string& source = "<config>") {
  ExperimentConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("", "expected 'key = value'", line_no, source);
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError("", "missing key before '='", line_no, source);
    const auto& table = detail::field_table();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError(key, "unknown key", line_no, source);
    if (const auto prev = seen.find(key); prev != seen.end())
      throw ConfigError(key, "repeated key (first set on line " + std::to_string(prev->second) + ")", line_no, source);
    seen[key] = line_no;
    try {
      it->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key, e.what(), line_no, source);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    const auto where = seen.find(e.key());
    throw ConfigError(e.key(), std::string(e.what()).substr(e.key().size() + 2),
                      where == seen.end() ? 0 : where->second, source);
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file", 0, path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path.string());
}

/// Resolved configuration as ordered (key, value) pairs; output_dir is left
/// out so that the same run written to two places echoes identically.
inline std::vector<std::pair<std::string, std::string>> config_echo(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : detail::field_table())
    if (f.key != "output_dir") out.emplace_back(f.key, f.get(cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 init failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Plot-ready CSV; doubles are written with 17 significant digits.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  CsvTable& row() {
    rows_.emplace_back();
    return *this;
  }
  CsvTable& operator<<(double v) { return cell(detail::format_double(v)); }
  CsvTable& operator<<(std::size_t v) { return cell(std::to_string(v)); }
  CsvTable& operator<<(int v) { return cell(std::to_string(v)); }
  CsvTable& operator<<(const std::string& v) { return cell(v); }
  CsvTable& operator<<(const char* v) { return cell(v); }

  std::size_t rows() const { return rows_.size(); }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << join(header_) << '\n';
    for (const auto& r : rows_) {
      if (r.size() != header_.size()) throw std::logic_error("csv row width differs from header in " + path.string());
      out << join(r) << '\n';
    }
  }

 private:
  CsvTable& cell(std::string s) {
    rows_.back().push_back(std::move(s));
    return *this;
  }
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Named pass/fail comparison against a closed interval.
struct Check {
  std::string name;
  double value = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool passed = false;
};

inline Check make_check(std::string name, double value, double lower, double upper) {
  return {std::move(name), value, lower, upper, std::isfinite(value) && value >= lower && value <= upper};
}
inline Check check_at_most(std::string name, double value, double upper) {
  return make_check(std::move(name), value, -std::numeric_limits<double>::infinity(), upper);
}
inline Check check_at_least(std::string name, double value, double lower) {
  return make_check(std::move(name), value, lower, std::numeric_limits<double>::infinity());
}

inline nlohmann::json to_json(const Check& c) {
  nlohmann::json j{{"name", c.name}, {"value", c.value}, {"passed", c.passed}};
  if (std::isfinite(c.lower)) j["lower"] = c.lower;
  if (std::isfinite(c.upper)) j["upper"] = c.upper;
  return j;
}

/// Files written under one output directory, relative paths in write order.
class ArtifactSink {
 public:
  explicit ArtifactSink(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path claim(const std::string& relative) {
    const auto p = root_ / relative;
    std::filesystem::create_directories(p.parent_path());
    files_.push_back(relative);
    return p;
  }
  void csv(const std::string& name, const CsvTable& t) { t.write(claim(name)); }
  void json(const std::string& name, const nlohmann::json& j) {
    std::ofstream out(claim(name), std::ios::binary);
    out << j.dump(2) << '\n';
  }
  void density(const std::string& name, const DensityGrid& rho) { write_density(claim(name).string(), rho); }
  void particles(const std::string& name, const ParticleEnsemble& e) { write_particles(claim(name).string(), e); }

  /// Manifest of every file written so far (itself excluded), sorted by path.
  void manifest(const std::string& subcommand, const ExperimentConfig& cfg) {
    nlohmann::json files = nlohmann::json::array();
    auto sorted = files_;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& f : sorted)
      files.push_back({{"path", f}, {"bytes", std::filesystem::file_size(root_ / f)}, {"sha256", sha256_file(root_ / f)}});
    nlohmann::json echo = nlohmann::json::object();
    for (const auto& [k, v] : config_echo(cfg)) echo[k] = v;
    const nlohmann::json m{{"tool", "vortexlab"}, {"subcommand", subcommand}, {"config", echo}, {"files", files}};
    std::ofstream out(root_ / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
  }

 private:
  std::filesystem::path root_;
  std::vector<std::string> files_;
};

struct RunResult {
  std::vector<Check> checks;
  nlohmann::json results = nlohmann::json::object();

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }
};

// ---------------------------------------------------------------------------
// Shared pieces

namespace detail {

inline DensityGrid initial_grid(const ExperimentConfig& cfg, const GridGeometry& g) {
  if (cfg.lamb_oseen_init()) return lamb_oseen(cfg.sim.sigma, cfg.init_t0, 0.0, g);
  return sample_density(cfg.initial_density(), g, cfg.sim.sigma);
}

inline bool same_time(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

/// Mean-field snapshots at exactly the requested times.
inline std::vector<DensityGrid> solve_at(const DensityGrid& rho0, double dt, const std::vector<double>& times) {
  SolveConfig sc;
  sc.dt = dt;
  sc.t_end = times.back();
  std::vector<DensityGrid> out;
  std::size_t next = 0;
  solve(rho0, sc, [&](const DensityGrid& r) {
    if (next < times.size() && same_time(r.time, times[next])) {
      out.push_back(r);
      out.back().time = times[next++];
    }
  });
  if (out.size() != times.size()) throw std::invalid_argument("requested times are not solver steps");
  return out;
}

/// Particle runs r = 0..runs-1 (seed base_seed + r) captured at `times`; result[time][run].
inline std::vector<std::vector<ParticleEnsemble>> particle_runs(const ExperimentConfig& cfg, std::size_t n,
                                                                const std::vector<double>& times) {
  SimConfig base = cfg.sim;
  base.n_particles = n;
  base.t_end = times.back();
  base.snapshot_every = 1;
  const auto init = cfg.initial_density();
  std::vector<std::vector<ParticleEnsemble>> out(times.size(), std::vector<ParticleEnsemble>(cfg.n_runs));
  std::vector<std::exception_ptr> errors(cfg.n_runs);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t r = 0; r < cfg.n_runs; ++r) {
    try {
      SimConfig c = base;
      c.seed = cfg.base_seed + r;
      std::size_t next = 0;
      simulate(c, init, [&](const ParticleEnsemble& e) {
        if (next < times.size() && same_time(e.time, times[next])) out[next++][r] = e;
      });
      if (next != times.size()) throw std::invalid_argument("requested times are not particle steps");
    } catch (...) {
      errors[r] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

inline std::string indexed(const char* stem, std::size_t k, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, k, ext);
  return buf;
}

inline nlohmann::json report_json(const BoundReport& r) {
  return {{"fitted_constant", r.fitted_constant}, {"worst_x", {r.worst_x.x1, r.worst_x.x2}},
          {"worst_t", r.worst_t},                 {"mask_coverage", r.mask_coverage},
          {"passed", r.passed}};
}

inline FluctuationSet restrict_times(const FluctuationSet& s, const std::vector<double>& times) {
  FluctuationSet out;
  out.ids = s.ids;
  out.times = times;
  for (const auto& sample : s.samples)
    for (double t : times)
      if (same_time(sample.time, t)) {
        out.samples.push_back(sample);
        out.samples.back().time = t;
      }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiments

/// Lamb-Oseen solve against the closed form, and against the pure heat flow
/// (the advection of a radial density vanishes).
inline RunResult run_pde_validation(const ExperimentConfig& cfg, ArtifactSink& sink) {
  cfg.validate_for(Experiment::pde_validation);
  const GridGeometry& g = cfg.pde_grid;
  const double sigma = cfg.sim.sigma;
  const DensityGrid rho0 = lamb_oseen(sigma, cfg.init_t0, 0.0, g);
  MeanFieldSolver heat(g);
  CsvTable table({"time", "linf_error", "l1_error", "mass", "heat_linf_diff"});
  double worst = 0.0, worst_heat = 0.0;
  SolveConfig sc;
  sc.dt = cfg.pde_dt;
  sc.t_end = cfg.pde_t_end;
  std::size_t next = 0;
  solve(rho0, sc, [&](const DensityGrid& r) {
    if (next >= cfg.times.size() || !detail::same_time(r.time, cfg.times[next])) return;
    const DensityGrid exact = lamb_oseen(sigma, cfg.init_t0, r.time, g);
    const DensityGrid h = heat.heat(rho0, r.time);
    double linf = 0.0, l1 = 0.0, hd = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double e = std::abs(r.values[k] - exact.values[k]);
      linf = std::max(linf, e);
      l1 += e;
      hd = std::max(hd, std::abs(r.values[k] - h.values[k]));
    }
    l1 *= g.cell_area();
    table.row() << cfg.times[next] << linf << l1 << r.mass() << hd;
    sink.density(detail::indexed("snapshots/rho", next, ".vxg"), r);
    worst = std::max(worst, linf);
    worst_heat = std::max(worst_heat, hd);
    ++next;
  });
  sink.csv("pde_errors.csv", table);
  RunResult res;
  res.checks.push_back(check_at_most("lamb_oseen_linf_error", worst, 1e-3));
  res.checks.push_back(check_at_most("radial_heat_linf_diff", worst_heat, 1e-6));
  res.results["max_linf_error"] = worst;
  res.results["max_heat_linf_diff"] = worst_heat;
  return res;
}

/// The N ladder of H_1 and the bias-matched L1 distance at t = times.back().
/// A zero bandwidth is resolved once, by Silverman's rule on the first rung.
inline RunResult run_chaos_rate(const ExperimentConfig& cfg, ArtifactSink& sink) {
  cfg.validate_for(Experiment::chaos_rate);
  const double t = cfg.times.back();
  std::function<double(const Vec2&)> rho_bar;
  DensityGrid solved;
  if (cfg.lamb_oseen_init()) {
    rho_bar = [&](const Vec2& x) { return lamb_oseen_density(x, cfg.sim.sigma, cfg.init_t0 + t); };
  } else {
    solved = detail::solve_at(detail::initial_grid(cfg, cfg.pde_grid), cfg.pde_dt, {t}).front();
    rho_bar = [&](const Vec2& x) {
      try {
        return std::max(solved.interpolate(x), 0.0);
      } catch (const DomainBreach&) {
        return 0.0;
      }
    };
  }
  EstimatorConfig est = cfg.estimator;
  est.min_samples = 1;
  CsvTable table({"N", "runs", "h1", "h1_se", "l1", "l1_se", "ckp_slack", "bandwidth"});
  std::vector<ChaosRow> rows;
  std::vector<std::pair<double, double>> fit_rows;
  for (std::size_t n : cfg.n_list) {
    const auto runs = detail::particle_runs(cfg, n, {t}).front();
    const ChaosRow row = chaos_row(runs, rho_bar, est, cfg.jackknife_groups);
    est.bandwidth = row.bandwidth;
    rows.push_back(row);
    fit_rows.emplace_back(static_cast<double>(n), row.l1);
    table.row() << n << row.runs << row.h1 << row.h1_se << row.l1 << row.l1_se << row.ckp_slack << row.bandwidth;
  }
  sink.csv("chaos_rate.csv", table);
  const PowerFit fit = convergence_fit(fit_rows);
  sink.json("chaos_fit.json", {{"time", t}, {"slope", fit.slope}, {"intercept", fit.intercept}, {"r2", fit.r2}});
  double min_slack = std::numeric_limits<double>::infinity();
  std::size_t not_decreasing = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    min_slack = std::min(min_slack, rows[i].ckp_slack);
    if (i > 0 && !(rows[i].h1 + rows[i].h1_se < rows[i - 1].h1 - rows[i - 1].h1_se)) ++not_decreasing;
  }
  RunResult res;
  res.checks.push_back(make_check("l1_slope", fit.slope, -0.65, -0.35));
  res.checks.push_back(check_at_least("l1_fit_r2", fit.r2, 0.95));
  res.checks.push_back(check_at_least("ckp_slack_min", min_slack, -0.02));
  res.checks.push_back(check_at_most("h1_steps_within_one_se", static_cast<double>(not_decreasing), 0.0));
  res.results["slope"] = fit.slope;
  res.results["r2"] = fit.r2;
  return res;
}

/// Fitted constants of every regularity inequality on the solved density.
inline RunResult run_regularity(const ExperimentConfig& cfg, ArtifactSink& sink) {
  cfg.validate_for(Experiment::regularity_suite);
  const DensityGrid rho0 = detail::initial_grid(cfg, cfg.pde_grid);
  SolveConfig sc;
  sc.dt = cfg.pde_dt;
  sc.t_end = cfg.pde_t_end;
  sc.snapshot_every = cfg.pde_snapshot_every;
  const auto series = solve(rho0, sc);
  sink.density("snapshots/rho_initial.vxg", series.front());
  sink.density("snapshots/rho_final.vxg", series.back());
  MeanFieldSolver solver(cfg.pde_grid);
  double probe = cfg.probe_time;
  if (probe < 0.0 && cfg.lamb_oseen_init()) probe = 1.0 - cfg.init_t0;
  if (probe > series.back().time + 1e-12) probe = -1.0;
  const SuiteReport suite = regularity_suite(series, solver, cfg.suite, probe);

  CsvTable table({"inequality_id", "fitted_constant", "worst_ratio", "worst_x1", "worst_x2", "worst_t",
                  "mask_coverage", "skipped", "passed"});
  std::size_t non_finite = 0;
  for (const auto& r : suite.reports) {
    table.row() << r.inequality_id << r.fitted_constant << r.worst_ratio << r.worst_x.x1 << r.worst_x.x2 << r.worst_t
                << r.mask_coverage << r.skipped << (r.passed ? "true" : "false");
    if (!std::isfinite(r.fitted_constant)) ++non_finite;
  }
  sink.csv("regularity.csv", table);

  const std::size_t mid = series.size() / 2;
  const auto b = bochner_residuals(series[mid - 1], series[mid], series[mid + 1], solver, suite.a2());
  CsvTable bt({"identity", "time", "max_abs_residual", "max_abs_rhs", "points"});
  for (const auto* s : {&b.wlogw, &b.wlogwsquare})
    bt.row() << s->identity_id << s->time << s->max_abs << s->max_scale << s->points;
  sink.csv("bochner.csv", bt);

  RunResult res;
  res.checks.push_back(check_at_most("non_finite_constants", static_cast<double>(non_finite), 0.0));
  for (const auto& r : suite.reports) res.results["constants"][r.inequality_id] = detail::report_json(r);
  if (cfg.lamb_oseen_init()) {
    // Closed forms at t' = t0: |grad log rho| = |x| / (2 sigma t0), |hess log rho|_F = sqrt 2 / (2 sigma t0).
    const double m1 = 1.0 / (2.0 * cfg.sim.sigma * cfg.init_t0);
    res.checks.push_back(check_at_most("lamb_oseen_m1_abs_error",
                                       std::abs(suite.find("log_gradient_M1").fitted_constant - m1), 5e-3 * m1));
    res.checks.push_back(check_at_most("lamb_oseen_m2_abs_error",
                                       std::abs(suite.find("log_hessian_M2").fitted_constant - std::sqrt(2.0) * m1),
                                       5e-3 * std::sqrt(2.0) * m1));
  }
  if (std::isfinite(suite.li_yau_probe)) {
    res.results["li_yau_probe"] = {{"time", probe}, {"x", {2.0, 0.0}}, {"value", suite.li_yau_probe}};
    if (cfg.lamb_oseen_init() && cfg.probe_time < 0.0)
      res.checks.push_back(check_at_most("li_yau_at_radius_two_abs_error", std::abs(suite.li_yau_probe - 1.0), 5e-3));
  }
  return res;
}

/// phi cancellation, gamma and the entropy budget at each time.
inline RunResult run_large_deviation(const ExperimentConfig& cfg, ArtifactSink& sink) {
  cfg.validate_for(Experiment::large_deviation);
  const auto refs = detail::solve_at(detail::initial_grid(cfg, cfg.pde_grid), cfg.pde_dt, cfg.times);
  const auto runs = detail::particle_runs(cfg, cfg.sim.n_particles, cfg.times);
  MeanFieldSolver solver(cfg.pde_grid);
  CsvTable table({"time", "cancel_x", "cancel_y", "gamma", "sup_ratio", "argmax_p", "lambda_route", "s_max", "eta_max",
                  "c1_prime", "mask_coverage", "kernel_term", "kernel_term_se", "log_moment", "dv_bound", "excluded"});
  double worst_cancel = 0.0, worst_gamma = 0.0, worst_s = 0.0;
  std::size_t non_finite = 0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    const PhiField f = phi_field(refs[k], solver);
    const auto c = phi_cancellation_check(f, cfg.ldp_stride);
    const auto gm = gamma_estimate(f, cfg.ldp_c2_prime, cfg.ldp_p_max, cfg.ldp_gamma_stride);
    const auto eb = entropy_budget(runs[k], f, cfg.ldp_eta, cfg.ldp_entropy);
    table.row() << cfg.times[k] << c.max_abs_x_integral << c.max_abs_y_integral << gm.gamma << gm.sup_ratio
                << gm.argmax_p << gm.lambda_route << gm.s_max << gm.eta_max << gm.c1_prime.fitted_constant
                << f.coverage() << eb.kernel_term << eb.kernel_term_se << eb.log_moment << eb.dv_bound << eb.excluded;
    worst_cancel = std::max({worst_cancel, c.max_abs_x_integral, c.max_abs_y_integral});
    worst_gamma = std::max(worst_gamma, gm.gamma);
    worst_s = std::max(worst_s, gm.s_max);
    if (!std::isfinite(gm.c1_prime.fitted_constant)) ++non_finite;
  }
  sink.csv("large_deviation.csv", table);
  RunResult res;
  res.checks.push_back(check_at_most("phi_cancellation_max", worst_cancel, 1e-5));
  res.checks.push_back(check_at_most("c1_prime_non_finite", static_cast<double>(non_finite), 0.0));
  if (cfg.lamb_oseen_init()) {
    res.checks.push_back(check_at_most("lamb_oseen_phi_sup", worst_s, 1e-10));
    res.checks.push_back(check_at_most("lamb_oseen_gamma", worst_gamma, 1e-10));
  }
  res.results["jabin_wang_constant"] = kJabinWangConstant;
  res.results["max_gamma"] = worst_gamma;
  return res;
}

/// Particle fluctuation variances against the i.i.d. law and the SPDE.
inline RunResult run_fluctuation(const ExperimentConfig& cfg, ArtifactSink& sink) {
  cfg.validate_for(Experiment::fluctuation);
  const auto tests = hermite_family(cfg.fluct_max_degree);
  const auto refs = detail::solve_at(detail::initial_grid(cfg, cfg.pde_grid), cfg.pde_dt, cfg.times);
  SimConfig base = cfg.sim;
  base.seed = cfg.base_seed;
  base.t_end = cfg.times.back();
  base.snapshot_every = 1;
  const auto particle = particle_fluctuations(base, cfg.initial_density(), cfg.n_runs, refs, tests);

  SpdeRunConfig sc;
  sc.dt = cfg.fluct_dt;
  sc.t_end = cfg.times.back();
  sc.replicas = cfg.fluct_replicas;
  sc.base_seed = cfg.base_seed;
  const auto spde =
      detail::restrict_times(spde_fluctuations(detail::initial_grid(cfg, cfg.fluct_grid), sc, tests), cfg.times);
  const auto cmp = covariance_compare(particle, spde);

  CsvTable table({"id", "time", "particle_var", "particle_var_se", "spde_var", "spde_var_se", "iid_var", "discrepancy",
                  "z"});
  double worst_z0 = 0.0, worst_final = 0.0;
  for (const auto& r : cmp.rows) {
    const std::size_t ti = static_cast<std::size_t>(
        std::find_if(cfg.times.begin(), cfg.times.end(), [&](double t) { return detail::same_time(t, r.time); }) -
        cfg.times.begin());
    const auto& h = tests[static_cast<std::size_t>(
        std::find_if(tests.begin(), tests.end(), [&](const TestFunction& f) { return f.id == r.id; }) - tests.begin())];
    const double iid = reference_variance(refs[ti], h);
    table.row() << r.id << r.time << r.particle.variance << r.particle.variance_se << r.spde.variance
                << r.spde.variance_se << iid << r.discrepancy << r.z;
    if (r.time == 0.0) worst_z0 = std::max(worst_z0, std::abs(r.particle.variance - iid) / r.particle.variance_se);
    if (ti + 1 == cfg.times.size()) worst_final = std::max(worst_final, r.discrepancy);
  }
  sink.csv("fluctuation.csv", table);
  CsvTable cross({"time", "cross_discrepancy"});
  for (std::size_t ti = 0; ti < cfg.times.size(); ++ti) cross.row() << cfg.times[ti] << cmp.cross_discrepancy[ti];
  sink.csv("fluctuation_covariance.csv", cross);

  RunResult res;
  if (cfg.times.front() == 0.0) res.checks.push_back(check_at_most("iid_variance_max_abs_z", worst_z0, 3.0));
  if (cfg.times.back() > 0.0) res.checks.push_back(check_at_most("spde_variance_discrepancy", worst_final, 0.25));
  res.results["tests"] = test_ids(tests);
  return res;
}

/// Plain particle ensembles: centroids of every run and snapshots of run 0.
inline RunResult run_simulate(const ExperimentConfig& cfg, ArtifactSink& sink) {
  cfg.validate();
  detail::require_times_on(cfg.times, cfg.sim.dt, "sim.dt");
  const auto runs = detail::particle_runs(cfg, cfg.sim.n_particles, cfg.times);
  CsvTable table({"time", "run", "centroid_x1", "centroid_x2", "mean_square_radius"});
  for (std::size_t k = 0; k < cfg.times.size(); ++k) {
    sink.particles(detail::indexed("snapshots/particles", k, ".vxc"), runs[k][0]);
    for (std::size_t r = 0; r < cfg.n_runs; ++r) {
      const auto& e = runs[k][r];
      double m2 = 0.0;
      for (const auto& p : e.positions) m2 += norm2(p);
      const Vec2 c = e.centroid();
      table.row() << cfg.times[k] << r << c.x1 << c.x2 << m2 / static_cast<double>(e.size());
    }
  }
  sink.csv("centroids.csv", table);
  RunResult res;
  const double t = cfg.times.back() - cfg.times.front();
  if (cfg.n_runs >= 2 && t > 0.0) {
    // The interaction cancels in the centroid, which moves as a Brownian motion of variance 2 sigma t / N per axis.
    const double expected = 2.0 * cfg.sim.sigma * t / static_cast<double>(cfg.sim.n_particles);
    double worst = 0.0;
    std::array<double, 2> var{};
    for (int axis = 0; axis < 2; ++axis) {
      std::vector<double> d;
      for (std::size_t r = 0; r < cfg.n_runs; ++r) {
        const Vec2 a = runs.front()[r].centroid(), b = runs.back()[r].centroid();
        d.push_back(axis == 0 ? b.x1 - a.x1 : b.x2 - a.x2);
      }
      double m = 0.0, s = 0.0;
      for (double v : d) m += v;
      m /= static_cast<double>(d.size());
      for (double v : d) s += (v - m) * (v - m);
      var[axis] = s / static_cast<double>(d.size() - 1);
      worst = std::max(worst, std::abs(var[axis] / expected - 1.0));
    }
    res.checks.push_back(check_at_most("centroid_variance_relative_error", worst, 0.2));
    res.results["centroid_variance"] = var;
    res.results["centroid_variance_expected"] = expected;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Driver

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_numerical = 3, exit_check = 4 };

inline std::optional<Experiment> experiment_for(const std::string& subcommand) {
  if (subcommand == "pde") return Experiment::pde_validation;
  if (subcommand == "chaos") return Experiment::chaos_rate;
  if (subcommand == "regularity") return Experiment::regularity_suite;
  if (subcommand == "ldp") return Experiment::large_deviation;
  if (subcommand == "fluct") return Experiment::fluctuation;
  return std::nullopt;
}

/// Runs one subcommand and writes summary.json and manifest.json (or
/// error.json on a numerical failure). Returns an ExitCode.
inline int run_subcommand(const std::string& subcommand, ExperimentConfig cfg, std::ostream& log) {
  const auto wanted = experiment_for(subcommand);
  if (!wanted && subcommand != "simulate") {
    log << "unknown subcommand " << subcommand << '\n';
    return exit_config;
  }
  if (wanted && cfg.experiment && *cfg.experiment != *wanted) {
    log << "config error: experiment: config names " << to_string(*cfg.experiment) << " but the subcommand runs "
        << to_string(*wanted) << '\n';
    return exit_config;
  }
  if (wanted) cfg.experiment = wanted;
  try {
    if (wanted)
      cfg.validate_for(*wanted);
    else
      cfg.validate();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return exit_config;
  }

  ArtifactSink sink(cfg.output_dir);
  std::filesystem::remove(sink.root() / "error.json");
  RunResult res;
  try {
    if (subcommand == "pde")
      res = run_pde_validation(cfg, sink);
    else if (subcommand == "chaos")
      res = run_chaos_rate(cfg, sink);
    else if (subcommand == "regularity")
      res = run_regularity(cfg, sink);
    else if (subcommand == "ldp")
      res = run_large_deviation(cfg, sink);
    else if (subcommand == "fluct")
      res = run_fluctuation(cfg, sink);
    else
      res = run_simulate(cfg, sink);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    sink.json("error.json", {{"subcommand", subcommand}, {"error", e.what()}});
    sink.manifest(subcommand, cfg);
    log << "numerical failure: " << e.what() << '\n';
    return exit_numerical;
  }
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : res.checks) {
    checks.push_back(to_json(c));
    log << (c.passed ? "PASS " : "FAIL ") << c.name << " = " << detail::format_double(c.value) << '\n';
  }
  sink.json("summary.json", {{"subcommand", subcommand}, {"passed", res.passed()}, {"checks", checks},
                             {"results", res.results}});
  sink.manifest(subcommand, cfg);
  return res.passed() ? exit_ok : exit_check;
}

struct ReportOutcome {
  std::vector<std::string> problems;  ///< missing or altered files, error records
  std::vector<Check> checks;
  bool error_record = false;

  int exit_code() const {
    if (error_record) return exit_numerical;
    if (!problems.empty()) return exit_check;
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; }) ? exit_ok : exit_check;
  }
};

/// Re-hashes every manifest entry and collects the recorded checks.
inline ReportOutcome verify_output(const std::filesystem::path& dir) {
  ReportOutcome out;
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    out.problems.push_back("no manifest.json in " + dir.string());
    return out;
  }
  const auto manifest = nlohmann::json::parse(in);
  for (const auto& f : manifest.at("files")) {
    const auto path = dir / f.at("path").get<std::string>();
    if (!std::filesystem::exists(path)) {
      out.problems.push_back("missing " + f.at("path").get<std::string>());
      continue;
    }
    if (sha256_file(path) != f.at("sha256").get<std::string>())
      out.problems.push_back("hash mismatch " + f.at("path").get<std::string>());
    if (f.at("path") == "error.json") out.error_record = true;
  }
  std::ifstream sin(dir / "summary.json");
  if (sin) {
    const auto summary = nlohmann::json::parse(sin);
    for (const auto& c : summary.at("checks")) {
      Check k;
      k.name = c.at("name").get<std::string>();
      k.value = c.at("value").is_number() ? c.at("value").get<double>() : std::numeric_limits<double>::quiet_NaN();
      if (c.contains("lower")) k.lower = c.at("lower").get<double>();
      if (c.contains("upper")) k.upper = c.at("upper").get<double>();
      k.passed = c.at("passed").get<bool>();
      out.checks.push_back(k);
    }
  } else if (!out.error_record) {
    out.problems.push_back("no summary.json");
  }
  return out;
}

}  // namespace vortex
