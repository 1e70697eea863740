#pragma once

// Run configuration and machine-readable reports for the CLI.

#include <json.hpp>

#include "calabi.hpp"
#include "star.hpp"

namespace kflow {

inline const char* kToolVersion = "1.0.0";

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ModeSpec {
  std::vector<int> k;
  double amp = 0.0;
  double phase = 0.0;
};

struct RunConfig {
  int n = 1;
  int p = 64;
  std::vector<ModeSpec> potential;      // metric amplitudes
  std::vector<ModeSpec> test_functions; // plain trig amplitudes
  std::uint64_t seed = 1234;
  double flow_time = 0.5;
  int flow_steps = 48;
  double richardson_h = 1e-4;
  OptimizerConfig optimizer;
  std::map<std::string, double> tolerances;

  double tol(const std::string& name, double def) const {
    auto it = tolerances.find(name);
    return it == tolerances.end() ? def : it->second;
  }

  void validate() const {
    GridSpec spec(n, p); // throws on bad n/p
    double amp_sum = 0.0;
    auto check_modes = [&](const std::vector<ModeSpec>& ms, bool is_potential) {
      for (const auto& m : ms) {
        if (static_cast<int>(m.k.size()) != spec.dim())
          throw ConfigError("mode vector length must equal 2n");
        int kmax = 0;
        bool nz = false;
        for (int ka : m.k) {
          kmax = std::max(kmax, std::abs(ka));
          nz |= ka != 0;
        }
        if (!nz && is_potential) throw ConfigError("potential modes must be nonzero");
        if (kmax > p / 8) throw ConfigError("mode above Nyquist/4 (|k|_inf <= p/8 required)");
        if (is_potential) amp_sum += std::abs(m.amp);
      }
    };
    check_modes(potential, true);
    check_modes(test_functions, false);
    // numerical precondition, not a parse error: callers map it to exit 3
    if (amp_sum >= 1.0) throw PositivityViolation(0, 1.0 - amp_sum);
  }

  GridSpec grid() const { return GridSpec(n, p); }

  KahlerPotential potential_field() const {
    GridSpec spec = grid();
    ScalarField f(spec);
    for (const auto& m : potential) f += potential_mode_field(spec, m.k, m.amp, m.phase);
    return KahlerPotential(std::move(f));
  }

  ScalarField test_function(std::size_t i) const {
    GridSpec spec = grid();
    if (test_functions.empty()) {
      std::vector<int> k(static_cast<std::size_t>(spec.dim()), 0);
      k[0] = 1;
      return trig_field(spec, k, 1.0, 0.3 + 0.7 * static_cast<double>(i));
    }
    const auto& m = test_functions[i % test_functions.size()];
    return trig_field(spec, m.k, m.amp, m.phase);
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      c.n = j.value("n", 1);
      c.p = j.value("points_per_axis", 64);
      auto parse_modes = [](const nlohmann::json& arr) {
        std::vector<ModeSpec> out;
        for (const auto& e : arr) {
          ModeSpec m;
          m.k = e.at("k").get<std::vector<int>>();
          m.amp = e.at("amp").get<double>();
          m.phase = e.value("phase", 0.0);
          out.push_back(std::move(m));
        }
        return out;
      };
      if (j.contains("potential")) c.potential = parse_modes(j.at("potential"));
      if (j.contains("test_functions")) c.test_functions = parse_modes(j.at("test_functions"));
      c.seed = j.value("seed", static_cast<std::uint64_t>(1234));
      c.flow_time = j.value("flow_time", 0.5);
      c.flow_steps = j.value("flow_steps", 48);
      c.richardson_h = j.value("richardson_h", 1e-4);
      if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        c.optimizer.max_iters = o.value("max_iters", c.optimizer.max_iters);
        c.optimizer.initial_step = o.value("initial_step", c.optimizer.initial_step);
        c.optimizer.backtrack = o.value("backtrack", c.optimizer.backtrack);
        c.optimizer.sufficient_decrease = o.value("sufficient_decrease", c.optimizer.sufficient_decrease);
        c.optimizer.tol_F = o.value("tol_F", c.optimizer.tol_F);
        c.optimizer.tol_mu = o.value("tol_mu", c.optimizer.tol_mu);
        c.optimizer.tol_grad = o.value("tol_grad", c.optimizer.tol_grad);
        c.optimizer.precondition = o.value("precondition", c.optimizer.precondition);
        c.optimizer.precond_eps = o.value("precond_eps", c.optimizer.precond_eps);
      }
      if (j.contains("tolerances"))
        for (auto it = j.at("tolerances").begin(); it != j.at("tolerances").end(); ++it)
          c.tolerances[it.key()] = it.value().get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config parse: ") + e.what());
    }
    c.validate();
    return c;
  }

  nlohmann::ordered_json echo() const {
    nlohmann::ordered_json j;
    j["n"] = n;
    j["points_per_axis"] = p;
    auto dump_modes = [](const std::vector<ModeSpec>& ms) {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (const auto& m : ms) arr.push_back({{"k", m.k}, {"amp", m.amp}, {"phase", m.phase}});
      return arr;
    };
    j["potential"] = dump_modes(potential);
    j["test_functions"] = dump_modes(test_functions);
    j["seed"] = seed;
    j["flow_time"] = flow_time;
    j["flow_steps"] = flow_steps;
    j["richardson_h"] = richardson_h;
    return j;
  }
};

// numeric conventions pinned by this build; echoed into every report
inline nlohmann::ordered_json convention_block() {
  nlohmann::ordered_json c;
  c["laplacian"] = "positive spectrum: flat Delta cos(2 pi k.x) = 4 pi^2 |k|^2 cos(2 pi k.x)";
  c["poisson"] = "{F,H} = -omega(X_F, X_H) with i(X_F) omega = dF";
  c["omega_E"] = "triple-Lambda (normative); endomorphism-trace form agrees with ratio 1";
  c["fedosov_nu2_coeff"] = kFedosovNu2Coeff;
  c["fedosov_nu3_coeff"] = kFedosovNu3Sign / 48.0;
  c["wick_c1_antisymmetrization"] = "i {F,H}";
  c["wick_density_coeff_riemannian_scal"] = kWickDensityCoeff;
  c["wick_nu2_commutator_vs_quarter_i_omegaJ"] = 0.5;
  c["chi_density_coeff_lambda_trace"] = kChiDensityCoeff;
  c["hermitian_scal_factor_riemannian"] = kHermitianScalFactor;
  return c;
}

struct ReportRow {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct Report {
  nlohmann::ordered_json config_echo;
  std::vector<ReportRow> rows;
  double elapsed_seconds = 0.0;

  void add(const std::string& name, double value, double tolerance) {
    rows.push_back({name, value, tolerance, std::abs(value) <= tolerance});
  }
  void add_bool(const std::string& name, bool ok) {
    rows.push_back({name, ok ? 1.0 : 0.0, 0.5, ok});
  }
  void add_lower_bound(const std::string& name, double value, double bound) {
    rows.push_back({name, value, bound, value >= bound});
  }
  bool all_pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "kflow";
    j["version"] = kToolVersion;
    j["config"] = config_echo;
    j["conventions"] = convention_block();
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& r : rows)
      arr.push_back({{"name", r.name}, {"value", r.value}, {"tolerance", r.tolerance}, {"pass", r.pass}});
    j["rows"] = arr;
    j["all_pass"] = all_pass();
    j["timings"] = {{"elapsed_seconds", elapsed_seconds}};
    return j;
  }
};

} // namespace kflow
