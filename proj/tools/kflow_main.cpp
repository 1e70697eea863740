// kflow: moment maps on spaces of symplectic connections over discretized
// Kahler tori, the associated Calabi-type functional, and trace-density
// diagnostics for truncated star products.
//
// Commands: kflow geom|moment|star|optimize --config <path> [--out <dir>] [--seed <u64>]
// Exit codes: 0 pass, 1 criterion failure, 2 config error, 3 numerical precondition failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include <kflow/io.hpp>
#include <kflow/kflow.hpp>
#include <kflow/report.hpp>

namespace fs = std::filesystem;
using namespace kflow;

namespace {

struct Out {
  fs::path dir;
  bool enabled = false;
  void write_report(const Report& rep) const {
    const std::string text = rep.to_json().dump(2) + "\n";
    if (enabled) {
      std::ofstream f(dir / "report.json");
      f << text;
    }
    std::cout << text;
  }
  void dump(const std::string& name, const ScalarField& f) const {
    if (enabled) write_kfld((dir / name).string(), f);
  }
  void dump(const std::string& name, const TensorField& f) const {
    if (enabled) write_kfld((dir / name).string(), f);
  }
};

double field_scale(const ScalarField& F, const ScalarField& H) {
  return std::max(1e-12, F.sup_norm() * H.sup_norm());
}

// sup | R^s_{pqr} + R^s_{qrp} + R^s_{rpq} |
double bianchi1_residual(const ConnectionPack& pk) {
  const int d = pk.riemann.spec.dim();
  double res = 0.0;
  for (int s = 0; s < d; ++s)
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q)
        for (int r = 0; r < d; ++r) {
          const double* a = pk.riemann.comp(pk.riemann.cidx({s, p, q, r}));
          const double* b = pk.riemann.comp(pk.riemann.cidx({s, q, r, p}));
          const double* c = pk.riemann.comp(pk.riemann.cidx({s, r, p, q}));
          for (std::size_t pt = 0; pt < pk.riemann.npts(); ++pt)
            res = std::max(res, std::abs(a[pt] + b[pt] + c[pt]));
        }
  return res;
}

// sup_b | Lambda^{kl} (nabla_l Ric)(e_k, e_b) + 1/2 dScal(J e_b) |
double bianchi2_contraction_residual(const GeometryCache& geo) {
  const int d = geo.spec.dim();
  TensorField dric = covariant_derivative(geo.conn.ricci, geo.conn.christoffel); // [l, k, b]
  std::vector<ScalarField> dscal;
  for (int a = 0; a < d; ++a) dscal.push_back(partial_derivative(geo.scal, a));
  double res = 0.0;
  for (std::size_t pt = 0; pt < geo.spec.size(); ++pt)
    for (int b = 0; b < d; ++b) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l)
          acc += geo.Lambda.at(geo.Lambda.cidx({k, l}), pt) * dric.at(dric.cidx({l, k, b}), pt);
      double ds = 0.0;
      for (int c = 0; c < d; ++c)
        ds += geo.J[static_cast<std::size_t>(c) * d + b] * dscal[static_cast<std::size_t>(c)][pt];
      res = std::max(res, std::abs(acc + 0.5 * ds));
    }
  return res;
}

// top coefficient of omega^n/n! by explicit antisymmetrization
double wedge_top_coefficient(const TensorField& omega, std::size_t pt) {
  const int d = omega.spec.dim();
  if (d == 2) return omega.at(omega.cidx({0, 1}), pt);
  double acc = 0.0;
  int idx[4] = {0, 1, 2, 3};
  do {
    int inv = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        if (idx[a] > idx[b]) ++inv;
    const double sgn = (inv % 2) ? -1.0 : 1.0;
    acc += sgn * omega.at(omega.cidx({idx[0], idx[1]}), pt) * omega.at(omega.cidx({idx[2], idx[3]}), pt);
  } while (std::next_permutation(idx, idx + 4));
  return acc / 8.0; // 1/(2! 2! n!) with n = 2
}

int run_geom(const RunConfig& cfg, const Out& out) {
  auto t0 = std::chrono::steady_clock::now();
  Report rep;
  rep.config_echo = cfg.echo();
  GeometryCache geo = build_geometry(cfg.potential_field());

  rep.add_lower_bound("positivity_margin", geo.positivity_margin, 1e-12);
  rep.add("metricity_nabla_g", covariant_derivative(geo.g, geo.conn.christoffel).sup_norm(),
          cfg.tol("metricity", 1e-9));
  rep.add("nabla_omega", nabla_omega_residual(geo.conn.christoffel, geo.omega), cfg.tol("nabla_omega", 1e-9));
  rep.add("bianchi1", bianchi1_residual(geo.conn), cfg.tol("bianchi1", 1e-8));
  rep.add("bianchi2_contraction", bianchi2_contraction_residual(geo), cfg.tol("bianchi2", 1e-7));

  double pf_res = 0.0;
  const double sgn = (cfg.n == 2) ? -1.0 : 1.0;
  for (std::size_t pt = 0; pt < geo.spec.size(); ++pt)
    pf_res = std::max(pf_res, std::abs(geo.volume[pt] - sgn * wedge_top_coefficient(geo.omega, pt)));
  rep.add("pfaffian_vs_wedge", pf_res, cfg.tol("pfaffian", 1e-10));

  {
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    TensorField T(geo.spec, {Variance::Cov, Variance::Cov});
    const int d = geo.spec.dim();
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        std::vector<int> k(static_cast<std::size_t>(d), 0);
        k[0] = 1;
        k[static_cast<std::size_t>(d) - 1] = -1;
        ScalarField f = trig_field(geo.spec, k, ud(rng), ud(rng));
        std::copy(f.data(), f.data() + f.size(), T.comp(T.cidx({a, b})));
      }
    // raise both slots with Lambda, lower back with omega: signs cancel pairwise
    TensorField up = raise_all(T, geo.Lambda);
    TensorField down = raise_all(up, geo.omega);
    down -= T;
    rep.add("raise_lower_roundtrip", down.sup_norm(), cfg.tol("raise_lower", 1e-12));
  }

  if (cfg.potential.empty()) {
    rep.add("flat_riemann", geo.conn.riemann.sup_norm(), cfg.tol("flat_curvature", 1e-10));
    rep.add("flat_scal", geo.scal.sup_norm(), cfg.tol("flat_curvature", 1e-10));
  }

  MomentMap mm = moment_map(geo);
  rep.add("mu0", mm.mu0, cfg.tol("mu0", 1e-7));
  out.dump("omega.kfld", geo.omega);
  out.dump("scal.kfld", geo.scal);
  out.dump("mu.kfld", mm.mu);
  rep.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.write_report(rep);
  return rep.all_pass() ? 0 : 1;
}

int run_moment(const RunConfig& cfg, const Out& out) {
  auto t0 = std::chrono::steady_clock::now();
  Report rep;
  rep.config_echo = cfg.echo();
  GeometryCache geo = build_geometry(cfg.potential_field());
  MomentMap mm = moment_map(geo);

  if (cfg.n == 1) {
    if (cfg.potential.empty()) {
      rep.add("flat_mu_tilde", mm.mu_tilde.sup_norm(), cfg.tol("flat_mu", 1e-10));
    } else {
      ScalarField ref = laplacian(geo, geo.scal);
      ref *= -0.5;
      remove_mean_volume(geo, ref);
      ScalarField diff = mm.mu - ref;
      const double denom = std::max(mm.mu.sup_norm(), 1e-12);
      rep.add("mu_vs_minus_half_lap_scal_rel", diff.sup_norm() / denom, cfg.tol("dim2_reduction", 1e-7));
    }
  } else {
    ScalarField pe = p_expanded(geo.conn, geo);
    ScalarField pw = p_wedge(geo.conn, geo);
    ScalarField diff = pe - pw;
    rep.add("p_wedge_vs_expanded_rel", diff.sup_norm() / std::max(pe.sup_norm(), 1e-12),
            cfg.tol("p_consistency", 1e-8));
  }

  std::mt19937_64 rng(cfg.seed);
  for (int trial = 0; trial < 5; ++trial) {
    ScalarField F = cfg.test_function(static_cast<std::size_t>(trial));
    Sym3Tensor A = random_sym3(geo.spec, rng, 2, 0.1);
    rep.add("moment_identity_" + std::to_string(trial), moment_identity_residual(F, A, geo, cfg.richardson_h),
            cfg.tol("moment_identity", 1e-6));
  }

  {
    Sym3Tensor A = random_sym3(geo.spec, rng, 2, 0.05);
    TensorField gam = perturbed_christoffel(geo, A, 1.0);
    ConnectionPack pk = pack_of_christoffel(gam, geo.omega);
    MomentMap mm2 = moment_map(pk, geo);
    rep.add("mu0_connection_independence", mm2.mu0 - mm.mu0, cfg.tol("mu0_independence", 1e-7));
  }

  {
    ScalarField F = cfg.test_function(0), H = cfg.test_function(1);
    const double lhs = omega_E(lie_derivative_connection(H, geo), lie_derivative_connection(F, geo), geo);
    const double rhs = -integrate_volume(geo, poisson(geo, F, H) * mm.mu_tilde);
    rep.add("equivariance_consequence", (lhs - rhs) / std::max(1.0, std::abs(rhs)),
            cfg.tol("equivariance", 1e-6));
  }

  out.dump("mu.kfld", mm.mu);
  out.dump("mu_tilde.kfld", mm.mu_tilde);
  rep.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.write_report(rep);
  return rep.all_pass() ? 0 : 1;
}

int run_star(const RunConfig& cfg, const Out& out) {
  auto t0 = std::chrono::steady_clock::now();
  Report rep;
  rep.config_echo = cfg.echo();
  GeometryCache geo = build_geometry(cfg.potential_field());
  MomentMap mm = moment_map(geo);
  std::mt19937_64 rng(cfg.seed);

  auto [F, H] = find_witness_pair(geo, mm, rng);
  const double scale = field_scale(F, H);

  auto corrected = trace_defect(F, H, fedosov_density(geo, mm), geo);
  auto raw = trace_defect(F, H, unit_density(geo.spec, 3), geo);
  rep.add("fedosov_defect_nu1", corrected[0], cfg.tol("fedosov_defect", 1e-7) * scale);
  rep.add("fedosov_defect_nu2", corrected[1], cfg.tol("fedosov_defect", 1e-7) * scale);
  rep.add("fedosov_defect_nu3", corrected[2], cfg.tol("fedosov_defect", 1e-7) * scale);
  if (cfg.potential.empty()) {
    rep.add("fedosov_flat_raw_nu3", raw[2], cfg.tol("flat_defect", 1e-10) * scale);
  } else {
    const double witness_ratio = std::abs(raw[2]) / std::max(std::abs(corrected[2]), 1e-300);
    rep.add_lower_bound("fedosov_witness_ratio", witness_ratio, 1e3);
    const double bridge = omega_E(lie_derivative_connection(H, geo), lie_derivative_connection(F, geo), geo);
    rep.add("equivariant_moment_bridge", 24.0 * raw[2] - bridge,
            cfg.tol("bridge", 1e-7) * std::max(1.0, std::abs(bridge)));
  }

  if (cfg.n == 1) {
    auto wick_c = wick_trace_defect(F, H, geo);
    rep.add("wick_defect_nu1", std::abs(wick_c[0]), cfg.tol("wick_defect", 1e-7) * scale);
    rep.add("wick_defect_nu2", std::abs(wick_c[1]), cfg.tol("wick_defect", 1e-7) * scale);
    NuSeries<cplx> comm = wick_product(F, H, geo);
    NuSeries<cplx> hw = wick_product(H, F, geo);
    comm -= hw;
    const cplx c2int = integrate_volume(geo, comm.coef[2]);
    CompatibleACS acs = standard_acs(geo);
    const double oj = omega_J(lie_derivative_J(F, acs, geo), lie_derivative_J(H, acs, geo), acs, geo);
    rep.add("wick_nu2_vs_half_quarter_i_omegaJ", std::abs(c2int - 0.5 * cplx(0, 0.25 * oj)),
            cfg.tol("wick_commutator", 1e-7) * std::max(1.0, std::abs(oj)));
  }

  {
    TensorField alpha(geo.spec, {Variance::Cov});
    std::vector<int> k1(static_cast<std::size_t>(geo.spec.dim()), 0);
    k1[0] = 1;
    k1[static_cast<std::size_t>(geo.spec.dim()) - 1] = 1;
    ScalarField a0 = trig_field(geo.spec, k1, 0.7, 0.2);
    std::copy(a0.data(), a0.data() + a0.size(), alpha.comp(0));
    ClosedTwoForm chi = exact_two_form(alpha);
    auto d1 = chi_commutator_defect(F, H, chi, geo);
    rep.add("chi_exact_defect_nu2", d1[1], cfg.tol("chi_defect", 1e-8) * scale);
    TensorField cw = std_omega(geo.spec);
    cw *= 0.7;
    ClosedTwoForm chi2 = make_closed_two_form(std::move(cw));
    auto d2 = chi_commutator_defect(F, H, chi2, geo);
    rep.add("chi_const_omega_defect_nu2", d2[1], cfg.tol("chi_defect", 1e-8) * scale);
  }

  rep.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.write_report(rep);
  return rep.all_pass() ? 0 : 1;
}

int run_optimize(const RunConfig& cfg, const Out& out) {
  auto t0 = std::chrono::steady_clock::now();
  Report rep;
  rep.config_echo = cfg.echo();
  KahlerPotential phi0 = cfg.potential_field();
  DescentReport dr = optimize(phi0, cfg.optimizer);

  if (out.enabled) {
    std::ofstream csv(out.dir / "trajectory.csv");
    csv << "iter,F,mu_inf,step\n";
    for (const auto& r : dr.rows)
      csv << r.iter << "," << r.F << "," << r.mu_inf << "," << r.step << "\n";
  }

  const double F0 = dr.rows.empty() ? 0.0 : dr.rows.front().F;
  bool monotone = true;
  for (std::size_t i = 1; i < dr.rows.size(); ++i)
    if (dr.rows[i].F >= dr.rows[i - 1].F) monotone = false;
  rep.add_bool("monotone_descent", monotone);
  if (!cfg.potential.empty()) {
    rep.add("final_F_over_F0", dr.F_final / std::max(F0, 1e-300), cfg.tol("optimizer_F", 1e-10));
    rep.add("final_mu_inf", dr.mu_inf_final, cfg.tol("optimizer_mu", 1e-6));
    rep.add("final_phi_inf", dr.phi_final.sup_norm(), cfg.tol("optimizer_phi", 1e-5));
  } else {
    rep.add_bool("already_optimal", dr.converged && dr.iterations <= 1);
  }
  rep.add_bool("line_search_ok", !dr.line_search_failure);

  rep.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.write_report(rep);
  return rep.all_pass() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"kflow: moment maps, Calabi-type descent and star-product trace diagnostics on Kahler tori"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    cmd->add_option("--out", out_dir, "output directory for report.json and dumps");
    cmd->add_option("--seed", seed, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
  };

  CLI::App* geom = app.add_subcommand("geom", "geometry invariant suite");
  CLI::App* moment = app.add_subcommand("moment", "Cahen-Gutt moment map checks");
  CLI::App* star = app.add_subcommand("star", "star-product trace-density tables");
  CLI::App* optimize_cmd = app.add_subcommand("optimize", "descent on the moment-map functional");
  for (auto* c : {geom, moment, star, optimize_cmd}) add_common(c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::ifstream f(config_path);
    if (!f) {
      std::cerr << "error: cannot open config " << config_path << "\n";
      return 2;
    }
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: config parse: " << e.what() << "\n";
      return 2;
    }
    RunConfig cfg = RunConfig::from_json(j);
    if (seed_set) cfg.seed = seed;

    Out out;
    if (!out_dir.empty()) {
      out.enabled = true;
      out.dir = out_dir;
      fs::create_directories(out.dir);
    }

    if (*geom) return run_geom(cfg, out);
    if (*moment) return run_moment(cfg, out);
    if (*star) return run_star(cfg, out);
    if (*optimize_cmd) return run_optimize(cfg, out);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const PositivityViolation& e) {
    std::cerr << "numerical precondition: " << e.what() << "\n";
    return 3;
  } catch (const SymplecticityViolation& e) {
    std::cerr << "numerical precondition: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
