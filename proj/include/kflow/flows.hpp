#pragma once

// Moser flows f_t with f_t^* omega_{phi(t)} = omega, pullback machinery for
// functions, forms and connections, and the pullback lemma for mu.

#include "connection.hpp"

namespace kflow {

// mode amplitudes are metric amplitudes: the term contributes
// amp/(4 pi^2 |k|^2) cos(2 pi k.x + phase) to phi, so dd^c phi has pointwise
// size ~ amp and positivity holds whenever sum |amp| < 1.
inline ScalarField potential_mode_field(const GridSpec& spec, const std::vector<int>& k, double amp,
                                        double phase = 0.0) {
  double k2 = 0.0;
  for (int ka : k) k2 += static_cast<double>(ka) * ka;
  if (k2 == 0.0) throw std::invalid_argument("potential mode must be nonzero");
  return trig_field(spec, k, amp / (two_pi * two_pi * k2), phase);
}

struct PotentialPath {
  struct Term {
    std::vector<int> k;
    double phase = 0.0;
    std::function<double(double)> amp;     // metric amplitude at time t
    std::function<double(double)> amp_dot; // its t-derivative
  };
  GridSpec spec;
  std::vector<Term> terms;

  KahlerPotential potential(double t) const {
    ScalarField f(spec);
    for (const auto& tm : terms) f += potential_mode_field(spec, tm.k, tm.amp(t), tm.phase);
    return KahlerPotential(std::move(f));
  }
  ScalarField potential_dot(double t) const {
    ScalarField f(spec);
    for (const auto& tm : terms) f += potential_mode_field(spec, tm.k, tm.amp_dot(t), tm.phase);
    remove_mean(f);
    return f;
  }
};

// linear-in-t path from 0 to the given modes
inline PotentialPath linear_path(const GridSpec& spec,
                                 const std::vector<std::tuple<std::vector<int>, double, double>>& modes) {
  PotentialPath path;
  path.spec = spec;
  for (const auto& [k, amp, phase] : modes) {
    PotentialPath::Term tm;
    tm.k = k;
    tm.phase = phase;
    tm.amp = [amp](double t) { return amp * t; };
    tm.amp_dot = [amp](double) { return amp; };
    path.terms.push_back(std::move(tm));
  }
  return path;
}

struct DiscreteDiffeo {
  GridSpec spec;
  TensorField disp;     // u^a with f(x) = x + u(x)
  TensorField jac;      // Jac^a_b = delta^a_b + d_b u^a
  TensorField inv_disp; // f^{-1}(x) = x + w(x)
  std::vector<Interpolant> u_interp;

  void forward(const double* x, double* y) const {
    const int d = spec.dim();
    for (int a = 0; a < d; ++a) {
      double xa[4] = {0, 0, 0, 0};
      for (int b = 0; b < d; ++b) xa[b] = x[b] - std::floor(x[b]);
      y[a] = x[a] + u_interp[static_cast<std::size_t>(a)].eval(xa);
    }
  }
};

namespace detail {

inline void build_jacobian(DiscreteDiffeo& f) {
  const int d = f.spec.dim();
  f.jac = TensorField(f.spec, {Variance::Con, Variance::Cov});
  for (int a = 0; a < d; ++a) {
    ScalarField ua(f.spec);
    std::copy(f.disp.comp(static_cast<std::size_t>(a)),
              f.disp.comp(static_cast<std::size_t>(a)) + f.spec.size(), ua.data());
    for (int b = 0; b < d; ++b) {
      ScalarField dub = partial_derivative(ua, b);
      double* o = f.jac.comp(f.jac.cidx({a, b}));
      for (std::size_t pt = 0; pt < f.spec.size(); ++pt) o[pt] = dub[pt] + (a == b ? 1.0 : 0.0);
    }
  }
}

inline void build_interpolants(DiscreteDiffeo& f, double tol = 1e-14) {
  f.u_interp.clear();
  for (int a = 0; a < f.spec.dim(); ++a) {
    ScalarField ua(f.spec);
    std::copy(f.disp.comp(static_cast<std::size_t>(a)),
              f.disp.comp(static_cast<std::size_t>(a)) + f.spec.size(), ua.data());
    f.u_interp.push_back(Interpolant::build(ua, tol));
  }
}

// Newton inversion per grid point (4 iterations, tolerance 1e-12)
inline void build_inverse(DiscreteDiffeo& f) {
  const int d = f.spec.dim();
  const std::size_t N = f.spec.size();
  f.inv_disp = TensorField(f.spec, {Variance::Con});
  std::vector<double> maxres(N, 0.0);
  parallel_for(N, [&](std::size_t pt) {
    double x[4], y[4];
    f.spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a)
      y[a] = x[a] - f.u_interp[static_cast<std::size_t>(a)].eval(x); // first guess
    double res = 0.0;
    for (int it = 0; it < 8; ++it) {
      double yw[4];
      for (int a = 0; a < d; ++a) yw[a] = y[a] - std::floor(y[a]);
      double r[4], Jm[16];
      res = 0.0;
      for (int a = 0; a < d; ++a) {
        double val, grad[4];
        f.u_interp[static_cast<std::size_t>(a)].eval_with_grad(yw, val, grad);
        double ra = y[a] + val - x[a];
        ra -= std::round(ra); // shortest representative on the torus
        r[a] = ra;
        res = std::max(res, std::abs(ra));
        for (int b = 0; b < d; ++b) Jm[a * d + b] = grad[b] + (a == b ? 1.0 : 0.0);
      }
      if (res < 1e-13 && it >= 4) break;
      double Jinv[16];
      kflow::detail::invert_matrix(d, Jm, Jinv);
      for (int a = 0; a < d; ++a) {
        double step = 0.0;
        for (int b = 0; b < d; ++b) step += Jinv[a * d + b] * r[b];
        y[a] -= step;
      }
    }
    maxres[pt] = res;
    for (int a = 0; a < d; ++a) {
      double w = y[a] - x[a];
      f.inv_disp.at(static_cast<std::size_t>(a), pt) = w;
    }
  });
  double worst = 0.0;
  for (double r : maxres) worst = std::max(worst, r);
  if (worst > 1e-7) throw std::runtime_error("diffeo inversion failed (residual " + std::to_string(worst) + ")");
}

} // namespace detail

// classical RK4 over grid-seeded trajectories of a time-dependent field
inline DiscreteDiffeo integrate_flow(const GridSpec& spec,
                                     const std::function<TensorField(double)>& velocity, double T,
                                     int steps) {
  if (steps < 32) throw std::invalid_argument("integrate_flow: steps must be >= 32");
  const int d = spec.dim();
  const std::size_t N = spec.size();
  const double dt = T / steps;
  std::vector<std::array<double, 4>> pos(N);
  for (std::size_t pt = 0; pt < N; ++pt) {
    double x[4] = {0, 0, 0, 0};
    spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) pos[pt][static_cast<std::size_t>(a)] = x[a];
  }

  auto interps_of = [&](const TensorField& V) {
    std::vector<Interpolant> its;
    for (int a = 0; a < d; ++a) {
      ScalarField va(spec);
      std::copy(V.comp(static_cast<std::size_t>(a)), V.comp(static_cast<std::size_t>(a)) + N, va.data());
      its.push_back(Interpolant::build(va, 1e-14));
    }
    return its;
  };

  std::vector<Interpolant> V0 = interps_of(velocity(0.0));
  for (int s = 0; s < steps; ++s) {
    const double t0 = s * dt;
    std::vector<Interpolant> Vh = interps_of(velocity(t0 + dt / 2.0));
    std::vector<Interpolant> V1 = interps_of(velocity(t0 + dt));
    double vmax = 0.0;
    std::vector<double> vmaxs(N, 0.0);
    parallel_for(N, [&](std::size_t pt) {
      double k1[4], k2[4], k3[4], k4[4], xw[4];
      auto eval_at = [&](const std::vector<Interpolant>& V, const double* x, double* out) {
        double w[4];
        for (int a = 0; a < d; ++a) w[a] = x[a] - std::floor(x[a]);
        for (int a = 0; a < d; ++a) out[a] = V[static_cast<std::size_t>(a)].eval(w);
      };
      const double* x = pos[pt].data();
      eval_at(V0, x, k1);
      for (int a = 0; a < d; ++a) xw[a] = x[a] + 0.5 * dt * k1[a];
      eval_at(Vh, xw, k2);
      for (int a = 0; a < d; ++a) xw[a] = x[a] + 0.5 * dt * k2[a];
      eval_at(Vh, xw, k3);
      for (int a = 0; a < d; ++a) xw[a] = x[a] + dt * k3[a];
      eval_at(V1, xw, k4);
      double vm = 0.0;
      for (int a = 0; a < d; ++a) {
        pos[pt][static_cast<std::size_t>(a)] += dt / 6.0 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
        vm = std::max({vm, std::abs(k1[a]), std::abs(k4[a])});
      }
      vmaxs[pt] = vm;
    });
    for (double v : vmaxs) vmax = std::max(vmax, v);
    if (vmax * std::abs(dt) > 0.25) throw std::runtime_error("integrate_flow: step rejected (CFL guard)");
    V0 = std::move(V1);
  }

  DiscreteDiffeo f;
  f.spec = spec;
  f.disp = TensorField(spec, {Variance::Con});
  for (std::size_t pt = 0; pt < N; ++pt) {
    double x[4] = {0, 0, 0, 0};
    spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) f.disp.at(static_cast<std::size_t>(a), pt) = pos[pt][static_cast<std::size_t>(a)] - x[a];
  }
  // the displacement of a smooth flow has geometrically decaying modes; the
  // band above p/4 is integration noise and poisons downstream curvature
  f.disp = spectral_lowpass(f.disp, spec.p / 4);
  detail::build_jacobian(f);
  detail::build_interpolants(f);
  detail::build_inverse(f);
  return f;
}

// X_t := -grad^{phi(t)} phi_dot(t); integrating gives f_t^* omega_{phi(t)} = omega_{phi(0)}
inline DiscreteDiffeo moser_flow(const PotentialPath& path, double T, int steps) {
  auto velocity = [&path](double t) {
    GeometryCache geo = build_geometry(path.potential(t));
    TensorField X = gradient_field(geo, path.potential_dot(t));
    X *= -1.0;
    return X;
  };
  return integrate_flow(path.spec, velocity, T, steps);
}

// identity diffeo (zero displacement)
inline DiscreteDiffeo identity_diffeo(const GridSpec& spec) {
  DiscreteDiffeo f;
  f.spec = spec;
  f.disp = TensorField(spec, {Variance::Con});
  detail::build_jacobian(f);
  detail::build_interpolants(f);
  detail::build_inverse(f);
  return f;
}

// (f^*F)(x) = F(f(x))
inline ScalarField pullback(const ScalarField& F, const DiscreteDiffeo& f) {
  require_same_grid(F.spec, f.spec);
  const int d = f.spec.dim();
  Interpolant it = Interpolant::build(F, 1e-14);
  ScalarField out(F.spec);
  parallel_for(F.size(), [&](std::size_t pt) {
    double x[4] = {0, 0, 0, 0}, y[4];
    F.spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) {
      y[a] = x[a] + f.disp.at(static_cast<std::size_t>(a), pt);
      y[a] -= std::floor(y[a]);
    }
    out[pt] = it.eval(y);
  });
  return out;
}

// (f^*T)_{ab}(x) = Jac^c_a Jac^d_b T_{cd}(f(x)) for rank-2 covariant T
inline TensorField pullback_two_form(const TensorField& T, const DiscreteDiffeo& f) {
  require_same_grid(T.spec, f.spec);
  const int d = f.spec.dim();
  std::vector<Interpolant> its;
  for (std::size_t ci = 0; ci < T.ncomp(); ++ci) {
    ScalarField tc(T.spec);
    std::copy(T.comp(ci), T.comp(ci) + T.npts(), tc.data());
    its.push_back(Interpolant::build(tc, 1e-14));
  }
  TensorField out(T.spec, T.variance);
  parallel_for(T.npts(), [&](std::size_t pt) {
    double x[4] = {0, 0, 0, 0}, y[4];
    T.spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) {
      y[a] = x[a] + f.disp.at(static_cast<std::size_t>(a), pt);
      y[a] -= std::floor(y[a]);
    }
    double Tval[16];
    for (int c = 0; c < d; ++c)
      for (int e = 0; e < d; ++e) Tval[c * d + e] = its[static_cast<std::size_t>(c * d + e)].eval(y);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c)
          for (int e = 0; e < d; ++e)
            acc += f.jac.at(f.jac.cidx({c, a}), pt) * f.jac.at(f.jac.cidx({e, b}), pt) * Tval[c * d + e];
        out.at(out.cidx({a, b}), pt) = acc;
      }
  });
  return out;
}

// pullback endomorphism: (f^*S)(x) = Jac(x)^{-1} S(f(x)) Jac(x)
inline TensorField pullback_endomorphism(const TensorField& S, const DiscreteDiffeo& f) {
  require_same_grid(S.spec, f.spec);
  const int d = f.spec.dim();
  std::vector<Interpolant> its;
  for (std::size_t ci = 0; ci < S.ncomp(); ++ci) {
    ScalarField tc(S.spec);
    std::copy(S.comp(ci), S.comp(ci) + S.npts(), tc.data());
    its.push_back(Interpolant::build(tc, 1e-14));
  }
  TensorField out(S.spec, S.variance);
  parallel_for(S.npts(), [&](std::size_t pt) {
    double x[4] = {0, 0, 0, 0}, y[4];
    S.spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) {
      y[a] = x[a] + f.disp.at(static_cast<std::size_t>(a), pt);
      y[a] -= std::floor(y[a]);
    }
    double Sval[16], Jm[16], Jinv[16];
    for (int c = 0; c < d; ++c)
      for (int e = 0; e < d; ++e) {
        Sval[c * d + e] = its[static_cast<std::size_t>(c * d + e)].eval(y);
        Jm[c * d + e] = f.jac.at(f.jac.cidx({c, e}), pt);
      }
    kflow::detail::invert_matrix(d, Jm, Jinv);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c)
          for (int e = 0; e < d; ++e) acc += Jinv[a * d + c] * Sval[c * d + e] * Jm[e * d + b];
        out.at(out.cidx({a, b}), pt) = acc;
      }
  });
  return out;
}

// pullback connection coefficients:
// Gamma''^c_{ab}(x) = (Jac^{-1})^c_g [ Gamma'^g_{αβ}(f(x)) Jac^α_a Jac^β_b + d_a Jac^g_b (x) ]
inline TensorField pullback_connection(const TensorField& gamma, const DiscreteDiffeo& f) {
  require_same_grid(gamma.spec, f.spec);
  const int d = f.spec.dim();
  std::vector<Interpolant> its;
  for (std::size_t ci = 0; ci < gamma.ncomp(); ++ci) {
    ScalarField tc(gamma.spec);
    std::copy(gamma.comp(ci), gamma.comp(ci) + gamma.npts(), tc.data());
    its.push_back(Interpolant::build(tc, 1e-14));
  }
  std::vector<TensorField> dJac;
  for (int a = 0; a < d; ++a) dJac.push_back(partial_derivative(f.jac, a));
  TensorField out(gamma.spec, gamma.variance);
  parallel_for(gamma.npts(), [&](std::size_t pt) {
    double x[4] = {0, 0, 0, 0}, y[4];
    gamma.spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) {
      y[a] = x[a] + f.disp.at(static_cast<std::size_t>(a), pt);
      y[a] -= std::floor(y[a]);
    }
    double G[64], Jm[16], Jinv[16];
    for (std::size_t ci = 0; ci < gamma.ncomp(); ++ci) G[ci] = its[ci].eval(y);
    for (int c = 0; c < d; ++c)
      for (int e = 0; e < d; ++e) Jm[c * d + e] = f.jac.at(f.jac.cidx({c, e}), pt);
    kflow::detail::invert_matrix(d, Jm, Jinv);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c) {
          double acc = 0.0;
          for (int g = 0; g < d; ++g) {
            double inner = dJac[static_cast<std::size_t>(a)].at(f.jac.cidx({g, b}), pt);
            for (int al = 0; al < d; ++al)
              for (int be = 0; be < d; ++be)
                inner += G[gamma.cidx({g, al, be})] * Jm[al * d + a] * Jm[be * d + b];
            acc += Jinv[c * d + g] * inner;
          }
          out.at(out.cidx({c, a, b}), pt) = acc;
        }
  });
  return out;
}

// J_t = f^{-1}.J = Jac^{-1} J Jac for the constant standard J
inline TensorField pulled_back_complex_structure(const DiscreteDiffeo& f) {
  const int d = f.spec.dim();
  const auto J = std_J(f.spec);
  TensorField out(f.spec, {Variance::Con, Variance::Cov});
  parallel_for(f.spec.size(), [&](std::size_t pt) {
    double Jm[16], Jinv[16];
    for (int c = 0; c < d; ++c)
      for (int e = 0; e < d; ++e) Jm[c * d + e] = f.jac.at(f.jac.cidx({c, e}), pt);
    kflow::detail::invert_matrix(d, Jm, Jinv);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c)
          for (int e = 0; e < d; ++e) acc += Jinv[a * d + c] * J[static_cast<std::size_t>(c) * d + e] * Jm[e * d + b];
        out.at(out.cidx({a, b}), pt) = acc;
      }
  });
  return out;
}

// sup norm of f_t^* omega_{phi(t)} - omega_{phi(0)}
inline double moser_residual(const PotentialPath& path, const DiscreteDiffeo& f, double t) {
  GeometryCache geo_t = build_geometry(path.potential(t));
  GeometryCache geo_0 = build_geometry(path.potential(0.0));
  TensorField pb = pullback_two_form(geo_t.omega, f);
  pb -= geo_0.omega;
  return pb.sup_norm();
}

// metric of omega(. , J_t .) from a pulled-back complex structure, symmetrized
inline TensorField metric_of_acs(const TensorField& omega, const TensorField& Jt) {
  const int d = omega.spec.dim();
  TensorField g(omega.spec, {Variance::Cov, Variance::Cov});
  parallel_for(omega.npts(), [&](std::size_t pt) {
    double m[16];
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += omega.at(omega.cidx({a, c}), pt) * Jt.at(Jt.cidx({c, b}), pt);
        m[a * d + b] = acc;
      }
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) g.at(g.cidx({a, b}), pt) = 0.5 * (m[a * d + b] + m[b * d + a]);
  });
  return g;
}

// sup norm of mu(lc(J_t)) - f_t^*( mu^{phi(t)}(nabla^{phi(t)}) )
inline double lemma_main_residual(const PotentialPath& path, double t, int steps = 64) {
  DiscreteDiffeo f = moser_flow(path, t, steps);
  GeometryCache geo0 = build_geometry(path.potential(0.0));
  TensorField Jt = pulled_back_complex_structure(f);
  TensorField gJt = spectral_lowpass(metric_of_acs(geo0.omega, Jt), f.spec.p / 4);
  GeometryCache geoJt = metric_geometry(geo0.omega, gJt);
  MomentMap mJt = moment_map(geoJt);

  GeometryCache geot = build_geometry(path.potential(t));
  MomentMap mt = moment_map(geot);
  ScalarField pulled = pullback(mt.mu, f);

  ScalarField diff = mJt.mu - pulled;
  return diff.sup_norm();
}

} // namespace kflow
