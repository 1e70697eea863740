#pragma once

// Truncated star products and trace-density diagnostics: order-3 Fedosov,
// order-2 Wick, the chi-deformed commutator, and the Donaldson moment map.

#include "acs.hpp"

namespace kflow {

// Convention block (values verified numerically against the moment-map
// identities and recorded in reports):
//  - the nu^2 Fedosov coefficient is 1/8 (the exponential normalization; the
//    commonly printed 1/4 fails associativity at order nu^2),
//  - the nu^3 commutator term carries kFedosovNu3Sign so that
//    rho = 1 + (nu^2/24) mu is a trace density,
//  - the Wick kernel is sum_r (i nu)^r/r! Lambda^{a b-bar ...} with
//    Lambda^{a b-bar} the complex-frame components of Lambda (= i g^{a b-bar});
//    its nu^1 antisymmetrization is i {F,H} (recorded constant),
//  - rho_wick = 1 + nu kWickDensityCoeff Scal (Riemannian Scal),
//  - rho_chi = 1 + nu kChiDensityCoeff Lambda^{ij} chi_{ij}.
inline constexpr double kFedosovNu2Coeff = 0.125;
inline constexpr double kFedosovNu3Sign = -1.0;
inline constexpr double kWickDensityCoeff = -0.25;
inline constexpr double kChiDensityCoeff = -0.5;
inline constexpr double kChiProductKPrimeDefault = 0.25;

template <class T>
struct NuSeries {
  GridSpec spec;
  std::vector<BasicField<T>> coef; // c0 .. cK

  NuSeries() = default;
  NuSeries(const GridSpec& s, int K) : spec(s) {
    for (int k = 0; k <= K; ++k) coef.emplace_back(s);
  }
  int order() const { return static_cast<int>(coef.size()) - 1; }

  NuSeries& operator+=(const NuSeries& o) {
    for (std::size_t k = 0; k < coef.size() && k < o.coef.size(); ++k) coef[k] += o.coef[k];
    return *this;
  }
  NuSeries& operator-=(const NuSeries& o) {
    for (std::size_t k = 0; k < coef.size() && k < o.coef.size(); ++k) coef[k] -= o.coef[k];
    return *this;
  }
  friend NuSeries operator-(NuSeries a, const NuSeries& b) { return a -= b; }

  // product truncated at this->order()
  NuSeries mul(const NuSeries& o) const {
    NuSeries out(spec, order());
    for (int k = 0; k <= order(); ++k)
      for (int i = 0; i <= k; ++i) {
        const int j = k - i;
        if (i > order() || j > o.order()) continue;
        for (std::size_t pt = 0; pt < out.coef[0].size(); ++pt)
          out.coef[static_cast<std::size_t>(k)][pt] +=
              coef[static_cast<std::size_t>(i)][pt] * o.coef[static_cast<std::size_t>(j)][pt];
      }
    return out;
  }
};

// covariant Hessian (nabla^2 F)_{ab} = d_a d_b F - Gamma^c_{ab} d_c F
inline TensorField covariant_hessian(const ScalarField& F, const ConnectionPack& pk) {
  const int d = F.spec.dim();
  TensorField H = hessian_partials(F);
  std::vector<ScalarField> dF;
  for (int a = 0; a < d; ++a) dF.push_back(partial_derivative(F, a));
  parallel_for(F.size(), [&](std::size_t pt) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double corr = 0.0;
        for (int c = 0; c < d; ++c)
          corr += pk.christoffel.at(pk.christoffel.cidx({c, a, b}), pt) * dF[static_cast<std::size_t>(c)][pt];
        H.at(H.cidx({a, b}), pt) -= corr;
      }
  });
  return H;
}

// S^3_nabla(F,H): triple-Lambda contraction of the lowered Lie derivative tensors
inline ScalarField s3_pairing(const ScalarField& F, const ScalarField& H, const GeometryCache& geo,
                              const ConnectionPack* conn = nullptr) {
  const ConnectionPack& pk = conn ? *conn : geo.conn;
  Sym3Tensor AF = lie_derivative_connection(F, geo, &pk);
  Sym3Tensor AH = lie_derivative_connection(H, geo, &pk);
  const int d = geo.spec.dim();
  ScalarField out(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double L[16];
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) L[i * d + j] = geo.Lambda.at(geo.Lambda.cidx({i, j}), pt);
    double buf0[64], buf1[64];
    const std::size_t nc = AH.t.ncomp();
    for (std::size_t ci = 0; ci < nc; ++ci) buf0[ci] = AH.t.at(ci, pt);
    std::size_t inner = nc / static_cast<std::size_t>(d);
    for (int slot = 0; slot < 3; ++slot) {
      const std::size_t outer = nc / (inner * static_cast<std::size_t>(d));
      for (std::size_t o = 0; o < outer; ++o)
        for (int k = 0; k < d; ++k)
          for (std::size_t in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (int a = 0; a < d; ++a) acc += L[k * d + a] * buf0[(o * d + static_cast<std::size_t>(a)) * inner + in];
            buf1[(o * d + static_cast<std::size_t>(k)) * inner + in] = acc;
          }
      std::copy(buf1, buf1 + nc, buf0);
      inner /= static_cast<std::size_t>(d);
    }
    double acc = 0.0;
    for (std::size_t ci = 0; ci < nc; ++ci) acc += AF.t.at(ci, pt) * buf0[ci];
    out[pt] = acc;
  });
  return out;
}

// F *_{nabla,0} H truncated at nu^3
inline NuSeries<double> fedosov_product(const ScalarField& F, const ScalarField& H, const GeometryCache& geo,
                                        const ConnectionPack* conn = nullptr) {
  require_same_grid(F.spec, H.spec);
  require_same_grid(F.spec, geo.spec);
  const ConnectionPack& pk = conn ? *conn : geo.conn;
  NuSeries<double> s(geo.spec, 3);
  s.coef[0] = F * H;
  ScalarField pb = poisson(geo, F, H);
  pb *= 0.5;
  s.coef[1] = pb;
  TensorField hF = covariant_hessian(F, pk), hH = covariant_hessian(H, pk);
  ScalarField c2 = contract2_raised(geo, hF, hH);
  c2 *= kFedosovNu2Coeff;
  s.coef[2] = c2;
  ScalarField c3 = s3_pairing(F, H, geo, &pk);
  c3 *= kFedosovNu3Sign / 48.0;
  s.coef[3] = c3;
  return s;
}

enum class ProductKind { Fedosov, Wick, Chi };

// per-order coefficients of int [F,H] rho omega^n/n!, orders nu^1..nu^K
inline std::vector<double> trace_defect(const ScalarField& F, const ScalarField& H,
                                        const NuSeries<double>& rho, const GeometryCache& geo,
                                        const ConnectionPack* conn = nullptr) {
  NuSeries<double> comm = fedosov_product(F, H, geo, conn) - fedosov_product(H, F, geo, conn);
  if (rho.order() < comm.order()) throw std::invalid_argument("trace_defect: rho truncation too short");
  NuSeries<double> prod = comm.mul(rho);
  std::vector<double> out;
  for (int k = 1; k <= prod.order(); ++k)
    out.push_back(integrate_volume(geo, prod.coef[static_cast<std::size_t>(k)]));
  return out;
}

// rho = 1 + (nu^2/24) mu for the Fedosov product
inline NuSeries<double> fedosov_density(const GeometryCache& geo, const MomentMap& mm) {
  NuSeries<double> rho(geo.spec, 3);
  rho.coef[0] = ScalarField(geo.spec, 1.0);
  rho.coef[2] = mm.mu;
  rho.coef[2] *= 1.0 / 24.0;
  return rho;
}

inline NuSeries<double> unit_density(const GridSpec& spec, int K) {
  NuSeries<double> rho(spec, K);
  rho.coef[0] = ScalarField(spec, 1.0);
  return rho;
}

// ---------------------------------------------------------------------------
// Wick product (standard J, curved omega_phi geometry), truncated at nu^2

namespace detail {
// complex frame coefficients: dz^a eats (1, +i), dz-bar^b eats (1, -i)
struct ComplexFrame {
  int n;
  // (nabla^2 F)_{alpha beta} and Lambda^{alpha beta-bar} assembled pointwise
};
} // namespace detail

inline NuSeries<cplx> wick_product(const ScalarField& F, const ScalarField& H, const GeometryCache& geo) {
  require_same_grid(F.spec, H.spec);
  require_same_grid(F.spec, geo.spec);
  const int n = geo.spec.n, d = geo.spec.dim();
  NuSeries<cplx> s(geo.spec, 2);
  for (std::size_t pt = 0; pt < F.size(); ++pt) s.coef[0][pt] = F[pt] * H[pt];

  std::vector<ScalarField> dF, dH;
  for (int a = 0; a < d; ++a) {
    dF.push_back(partial_derivative(F, a));
    dH.push_back(partial_derivative(H, a));
  }
  TensorField hF = covariant_hessian(F, geo.conn), hH = covariant_hessian(H, geo.conn);

  parallel_for(F.size(), [&](std::size_t pt) {
    // Lambda^{alpha beta-bar} = Lambda^{ab} (dz^alpha)_a (dz-bar^beta)_b
    cplx Lc[2][2];
    for (int al = 0; al < n; ++al)
      for (int be = 0; be < n; ++be) {
        cplx acc = 0.0;
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b) {
            const double lab = geo.Lambda.at(geo.Lambda.cidx({a, b}), pt);
            if (lab == 0.0) continue;
            cplx za = (a == al) ? cplx(1, 0) : (a == n + al ? cplx(0, 1) : cplx(0, 0));
            cplx zb = (b == be) ? cplx(1, 0) : (b == n + be ? cplx(0, -1) : cplx(0, 0));
            acc += lab * za * zb;
          }
        Lc[al][be] = acc;
      }
    // holomorphic first derivatives dF_alpha = (dF_x - i dF_y)/2, conjugate for H
    cplx dFh[2], dHa[2];
    for (int al = 0; al < n; ++al) {
      dFh[al] = 0.5 * cplx(dF[static_cast<std::size_t>(al)][pt], -dF[static_cast<std::size_t>(n + al)][pt]);
      dHa[al] = 0.5 * cplx(dH[static_cast<std::size_t>(al)][pt], dH[static_cast<std::size_t>(n + al)][pt]);
    }
    cplx c1 = 0.0;
    for (int al = 0; al < n; ++al)
      for (int be = 0; be < n; ++be) c1 += cplx(0, 1) * Lc[al][be] * dFh[al] * dHa[be];
    s.coef[1][pt] = c1;
    // holomorphic-holomorphic Hessian of F, conjugate frame for H
    auto hess_h = [&](const TensorField& Hs, int a1, int a2, double sgn) {
      const double hxx = Hs.at(Hs.cidx({a1, a2}), pt);
      const double hxy = Hs.at(Hs.cidx({a1, n + a2}), pt);
      const double hyx = Hs.at(Hs.cidx({n + a1, a2}), pt);
      const double hyy = Hs.at(Hs.cidx({n + a1, n + a2}), pt);
      return 0.25 * cplx(hxx - hyy, sgn * (hxy + hyx));
    };
    cplx c2 = 0.0;
    for (int a1 = 0; a1 < n; ++a1)
      for (int a2 = 0; a2 < n; ++a2)
        for (int b1 = 0; b1 < n; ++b1)
          for (int b2 = 0; b2 < n; ++b2)
            c2 += Lc[a1][b1] * Lc[a2][b2] * hess_h(hF, a1, a2, -1.0) * hess_h(hH, b1, b2, +1.0);
    s.coef[2][pt] = 0.5 * cplx(0, 1) * cplx(0, 1) * c2; // (i nu)^2 / 2!
  });
  return s;
}

// coefficients of int [F,H]_wick rho omega^n/n! through nu^2,
// rho = 1 + nu kWickDensityCoeff Scal
inline std::vector<cplx> wick_trace_defect(const ScalarField& F, const ScalarField& H,
                                           const GeometryCache& geo, double density_coeff = kWickDensityCoeff) {
  NuSeries<cplx> comm = wick_product(F, H, geo);
  NuSeries<cplx> hw = wick_product(H, F, geo);
  comm -= hw;
  NuSeries<cplx> rho(geo.spec, 2);
  for (std::size_t pt = 0; pt < rho.coef[0].size(); ++pt) {
    rho.coef[0][pt] = 1.0;
    rho.coef[1][pt] = density_coeff * geo.scal[pt];
  }
  NuSeries<cplx> prod = comm.mul(rho);
  std::vector<cplx> out;
  for (int k = 1; k <= 2; ++k) out.push_back(integrate_volume(geo, prod.coef[static_cast<std::size_t>(k)]));
  return out;
}

// ---------------------------------------------------------------------------
// chi-deformed Fedosov commutator

struct ClosedTwoForm {
  TensorField chi;
  double closedness_residual = 0.0;
};

inline double exterior_derivative_residual(const TensorField& chi) {
  const int d = chi.spec.dim();
  std::vector<TensorField> dchi;
  for (int a = 0; a < d; ++a) dchi.push_back(partial_derivative(chi, a));
  double res = 0.0;
  for (int a = 0; a < d; ++a)
    for (int b = a + 1; b < d; ++b)
      for (int c = b + 1; c < d; ++c) {
        const double* t1 = dchi[static_cast<std::size_t>(a)].comp(chi.cidx({b, c}));
        const double* t2 = dchi[static_cast<std::size_t>(b)].comp(chi.cidx({a, c}));
        const double* t3 = dchi[static_cast<std::size_t>(c)].comp(chi.cidx({a, b}));
        for (std::size_t pt = 0; pt < chi.npts(); ++pt)
          res = std::max(res, std::abs(t1[pt] - t2[pt] + t3[pt]));
      }
  return res;
}

inline ClosedTwoForm make_closed_two_form(TensorField chi) {
  ClosedTwoForm out;
  out.closedness_residual = (chi.spec.dim() >= 3) ? exterior_derivative_residual(chi) : 0.0;
  if (out.closedness_residual > 1e-9)
    throw std::invalid_argument("ClosedTwoForm: d chi residual " + std::to_string(out.closedness_residual));
  out.chi = std::move(chi);
  return out;
}

// chi = d alpha for a 1-form alpha (rank-1 covariant field)
inline ClosedTwoForm exact_two_form(const TensorField& alpha) {
  const int d = alpha.spec.dim();
  TensorField chi(alpha.spec, {Variance::Cov, Variance::Cov});
  for (int a = 0; a < d; ++a) {
    ScalarField al(alpha.spec);
    std::copy(alpha.comp(static_cast<std::size_t>(a)), alpha.comp(static_cast<std::size_t>(a)) + alpha.npts(),
              al.data());
    for (int b = 0; b < d; ++b) {
      if (a == b) continue;
      ScalarField der = partial_derivative(al, b); // d_b alpha_a
      double* o = chi.comp(chi.cidx({b, a}));
      const double* src = der.data();
      for (std::size_t pt = 0; pt < chi.npts(); ++pt) o[pt] += src[pt];
      double* o2 = chi.comp(chi.cidx({a, b}));
      for (std::size_t pt = 0; pt < chi.npts(); ++pt) o2[pt] -= src[pt];
    }
  }
  return make_closed_two_form(std::move(chi));
}

inline ScalarField lambda_trace(const GeometryCache& geo, const TensorField& two_form) {
  const int d = geo.spec.dim();
  ScalarField out(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        acc += geo.Lambda.at(geo.Lambda.cidx({i, j}), pt) * two_form.at(two_form.cidx({i, j}), pt);
    out[pt] = acc;
  });
  return out;
}

// [F,H]_{nabla,nu chi} = nu {F,H} + nu^2 chi(X_F, X_H) + O(nu^3);
// defect coefficients with rho = 1 + nu kChiDensityCoeff Lambda^{ij} chi_{ij}
inline std::vector<double> chi_commutator_defect(const ScalarField& F, const ScalarField& H,
                                                 const ClosedTwoForm& chi, const GeometryCache& geo,
                                                 double density_coeff = kChiDensityCoeff) {
  NuSeries<double> comm(geo.spec, 2);
  comm.coef[1] = poisson(geo, F, H);
  TensorField XF = hamiltonian_field(geo, F), XH = hamiltonian_field(geo, H);
  const int d = geo.spec.dim();
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        acc += chi.chi.at(chi.chi.cidx({a, b}), pt) * XF.at(static_cast<std::size_t>(a), pt) *
               XH.at(static_cast<std::size_t>(b), pt);
    comm.coef[2][pt] = acc;
  });
  NuSeries<double> rho(geo.spec, 2);
  rho.coef[0] = ScalarField(geo.spec, 1.0);
  rho.coef[1] = lambda_trace(geo, chi.chi);
  rho.coef[1] *= density_coeff;
  NuSeries<double> prod = comm.mul(rho);
  return {integrate_volume(geo, prod.coef[1]), integrate_volume(geo, prod.coef[2])};
}

// full chi-product through nu^2 (k' config-exposed; cancels in commutators)
inline NuSeries<double> chi_product(const ScalarField& F, const ScalarField& H, const ClosedTwoForm& chi,
                                    const GeometryCache& geo, double kprime = kChiProductKPrimeDefault) {
  NuSeries<double> s(geo.spec, 2);
  s.coef[0] = F * H;
  ScalarField pb = poisson(geo, F, H);
  pb *= 0.5;
  s.coef[1] = pb;
  TensorField XF = hamiltonian_field(geo, F), XH = hamiltonian_field(geo, H);
  const int d = geo.spec.dim();
  TensorField hF = covariant_hessian(F, geo.conn), hH = covariant_hessian(H, geo.conn);
  ScalarField sym = contract2_raised(geo, hF, hH);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        acc += chi.chi.at(chi.chi.cidx({a, b}), pt) * XF.at(static_cast<std::size_t>(a), pt) *
               XH.at(static_cast<std::size_t>(b), pt);
    s.coef[2][pt] = 0.5 * acc + kprime * sym[pt];
  });
  return s;
}

// ---------------------------------------------------------------------------
// Donaldson moment map on Diff_0(M) for a nondegenerate closed chi

// mu(f) omega^n/n! = -(f^* chi) ^ omega^{n-1}/(n-1)!; pointwise this is
// 1/2 Lambda^{ij} (f^* chi)_{ij}
inline ScalarField donaldson_moment(const DiscreteDiffeo& f, const ClosedTwoForm& chi,
                                    const GeometryCache& geo) {
  TensorField pb = pullback_two_form(chi.chi, f);
  ScalarField out = lambda_trace(geo, pb);
  out *= 0.5;
  return out;
}

// | d/dt int F mu(f_t) - Omega^M((X_F)^{*M}, V) | along the Hamiltonian flow
// of G, evaluated at t0
inline double donaldson_moment_residual(const ScalarField& F, const ScalarField& G,
                                        const ClosedTwoForm& chi, const GeometryCache& geo, double t0,
                                        double h = 1e-3, int steps = 32) {
  TensorField XG = hamiltonian_field(geo, G);
  auto velocity = [&XG](double) { return XG; };
  ScalarField Fz = F;
  remove_mean_volume(geo, Fz);

  auto value = [&](double t) {
    DiscreteDiffeo f = integrate_flow(geo.spec, velocity, t0 + t, steps);
    ScalarField mu = donaldson_moment(f, chi, geo);
    return integrate_volume(geo, Fz * mu);
  };
  const double lhs = richardson_derivative(value, h);

  DiscreteDiffeo f0 = integrate_flow(geo.spec, velocity, t0, steps);
  TensorField XF = hamiltonian_field(geo, Fz);
  const int d = geo.spec.dim();
  std::vector<Interpolant> chi_its, xg_its;
  for (std::size_t ci = 0; ci < chi.chi.ncomp(); ++ci) {
    ScalarField tc(geo.spec);
    std::copy(chi.chi.comp(ci), chi.chi.comp(ci) + chi.chi.npts(), tc.data());
    chi_its.push_back(Interpolant::build(tc, 1e-14));
  }
  for (int a = 0; a < d; ++a) {
    ScalarField tc(geo.spec);
    std::copy(XG.comp(static_cast<std::size_t>(a)), XG.comp(static_cast<std::size_t>(a)) + XG.npts(), tc.data());
    xg_its.push_back(Interpolant::build(tc, 1e-14));
  }
  ScalarField dens(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double x[4] = {0, 0, 0, 0}, y[4];
    geo.spec.point_coords(pt, x);
    for (int a = 0; a < d; ++a) {
      y[a] = x[a] + f0.disp.at(static_cast<std::size_t>(a), pt);
      y[a] -= std::floor(y[a]);
    }
    double U[4], V[4];
    for (int a = 0; a < d; ++a) {
      double acc = 0.0;
      for (int b = 0; b < d; ++b) acc += f0.jac.at(f0.jac.cidx({a, b}), pt) * XF.at(static_cast<std::size_t>(b), pt);
      U[a] = acc;
      V[a] = xg_its[static_cast<std::size_t>(a)].eval(y);
    }
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) acc += chi_its[static_cast<std::size_t>(a * d + b)].eval(y) * U[a] * V[b];
    dens[pt] = acc;
  });
  const double rhs = integrate_volume(geo, dens);
  return std::abs(lhs - rhs);
}

// seeded search for a witness pair with |int {F,H} mu| well away from zero
template <class Rng>
inline std::pair<ScalarField, ScalarField> find_witness_pair(const GeometryCache& geo, const MomentMap& mm,
                                                             Rng& rng, int tries = 24) {
  std::uniform_int_distribution<int> kd(-2, 2);
  std::uniform_real_distribution<double> ph(0.0, two_pi);
  double best = -1.0;
  ScalarField bf(geo.spec), bh(geo.spec);
  const int d = geo.spec.dim();
  for (int t = 0; t < tries; ++t) {
    std::vector<int> k1(static_cast<std::size_t>(d)), k2(static_cast<std::size_t>(d));
    bool nz1 = false, nz2 = false;
    for (int a = 0; a < d; ++a) {
      k1[static_cast<std::size_t>(a)] = kd(rng);
      k2[static_cast<std::size_t>(a)] = kd(rng);
      nz1 |= k1[static_cast<std::size_t>(a)] != 0;
      nz2 |= k2[static_cast<std::size_t>(a)] != 0;
    }
    if (!nz1 || !nz2) continue;
    ScalarField F = trig_field(geo.spec, k1, 1.0, ph(rng));
    ScalarField H = trig_field(geo.spec, k2, 1.0, ph(rng));
    const double v = std::abs(integrate_volume(geo, poisson(geo, F, H) * mm.mu_tilde));
    if (v > best) {
      best = v;
      bf = F;
      bh = H;
    }
  }
  return {bf, bh};
}

} // namespace kflow
