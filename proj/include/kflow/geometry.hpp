#pragma once

// Kahler geometry of the torus: omega_phi = omega + dd^c phi, the metric
// g_phi = omega_phi(.,J.), Levi-Civita connection, curvature stack, scalar
// operators, and curvature of arbitrary symplectic connections nabla + A.

#include <Eigen/Dense>

#include "grid.hpp"

namespace kflow {

// standard complex structure, J dx^j = dy^j direction: J e_{x_j} = e_{y_j}
inline std::vector<double> std_J(const GridSpec& spec) {
  const int d = spec.dim(), n = spec.n;
  std::vector<double> J(static_cast<std::size_t>(d) * d, 0.0);
  for (int j = 0; j < n; ++j) {
    J[static_cast<std::size_t>((n + j)) * d + j] = 1.0;  // J^{y_j}_{x_j} = 1
    J[static_cast<std::size_t>(j) * d + (n + j)] = -1.0; // J^{x_j}_{y_j} = -1
  }
  return J;
}

inline TensorField std_omega(const GridSpec& spec) {
  const int d = spec.dim(), n = spec.n;
  TensorField w(spec, {Variance::Cov, Variance::Cov});
  for (int j = 0; j < n; ++j) {
    auto* a = w.comp(w.cidx({j, n + j}));
    auto* b = w.comp(w.cidx({n + j, j}));
    for (std::size_t i = 0; i < w.npts(); ++i) {
      a[i] = 1.0;
      b[i] = -1.0;
    }
  }
  return w;
}

namespace detail {

inline void invert_matrix(int d, const double* in, double* out) {
  if (d == 2) {
    const double det = in[0] * in[3] - in[1] * in[2];
    out[0] = in[3] / det;
    out[1] = -in[1] / det;
    out[2] = -in[2] / det;
    out[3] = in[0] / det;
  } else {
    using M4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;
    Eigen::Map<const M4> A(in);
    Eigen::Map<M4> B(out);
    B = A.inverse();
  }
}

inline double min_eig_sym(int d, const double* in) {
  if (d == 2) {
    const double tr = in[0] + in[3];
    const double det = in[0] * in[3] - in[1] * in[2];
    const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
    return tr / 2.0 - disc;
  }
  using M4 = Eigen::Matrix<double, 4, 4, Eigen::RowMajor>;
  Eigen::Map<const M4> A(in);
  Eigen::Matrix4d sym = A;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es;
  es.compute(sym);
  return es.eigenvalues().minCoeff();
}

inline double pfaffian(int d, const double* w) {
  if (d == 2) return w[0 * 2 + 1];
  return w[0 * 4 + 1] * w[2 * 4 + 3] - w[0 * 4 + 2] * w[1 * 4 + 3] + w[0 * 4 + 3] * w[1 * 4 + 2];
}

} // namespace detail

// plain second partials, slots [a, b]
inline TensorField hessian_partials(const ScalarField& F) {
  const int d = F.spec.dim();
  TensorField H(F.spec, {Variance::Cov, Variance::Cov});
  for (int a = 0; a < d; ++a) {
    ScalarField da = partial_derivative(F, a);
    for (int b = a; b < d; ++b) {
      ScalarField dab = (a == b) ? partial_derivative(F, a, 2) : partial_derivative(da, b);
      std::copy(dab.data(), dab.data() + H.npts(), H.comp(H.cidx({a, b})));
      if (b != a) std::copy(dab.data(), dab.data() + H.npts(), H.comp(H.cidx({b, a})));
    }
  }
  return H;
}

// dd^c F with d^c F := -dF o J; J is the standard constant complex structure.
inline TensorField ddc(const ScalarField& F) {
  const int d = F.spec.dim();
  const auto J = std_J(F.spec);
  TensorField H = hessian_partials(F);
  TensorField out(F.spec, {Variance::Cov, Variance::Cov});
  for (int p = 0; p < d; ++p)
    for (int q = 0; q < d; ++q) {
      double* o = out.comp(out.cidx({p, q}));
      for (int c = 0; c < d; ++c) {
        const double jcp = J[static_cast<std::size_t>(c) * d + p];
        const double jcq = J[static_cast<std::size_t>(c) * d + q];
        if (jcp == 0.0 && jcq == 0.0) continue;
        const double* hqc = H.comp(H.cidx({q, c}));
        const double* hpc = H.comp(H.cidx({p, c}));
        for (std::size_t i = 0; i < out.npts(); ++i) o[i] += jcp * hqc[i] - jcq * hpc[i];
      }
    }
  return out;
}

// Mean-zero potential phi with omega_phi = omega + dd^c phi.
struct KahlerPotential {
  ScalarField phi;
  explicit KahlerPotential(ScalarField f) : phi(std::move(f)) { remove_mean(phi); }
};

struct ConnectionPack {
  TensorField christoffel;  // Gamma^k_{ij}, slots [k con, i, j]
  TensorField riemann;      // R^s_{pqr},   slots [s con, p, q, r]
  TensorField riemann_low;  // R_{pqrs} = omega(R(e_p,e_q)e_r, e_s)
  TensorField ricci;        // Ric_{pq} = tr[V -> R(V, e_p)e_q]
};

struct GeometryCache {
  GridSpec spec;
  std::vector<double> J; // constant standard complex structure
  TensorField omega, Lambda; // Lambda^{kl} omega_{lt} = delta^k_t
  TensorField g, g_inv;
  ConnectionPack conn;
  TensorField ricci_form; // rho_{pq} = Ric(J e_p, e_q)
  ScalarField scal;       // g-contraction of Ric
  ScalarField volume;     // omega^n/n! against the coordinate volume
  double positivity_margin = 0.0;
};

// Gamma^k_{ij} = 1/2 g^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij})
inline TensorField christoffel_of_metric(const TensorField& g, const TensorField& g_inv) {
  const int d = g.spec.dim();
  const std::size_t N = g.npts();
  std::vector<TensorField> dg;
  dg.reserve(static_cast<std::size_t>(d));
  for (int a = 0; a < d; ++a) dg.push_back(partial_derivative(g, a));
  TensorField gamma(g.spec, {Variance::Con, Variance::Cov, Variance::Cov});
  parallel_for(N, [&](std::size_t pt) {
    double sym[4][4][4]; // (d_i g_jl + d_j g_il - d_l g_ij)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l)
          sym[i][j][l] = dg[static_cast<std::size_t>(i)].at(g.cidx({j, l}), pt) +
                         dg[static_cast<std::size_t>(j)].at(g.cidx({i, l}), pt) -
                         dg[static_cast<std::size_t>(l)].at(g.cidx({i, j}), pt);
    for (int k = 0; k < d; ++k)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
          double acc = 0.0;
          for (int l = 0; l < d; ++l) acc += g_inv.at(g.cidx({k, l}), pt) * sym[i][j][l];
          gamma.at(gamma.cidx({k, i, j}), pt) = 0.5 * acc;
        }
  });
  return gamma;
}

// R^s_{pqr} = d_p Gamma^s_{qr} - d_q Gamma^s_{pr} + Gamma^a_{qr} Gamma^s_{pa} - Gamma^a_{pr} Gamma^s_{qa}
inline TensorField riemann_of_christoffel(const TensorField& gamma) {
  const int d = gamma.spec.dim();
  const std::size_t N = gamma.npts();
  std::vector<TensorField> dGamma;
  dGamma.reserve(static_cast<std::size_t>(d));
  for (int a = 0; a < d; ++a) dGamma.push_back(partial_derivative(gamma, a));
  TensorField R(gamma.spec, {Variance::Con, Variance::Cov, Variance::Cov, Variance::Cov});
  parallel_for(N, [&](std::size_t pt) {
    for (int s = 0; s < d; ++s)
      for (int p = 0; p < d; ++p)
        for (int q = p + 1; q < d; ++q)
          for (int r = 0; r < d; ++r) {
            double acc = dGamma[static_cast<std::size_t>(p)].at(gamma.cidx({s, q, r}), pt) -
                         dGamma[static_cast<std::size_t>(q)].at(gamma.cidx({s, p, r}), pt);
            for (int a = 0; a < d; ++a)
              acc += gamma.at(gamma.cidx({a, q, r}), pt) * gamma.at(gamma.cidx({s, p, a}), pt) -
                     gamma.at(gamma.cidx({a, p, r}), pt) * gamma.at(gamma.cidx({s, q, a}), pt);
            R.at(R.cidx({s, p, q, r}), pt) = acc;
            R.at(R.cidx({s, q, p, r}), pt) = -acc;
          }
  });
  return R;
}

inline TensorField lower_riemann(const TensorField& R, const TensorField& omega) {
  const int d = R.spec.dim();
  TensorField RL(R.spec, {Variance::Cov, Variance::Cov, Variance::Cov, Variance::Cov});
  parallel_for(R.npts(), [&](std::size_t pt) {
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q)
        for (int r = 0; r < d; ++r)
          for (int s = 0; s < d; ++s) {
            double acc = 0.0;
            for (int t = 0; t < d; ++t)
              acc += R.at(R.cidx({t, p, q, r}), pt) * omega.at(omega.cidx({t, s}), pt);
            RL.at(RL.cidx({p, q, r, s}), pt) = acc;
          }
  });
  return RL;
}

inline TensorField ricci_of_riemann(const TensorField& R) {
  const int d = R.spec.dim();
  TensorField Ric(R.spec, {Variance::Cov, Variance::Cov});
  parallel_for(R.npts(), [&](std::size_t pt) {
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q) {
        double acc = 0.0;
        for (int s = 0; s < d; ++s) acc += R.at(R.cidx({s, s, p, q}), pt);
        Ric.at(Ric.cidx({p, q}), pt) = acc;
      }
  });
  return Ric;
}

inline ConnectionPack pack_of_christoffel(const TensorField& gamma, const TensorField& omega) {
  ConnectionPack pk;
  pk.christoffel = gamma;
  pk.riemann = riemann_of_christoffel(gamma);
  pk.riemann_low = lower_riemann(pk.riemann, omega);
  pk.ricci = ricci_of_riemann(pk.riemann);
  return pk;
}

// Covariant derivative of a (possibly mixed) tensor; the new covariant slot
// comes first. Applying `times` > 1 iterates.
inline TensorField covariant_derivative(const TensorField& T, const TensorField& gamma, int times = 1) {
  if (T.rank + times > 6) throw std::invalid_argument("covariant_derivative: resulting rank exceeds 6");
  TensorField cur = T;
  for (int it = 0; it < times; ++it) {
    const int d = cur.spec.dim();
    const int r = cur.rank;
    std::vector<Variance> var;
    var.push_back(Variance::Cov);
    for (auto v : cur.variance) var.push_back(v);
    TensorField out(cur.spec, var);
    std::vector<TensorField> dT;
    dT.reserve(static_cast<std::size_t>(d));
    for (int a = 0; a < d; ++a) dT.push_back(partial_derivative(cur, a));

    const std::size_t ncomp_in = cur.ncomp();
    std::vector<int> idx(static_cast<std::size_t>(std::max(r, 1)), 0);
    for (std::size_t ci = 0; ci < ncomp_in; ++ci) {
      std::size_t t = ci;
      for (int s = r - 1; s >= 0; --s) {
        idx[static_cast<std::size_t>(s)] = static_cast<int>(t % static_cast<std::size_t>(d));
        t /= static_cast<std::size_t>(d);
      }
      for (int cslot = 0; cslot < d; ++cslot) {
        double* o = out.comp(static_cast<std::size_t>(cslot) * ncomp_in + ci);
        const double* base = dT[static_cast<std::size_t>(cslot)].comp(ci);
        std::copy(base, base + out.npts(), o);
        // connection corrections
        for (int s = 0; s < r; ++s) {
          const int is = idx[static_cast<std::size_t>(s)];
          for (int a = 0; a < d; ++a) {
            std::size_t ci2 = 0;
            for (int u = 0; u < r; ++u)
              ci2 = ci2 * static_cast<std::size_t>(d) +
                    static_cast<std::size_t>(u == s ? a : idx[static_cast<std::size_t>(u)]);
            const double* src = cur.comp(ci2);
            if (cur.variance[static_cast<std::size_t>(s)] == Variance::Cov) {
              const double* G = gamma.comp(gamma.cidx({a, cslot, is}));
              for (std::size_t ptq = 0; ptq < out.npts(); ++ptq) o[ptq] -= G[ptq] * src[ptq];
            } else {
              const double* G = gamma.comp(gamma.cidx({is, cslot, a}));
              for (std::size_t ptq = 0; ptq < out.npts(); ++ptq) o[ptq] += G[ptq] * src[ptq];
            }
          }
        }
      }
    }
    cur = std::move(out);
  }
  return cur;
}

// sup norm of (nabla_c omega)_{ab}
inline double nabla_omega_residual(const TensorField& gamma, const TensorField& omega) {
  TensorField nw = covariant_derivative(omega, gamma);
  return nw.sup_norm();
}

inline GeometryCache metric_geometry(const TensorField& omega, const TensorField& g) {
  require_same_grid(omega.spec, g.spec);
  GeometryCache geo;
  geo.spec = omega.spec;
  geo.J = std_J(geo.spec);
  geo.omega = omega;
  geo.g = g;
  const int d = geo.spec.dim();
  const std::size_t N = geo.spec.size();
  const int n = geo.spec.n;
  const double pf_sign = (n == 2) ? -1.0 : 1.0; // orientation of axis order (x..x, y..y)

  // positivity + inverses + volume (serial: throws carry point info)
  geo.g_inv = TensorField(geo.spec, {Variance::Con, Variance::Con});
  geo.Lambda = TensorField(geo.spec, {Variance::Con, Variance::Con});
  geo.volume = ScalarField(geo.spec);
  double margin = std::numeric_limits<double>::max();
  std::vector<double> m(static_cast<std::size_t>(d) * d), minv(static_cast<std::size_t>(d) * d);
  for (std::size_t pt = 0; pt < N; ++pt) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m[static_cast<std::size_t>(i) * d + j] = g.at(g.cidx({i, j}), pt);
    const double ev = detail::min_eig_sym(d, m.data());
    if (!(ev > 0.0)) throw PositivityViolation(pt, ev);
    margin = std::min(margin, ev);
    detail::invert_matrix(d, m.data(), minv.data());
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) geo.g_inv.at(g.cidx({i, j}), pt) = minv[static_cast<std::size_t>(i) * d + j];
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m[static_cast<std::size_t>(i) * d + j] = omega.at(omega.cidx({i, j}), pt);
    detail::invert_matrix(d, m.data(), minv.data());
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) geo.Lambda.at(omega.cidx({i, j}), pt) = minv[static_cast<std::size_t>(i) * d + j];
    geo.volume[pt] = pf_sign * detail::pfaffian(d, m.data());
  }
  geo.positivity_margin = margin;

  geo.conn.christoffel = christoffel_of_metric(g, geo.g_inv);
  geo.conn.riemann = riemann_of_christoffel(geo.conn.christoffel);
  geo.conn.riemann_low = lower_riemann(geo.conn.riemann, omega);
  geo.conn.ricci = ricci_of_riemann(geo.conn.riemann);

  geo.ricci_form = TensorField(geo.spec, {Variance::Cov, Variance::Cov});
  geo.scal = ScalarField(geo.spec);
  parallel_for(N, [&](std::size_t pt) {
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q) {
        double acc = 0.0;
        for (int a = 0; a < d; ++a)
          acc += geo.J[static_cast<std::size_t>(a) * d + p] * geo.conn.ricci.at(g.cidx({a, q}), pt);
        geo.ricci_form.at(g.cidx({p, q}), pt) = acc;
      }
    double s = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q)
        s += geo.g_inv.at(g.cidx({p, q}), pt) * geo.conn.ricci.at(g.cidx({p, q}), pt);
    geo.scal[pt] = s;
  });
  return geo;
}

inline GeometryCache build_geometry(const KahlerPotential& pot) {
  const GridSpec spec = pot.phi.spec;
  const int d = spec.dim(), n = spec.n;
  TensorField omega = std_omega(spec);
  omega += ddc(pot.phi);
  // g_{ab} = omega_{ac} J^c_b with the standard J
  TensorField g(spec, {Variance::Cov, Variance::Cov});
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      double* o = g.comp(g.cidx({a, b}));
      if (b < n) {
        const double* w = omega.comp(omega.cidx({a, b + n}));
        for (std::size_t i = 0; i < g.npts(); ++i) o[i] = w[i];
      } else {
        const double* w = omega.comp(omega.cidx({a, b - n}));
        for (std::size_t i = 0; i < g.npts(); ++i) o[i] = -w[i];
      }
    }
  return metric_geometry(omega, g);
}

inline GeometryCache flat_geometry(const GridSpec& spec) {
  return build_geometry(KahlerPotential(ScalarField(spec)));
}

// curvature pack of an arbitrary symplectic connection given by Gamma-like
// coefficients; checks lower-index symmetry and nabla omega.
inline ConnectionPack connection_curvature(const TensorField& gamma, const GeometryCache& geo,
                                           double symplectic_tol = 1e-8) {
  require_same_grid(gamma.spec, geo.spec);
  const int d = gamma.spec.dim();
  double asym = 0.0;
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) {
        const double* a = gamma.comp(gamma.cidx({k, i, j}));
        const double* b = gamma.comp(gamma.cidx({k, j, i}));
        for (std::size_t pt = 0; pt < gamma.npts(); ++pt) asym = std::max(asym, std::abs(a[pt] - b[pt]));
      }
  if (asym > 1e-10) throw std::invalid_argument("connection_curvature: Gamma not symmetric in lower indices");
  const double res = nabla_omega_residual(gamma, geo.omega);
  if (res > symplectic_tol) throw SymplecticityViolation(res);
  return pack_of_christoffel(gamma, geo.omega);
}

// ---------------------------------------------------------------------------
// scalar differential operators

// positive-spectrum Laplacian: flat torus Delta cos(2 pi k.x) = 4 pi^2 |k|^2 cos
inline ScalarField laplacian(const GeometryCache& geo, const ScalarField& F) {
  require_same_grid(geo.spec, F.spec);
  const int d = geo.spec.dim();
  TensorField H = hessian_partials(F);
  std::vector<ScalarField> dF;
  dF.reserve(static_cast<std::size_t>(d));
  for (int a = 0; a < d; ++a) dF.push_back(partial_derivative(F, a));
  ScalarField out(F.spec);
  parallel_for(F.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q) {
        double hess = H.at(H.cidx({p, q}), pt);
        for (int a = 0; a < d; ++a)
          hess -= geo.conn.christoffel.at(geo.conn.christoffel.cidx({a, p, q}), pt) * dF[static_cast<std::size_t>(a)][pt];
        acc += geo.g_inv.at(geo.g.cidx({p, q}), pt) * hess;
      }
    out[pt] = -acc;
  });
  return out;
}

// i(X_F) omega = dF  =>  X^a = -Lambda^{ab} d_b F
inline TensorField hamiltonian_field(const GeometryCache& geo, const ScalarField& F) {
  require_same_grid(geo.spec, F.spec);
  const int d = geo.spec.dim();
  std::vector<ScalarField> dF;
  for (int a = 0; a < d; ++a) dF.push_back(partial_derivative(F, a));
  TensorField X(F.spec, {Variance::Con});
  parallel_for(F.size(), [&](std::size_t pt) {
    for (int a = 0; a < d; ++a) {
      double acc = 0.0;
      for (int b = 0; b < d; ++b) acc -= geo.Lambda.at(geo.Lambda.cidx({a, b}), pt) * dF[static_cast<std::size_t>(b)][pt];
      X.at(static_cast<std::size_t>(a), pt) = acc;
    }
  });
  return X;
}

// g(grad F, .) = dF
inline TensorField gradient_field(const GeometryCache& geo, const ScalarField& F) {
  require_same_grid(geo.spec, F.spec);
  const int d = geo.spec.dim();
  std::vector<ScalarField> dF;
  for (int a = 0; a < d; ++a) dF.push_back(partial_derivative(F, a));
  TensorField X(F.spec, {Variance::Con});
  parallel_for(F.size(), [&](std::size_t pt) {
    for (int a = 0; a < d; ++a) {
      double acc = 0.0;
      for (int b = 0; b < d; ++b) acc += geo.g_inv.at(geo.g.cidx({a, b}), pt) * dF[static_cast<std::size_t>(b)][pt];
      X.at(static_cast<std::size_t>(a), pt) = acc;
    }
  });
  return X;
}

// {F,H} := -omega(X_F, X_H) = Lambda^{ab} d_a F d_b H
inline ScalarField poisson(const GeometryCache& geo, const ScalarField& F, const ScalarField& H) {
  require_same_grid(F.spec, H.spec);
  require_same_grid(geo.spec, F.spec);
  const int d = geo.spec.dim();
  std::vector<ScalarField> dF, dH;
  for (int a = 0; a < d; ++a) {
    dF.push_back(partial_derivative(F, a));
    dH.push_back(partial_derivative(H, a));
  }
  ScalarField out(F.spec);
  parallel_for(F.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        acc += geo.Lambda.at(geo.Lambda.cidx({a, b}), pt) * dF[static_cast<std::size_t>(a)][pt] * dH[static_cast<std::size_t>(b)][pt];
    out[pt] = acc;
  });
  return out;
}

inline double total_volume(const GeometryCache& geo) {
  return pairwise_sum(geo.volume.v) / static_cast<double>(geo.volume.size());
}

// integral against omega_phi^n/n!
inline double integrate_volume(const GeometryCache& geo, const ScalarField& F) {
  return integrate(F, geo.volume);
}
inline cplx integrate_volume(const GeometryCache& geo, const ComplexField& F) {
  return integrate(F, geo.volume);
}

inline void remove_mean_volume(const GeometryCache& geo, ScalarField& F) {
  const double m = integrate_volume(geo, F) / total_volume(geo);
  for (auto& x : F.v) x -= m;
}

// raise every (covariant) slot with Lambda: out^{k...} = Lambda^{k a}...T_{a...}
inline TensorField raise_all(const TensorField& T, const TensorField& Lambda) {
  const int d = T.spec.dim();
  TensorField cur = T;
  for (int s = 0; s < T.rank; ++s) {
    TensorField out(cur.spec, cur.variance);
    out.variance[static_cast<std::size_t>(s)] = Variance::Con;
    const std::size_t inner = [&] {
      std::size_t x = 1;
      for (int u = s + 1; u < T.rank; ++u) x *= static_cast<std::size_t>(d);
      return x;
    }();
    const std::size_t outer = cur.ncomp() / (inner * static_cast<std::size_t>(d));
    for (std::size_t o = 0; o < outer; ++o)
      for (int k = 0; k < d; ++k)
        for (std::size_t in = 0; in < inner; ++in) {
          double* dst = out.comp((o * d + static_cast<std::size_t>(k)) * inner + in);
          std::fill(dst, dst + out.npts(), 0.0);
          for (int a = 0; a < d; ++a) {
            const double* src = cur.comp((o * d + static_cast<std::size_t>(a)) * inner + in);
            const double* L = Lambda.comp(Lambda.cidx({k, a}));
            for (std::size_t pt = 0; pt < out.npts(); ++pt) dst[pt] += L[pt] * src[pt];
          }
        }
    cur = std::move(out);
  }
  return cur;
}

} // namespace kflow
