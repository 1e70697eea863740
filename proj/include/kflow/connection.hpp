#pragma once

// The symplectic geometry of E(M, omega): tangent vectors as symmetric
// 3-tensors, Omega^E, J^E and its metric, fundamental vector fields
// L_{X_F} nabla, and the Cahen-Gutt moment map.

#include <random>

#include "geometry.hpp"

namespace kflow {

struct Sym3Tensor {
  TensorField t; // rank 3, fully symmetric covariant

  Sym3Tensor() = default;
  explicit Sym3Tensor(TensorField tf, double sym_tol = 1e-8) : t(std::move(tf)) {
    if (t.rank != 3) throw std::invalid_argument("Sym3Tensor: rank must be 3");
    const double r = symmetry_residual();
    const double scale = std::max(1.0, t.sup_norm());
    if (r > sym_tol * scale)
      throw std::invalid_argument("Sym3Tensor: symmetry residual " + std::to_string(r));
  }

  double symmetry_residual() const {
    const int d = t.spec.dim();
    double res = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) {
          const double* a = t.comp(t.cidx({i, j, k}));
          const double* b = t.comp(t.cidx({j, i, k}));
          const double* c = t.comp(t.cidx({i, k, j}));
          for (std::size_t pt = 0; pt < t.npts(); ++pt)
            res = std::max({res, std::abs(a[pt] - b[pt]), std::abs(a[pt] - c[pt])});
        }
    return res;
  }

  // endomorphism coefficients A^s_{ij} with omega(A(e_i)e_j, e_k) = A_{ijk}
  TensorField raised(const GeometryCache& geo) const {
    const int d = t.spec.dim();
    TensorField out(t.spec, {Variance::Con, Variance::Cov, Variance::Cov});
    parallel_for(t.npts(), [&](std::size_t pt) {
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          for (int s = 0; s < d; ++s) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
              acc -= geo.Lambda.at(geo.Lambda.cidx({s, k}), pt) * t.at(t.cidx({i, j, k}), pt);
            out.at(out.cidx({s, i, j}), pt) = acc;
          }
    });
    return out;
  }
};

// make a random fully symmetric low-mode tangent vector (for tests/witnesses)
template <class Rng>
inline Sym3Tensor random_sym3(const GridSpec& spec, Rng& rng, int max_mode = 2, double amp = 0.1) {
  const int d = spec.dim();
  TensorField t(spec, {Variance::Cov, Variance::Cov, Variance::Cov});
  std::uniform_int_distribution<int> kd(-max_mode, max_mode);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      for (int k = j; k < d; ++k) {
        std::vector<int> kv(static_cast<std::size_t>(d));
        for (auto& x : kv) x = kd(rng);
        ScalarField f = trig_field(spec, kv, amp * ud(rng), ud(rng));
        int perm[6][3] = {{i, j, k}, {i, k, j}, {j, i, k}, {j, k, i}, {k, i, j}, {k, j, i}};
        for (auto& pidx : perm) {
          double* dst = t.comp(t.cidx({pidx[0], pidx[1], pidx[2]}));
          std::copy(f.data(), f.data() + t.npts(), dst);
        }
      }
  return Sym3Tensor(std::move(t));
}

// Omega^E(A,B) = int Lambda^{i1 j1} Lambda^{i2 j2} Lambda^{i3 j3}
//                A_{i1 i2 i3} B_{j1 j2 j3} omega^n/n!   (normative form)
inline double omega_E(const Sym3Tensor& A, const Sym3Tensor& B, const GeometryCache& geo) {
  require_same_grid(A.t.spec, geo.spec);
  require_same_grid(B.t.spec, geo.spec);
  const int d = geo.spec.dim();
  ScalarField dens(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    // raise B stepwise in local buffers
    double buf0[64], buf1[64], L[16];
    const std::size_t nc = B.t.ncomp();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) L[i * d + j] = geo.Lambda.at(geo.Lambda.cidx({i, j}), pt);
    for (std::size_t c = 0; c < nc; ++c) buf0[c] = B.t.at(c, pt);
    for (int slot = 0; slot < 3; ++slot) {
      std::size_t inner = 1;
      for (int u = slot + 1; u < 3; ++u) inner *= static_cast<std::size_t>(d);
      const std::size_t outer = nc / (inner * static_cast<std::size_t>(d));
      for (std::size_t o = 0; o < outer; ++o)
        for (int k = 0; k < d; ++k)
          for (std::size_t in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (int a = 0; a < d; ++a) acc += L[k * d + a] * buf0[(o * d + static_cast<std::size_t>(a)) * inner + in];
            buf1[(o * d + static_cast<std::size_t>(k)) * inner + in] = acc;
          }
      std::copy(buf1, buf1 + nc, buf0);
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < nc; ++c) acc += A.t.at(c, pt) * buf0[c];
    dens[pt] = acc;
  });
  return integrate_volume(geo, dens);
}

// endomorphism-trace form -int Lambda^{kl} tr(A(e_k) B(e_l)) omega^n/n!
// (cross-check path; agrees with the triple-Lambda form)
inline double omega_E_trace_form(const Sym3Tensor& A, const Sym3Tensor& B, const GeometryCache& geo) {
  const int d = geo.spec.dim();
  TensorField Ae = A.raised(geo), Be = B.raised(geo);
  ScalarField dens(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < d; ++l) {
        double tr = 0.0;
        for (int s = 0; s < d; ++s)
          for (int j = 0; j < d; ++j)
            tr += Ae.at(Ae.cidx({s, k, j}), pt) * Be.at(Be.cidx({j, l, s}), pt);
        acc -= geo.Lambda.at(geo.Lambda.cidx({k, l}), pt) * tr;
      }
    dens[pt] = acc;
  });
  return integrate_volume(geo, dens);
}

// (J^E A)(X)Y := -J A(JX) JY; in lowered components J^a_i J^b_j J^c_k A_{abc}
inline Sym3Tensor jE_apply(const Sym3Tensor& A, const GeometryCache& geo) {
  const int d = geo.spec.dim();
  const auto& J = geo.J;
  TensorField out(A.t.spec, A.t.variance);
  parallel_for(A.t.npts(), [&](std::size_t pt) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) {
          double acc = 0.0;
          for (int a = 0; a < d; ++a) {
            const double ja = J[static_cast<std::size_t>(a) * d + i];
            if (ja == 0.0) continue;
            for (int b = 0; b < d; ++b) {
              const double jb = J[static_cast<std::size_t>(b) * d + j];
              if (jb == 0.0) continue;
              for (int c = 0; c < d; ++c) {
                const double jc = J[static_cast<std::size_t>(c) * d + k];
                if (jc == 0.0) continue;
                acc += ja * jb * jc * A.t.at(A.t.cidx({a, b, c}), pt);
              }
            }
          }
          out.at(out.cidx({i, j, k}), pt) = acc;
        }
  });
  return Sym3Tensor(std::move(out));
}

// G^{J^E}(A,B) = Omega^E(A, J^E B)
inline double g_JE(const Sym3Tensor& A, const Sym3Tensor& B, const GeometryCache& geo) {
  return omega_E(A, jE_apply(B, geo), geo);
}

// fundamental vector field: omega((L_{X_F} nabla)(e_i) e_j, e_k) with
// (L_{X_F} nabla)(Y)Z = nabla^2_{(Y,Z)} X_F + R(X_F, Y) Z
inline Sym3Tensor lie_derivative_connection(const ScalarField& F, const GeometryCache& geo,
                                            const ConnectionPack* conn = nullptr) {
  const ConnectionPack& pk = conn ? *conn : geo.conn;
  const int d = geo.spec.dim();
  TensorField X = hamiltonian_field(geo, F);
  TensorField DDX = covariant_derivative(X, pk.christoffel, 2); // slots [i, j, s(con)]... see below
  // covariant_derivative puts new slots first: DDX slots are [i(outer), j(inner), s(con)]?
  // X has variance [Con]; after one derivative: [Cov, Con] = (j, s); after two: [Cov, Cov, Con] = (i, j, s).
  TensorField out(geo.spec, {Variance::Cov, Variance::Cov, Variance::Cov});
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        double v[4];
        for (int s = 0; s < d; ++s) {
          double acc = DDX.at(DDX.cidx({i, j, s}), pt);
          for (int p = 0; p < d; ++p)
            acc += X.at(static_cast<std::size_t>(p), pt) * pk.riemann.at(pk.riemann.cidx({s, p, i, j}), pt);
          v[s] = acc;
        }
        for (int k = 0; k < d; ++k) {
          double acc = 0.0;
          for (int s = 0; s < d; ++s) acc += v[s] * geo.omega.at(geo.omega.cidx({s, k}), pt);
          out.at(out.cidx({i, j, k}), pt) = acc;
        }
      }
  });
  return Sym3Tensor(std::move(out)); // symmetry asserted by the constructor
}

struct MomentMap {
  ScalarField mu_tilde;
  double mu0 = 0.0;
  ScalarField mu;
};

// expanded P(nabla) = -1/2 Ric_{pq} Ric^{pq} + 1/4 R_{pqrs} R^{pqrs},
// indices raised with Lambda
inline ScalarField p_expanded(const ConnectionPack& pk, const GeometryCache& geo) {
  const int d = geo.spec.dim();
  ScalarField P(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double L[16];
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) L[i * d + j] = geo.Lambda.at(geo.Lambda.cidx({i, j}), pt);
    // Ric_{pq} Ric^{pq}
    double ric2 = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q) {
        double raised = 0.0;
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b)
            raised += L[p * d + a] * L[q * d + b] * pk.ricci.at(pk.ricci.cidx({a, b}), pt);
        ric2 += pk.ricci.at(pk.ricci.cidx({p, q}), pt) * raised;
      }
    // R_{pqrs} R^{pqrs}: raise one slot at a time in local buffers
    const std::size_t nc = pk.riemann_low.ncomp();
    double buf0[256], buf1[256];
    for (std::size_t c = 0; c < nc; ++c) buf0[c] = pk.riemann_low.at(c, pt);
    std::size_t inner = nc / static_cast<std::size_t>(d);
    for (int slot = 0; slot < 4; ++slot) {
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
    double rr = 0.0;
    for (std::size_t c = 0; c < nc; ++c) rr += pk.riemann_low.at(c, pt) * buf0[c];
    P[pt] = -0.5 * ric2 + 0.25 * rr;
  });
  return P;
}

// wedge form for n = 2: P omega^2/2! = 1/2 tr(R o^ R); evaluated through the
// Levi-Civita symbol against the Pfaffian of omega.
inline ScalarField p_wedge(const ConnectionPack& pk, const GeometryCache& geo) {
  if (geo.spec.n < 2) throw NotApplicable("p_wedge: omega^{n-2} undefined for n = 1");
  const int d = geo.spec.dim();
  const double pf_sign = -1.0; // n = 2 axis ordering
  struct PermTable {
    int perms[24][4];
    int signs[24];
    PermTable() {
      int idx[4] = {0, 1, 2, 3};
      int t = 0;
      do {
        int inv = 0;
        for (int a = 0; a < 4; ++a)
          for (int b = a + 1; b < 4; ++b)
            if (idx[a] > idx[b]) ++inv;
        for (int a = 0; a < 4; ++a) perms[t][a] = idx[a];
        signs[t] = (inv % 2) ? -1 : 1;
        ++t;
      } while (std::next_permutation(idx, idx + 4));
    }
  };
  static const PermTable tab;
  const auto& perms = tab.perms;
  const auto& signs = tab.signs;
  ScalarField P(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int t = 0; t < 24; ++t) {
      const int p = perms[t][0], q = perms[t][1], r = perms[t][2], s = perms[t][3];
      double tr = 0.0;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          tr += pk.riemann.at(pk.riemann.cidx({a, p, q, b}), pt) * pk.riemann.at(pk.riemann.cidx({b, r, s, a}), pt);
      acc += signs[t] * tr;
    }
    // 1/2 from the definition, 1/(2!2!) from the shuffle normalization
    P[pt] = 0.125 * acc / (pf_sign * geo.volume[pt]);
  });
  return P;
}

// mu_tilde = (nabla^2_{(e_p,e_q)} Ric)(e^p, e^q) + P(nabla)
inline MomentMap moment_map(const ConnectionPack& pk, const GeometryCache& geo) {
  const int d = geo.spec.dim();
  TensorField ddr = covariant_derivative(pk.ricci, pk.christoffel, 2); // slots [p, q, a, b]
  ScalarField contr(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = 0; q < d; ++q)
        for (int a = 0; a < d; ++a)
          for (int b = 0; b < d; ++b)
            acc += geo.Lambda.at(geo.Lambda.cidx({p, a}), pt) * geo.Lambda.at(geo.Lambda.cidx({q, b}), pt) *
                   ddr.at(ddr.cidx({p, q, a, b}), pt);
    contr[pt] = acc;
  });
  MomentMap mm;
  mm.mu_tilde = contr + p_expanded(pk, geo);
  mm.mu0 = integrate_volume(geo, mm.mu_tilde) / total_volume(geo);
  mm.mu = mm.mu_tilde;
  for (auto& x : mm.mu.v) x -= mm.mu0;
  return mm;
}

inline MomentMap moment_map(const GeometryCache& geo) { return moment_map(geo.conn, geo); }

// Gamma coefficients of nabla + t A
inline TensorField perturbed_christoffel(const GeometryCache& geo, const Sym3Tensor& A, double t) {
  TensorField gam = geo.conn.christoffel;
  TensorField Ae = A.raised(geo);
  for (std::size_t i = 0; i < gam.c.size(); ++i) gam.c[i] += t * Ae.c[i];
  return gam;
}

// central differences with one Richardson step
template <class F>
inline double richardson_derivative(F&& f, double h) {
  const double d1 = (f(h) - f(-h)) / (2.0 * h);
  const double d2 = (f(h / 2.0) - f(-h / 2.0)) / h;
  return (4.0 * d2 - d1) / 3.0;
}

// | d/dt|_0 int mu_tilde(nabla + tA) F omega^n/n!  -  Omega^E(L_{X_F} nabla, A) |
inline double moment_identity_residual(const ScalarField& F, const Sym3Tensor& A,
                                       const GeometryCache& geo, double h = 1e-4) {
  if (h < 1e-6 || h > 1e-2) throw std::invalid_argument("moment_identity_residual: h outside [1e-6, 1e-2]");
  ScalarField Fz = F;
  remove_mean_volume(geo, Fz);
  auto side = [&](double t) {
    TensorField gam = perturbed_christoffel(geo, A, t);
    ConnectionPack pk = pack_of_christoffel(gam, geo.omega);
    MomentMap mm = moment_map(pk, geo);
    return integrate_volume(geo, mm.mu_tilde * Fz);
  };
  const double lhs = richardson_derivative(side, h);
  const double rhs = omega_E(lie_derivative_connection(Fz, geo), A, geo);
  return std::abs(lhs - rhs);
}

} // namespace kflow
