#pragma once

// The space J(M, omega): compatible almost complex structures, the Kahler
// structure (Omega^J, G^J, I_J), the Levi-Civita map lc and its differential
// lc_*, Condition C, and the Hermitian-scalar-curvature moment identity.

#include "flows.hpp"

namespace kflow {

// Hermitian scalar curvature of the integrable compatible case, expressed in
// units of the Riemannian scalar curvature: Scal_herm = kHermitianScalFactor * Scal.
// Measured against the moment identity on the flat torus and pinned here.
inline constexpr double kHermitianScalFactor = 2.0;

struct CompatibleACS {
  TensorField J; // rank (1,1)
  double nijenhuis_residual = 0.0;
  bool integrable = true;
};

inline double nijenhuis_residual(const TensorField& J) {
  const int d = J.spec.dim();
  std::vector<TensorField> dJ;
  for (int a = 0; a < d; ++a) dJ.push_back(partial_derivative(J, a));
  double res = 0.0;
  std::vector<double> worst(J.npts(), 0.0);
  parallel_for(J.npts(), [&](std::size_t pt) {
    double w = 0.0;
    for (int a = 0; a < d; ++a)
      for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j) {
          double acc = 0.0;
          for (int c = 0; c < d; ++c) {
            acc += J.at(J.cidx({c, i}), pt) * (dJ[static_cast<std::size_t>(c)].at(J.cidx({a, j}), pt) -
                                               dJ[static_cast<std::size_t>(j)].at(J.cidx({a, c}), pt));
            acc -= J.at(J.cidx({c, j}), pt) * (dJ[static_cast<std::size_t>(c)].at(J.cidx({a, i}), pt) -
                                               dJ[static_cast<std::size_t>(i)].at(J.cidx({a, c}), pt));
          }
          w = std::max(w, std::abs(acc));
        }
    worst[pt] = w;
  });
  for (double w : worst) res = std::max(res, w);
  return res;
}

inline CompatibleACS make_acs(TensorField J, const GeometryCache& geo, double tol = 1e-10) {
  require_same_grid(J.spec, geo.spec);
  const int d = J.spec.dim();
  double sq = 0.0, comp = 0.0;
  for (std::size_t pt = 0; pt < J.npts(); ++pt) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = (a == b) ? 1.0 : 0.0;
        for (int c = 0; c < d; ++c) acc += J.at(J.cidx({a, c}), pt) * J.at(J.cidx({c, b}), pt);
        sq = std::max(sq, std::abs(acc));
        double wJJ = 0.0;
        for (int c = 0; c < d; ++c)
          for (int e = 0; e < d; ++e)
            wJJ += geo.omega.at(geo.omega.cidx({c, e}), pt) * J.at(J.cidx({c, a}), pt) * J.at(J.cidx({e, b}), pt);
        comp = std::max(comp, std::abs(wJJ - geo.omega.at(geo.omega.cidx({a, b}), pt)));
      }
  }
  if (sq > tol) throw std::invalid_argument("CompatibleACS: J^2 != -Id (residual " + std::to_string(sq) + ")");
  if (comp > tol) throw std::invalid_argument("CompatibleACS: omega(J.,J.) != omega (residual " + std::to_string(comp) + ")");
  CompatibleACS acs;
  acs.J = std::move(J);
  acs.nijenhuis_residual = nijenhuis_residual(acs.J);
  acs.integrable = acs.nijenhuis_residual < 1e-8;
  // positivity of omega(., J.) is delegated to metric_geometry when used
  return acs;
}

inline CompatibleACS standard_acs(const GeometryCache& geo) {
  const int d = geo.spec.dim();
  TensorField J(geo.spec, {Variance::Con, Variance::Cov});
  const auto Jm = std_J(geo.spec);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      double* o = J.comp(J.cidx({a, b}));
      std::fill(o, o + J.npts(), Jm[static_cast<std::size_t>(a) * d + b]);
    }
  CompatibleACS acs;
  acs.J = std::move(J);
  acs.nijenhuis_residual = 0.0;
  acs.integrable = true;
  return acs;
}

struct ACSVariation {
  TensorField A; // rank (1,1), AJ + JA = 0, omega(A.,.) + omega(.,A.) = 0
};

inline double variation_invariant_residual(const TensorField& A, const CompatibleACS& acs,
                                           const GeometryCache& geo) {
  const int d = A.spec.dim();
  double res = 0.0;
  for (std::size_t pt = 0; pt < A.npts(); ++pt)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double anti = 0.0, skew = 0.0;
        for (int c = 0; c < d; ++c) {
          anti += A.at(A.cidx({a, c}), pt) * acs.J.at(A.cidx({c, b}), pt) +
                  acs.J.at(A.cidx({a, c}), pt) * A.at(A.cidx({c, b}), pt);
          skew += geo.omega.at(geo.omega.cidx({c, b}), pt) * A.at(A.cidx({c, a}), pt) +
                  geo.omega.at(geo.omega.cidx({a, c}), pt) * A.at(A.cidx({c, b}), pt);
        }
        res = std::max({res, std::abs(anti), std::abs(skew)});
      }
  return res;
}

inline ACSVariation make_variation(TensorField A, const CompatibleACS& acs, const GeometryCache& geo,
                                   double tol = 1e-8) {
  const double r = variation_invariant_residual(A, acs, geo);
  const double scale = std::max(1.0, A.sup_norm());
  if (r > tol * scale)
    throw std::invalid_argument("ACSVariation: invariant residual " + std::to_string(r));
  return ACSVariation{std::move(A)};
}

// (X_F)^{*J} := L_{X_F} J
inline ACSVariation lie_derivative_J(const ScalarField& F, const CompatibleACS& acs,
                                     const GeometryCache& geo) {
  const int d = geo.spec.dim();
  TensorField X = hamiltonian_field(geo, F);
  std::vector<TensorField> dJ;
  for (int a = 0; a < d; ++a) dJ.push_back(partial_derivative(acs.J, a));
  std::vector<ScalarField> dX; // dX[b] holds d_b X^a over components
  TensorField DX(geo.spec, {Variance::Con, Variance::Cov}); // (DX)^a_b = d_b X^a
  for (int a = 0; a < d; ++a) {
    ScalarField xa(geo.spec);
    std::copy(X.comp(static_cast<std::size_t>(a)), X.comp(static_cast<std::size_t>(a)) + X.npts(), xa.data());
    for (int b = 0; b < d; ++b) {
      ScalarField der = partial_derivative(xa, b);
      std::copy(der.data(), der.data() + X.npts(), DX.comp(DX.cidx({a, b})));
    }
  }
  TensorField out(geo.spec, {Variance::Con, Variance::Cov});
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) {
          acc += X.at(static_cast<std::size_t>(c), pt) * dJ[static_cast<std::size_t>(c)].at(acs.J.cidx({a, b}), pt);
          acc -= acs.J.at(acs.J.cidx({c, b}), pt) * DX.at(DX.cidx({a, c}), pt);
          acc += acs.J.at(acs.J.cidx({a, c}), pt) * DX.at(DX.cidx({c, b}), pt);
        }
        out.at(out.cidx({a, b}), pt) = acc;
      }
  });
  return make_variation(std::move(out), acs, geo);
}

// Omega^J(A,B) = int tr(J A B) omega^n/n!
inline double omega_J(const ACSVariation& A, const ACSVariation& B, const CompatibleACS& acs,
                      const GeometryCache& geo) {
  const int d = geo.spec.dim();
  ScalarField dens(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int c = 0; c < d; ++c)
          acc += acs.J.at(acs.J.cidx({a, b}), pt) * A.A.at(A.A.cidx({b, c}), pt) * B.A.at(B.A.cidx({c, a}), pt);
    dens[pt] = acc;
  });
  return integrate_volume(geo, dens);
}

// G^J(A,B) = int tr(A B) omega^n/n!
inline double g_J(const ACSVariation& A, const ACSVariation& B, const GeometryCache& geo) {
  const int d = geo.spec.dim();
  ScalarField dens(geo.spec);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double acc = 0.0;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) acc += A.A.at(A.A.cidx({a, b}), pt) * B.A.at(B.A.cidx({b, a}), pt);
    dens[pt] = acc;
  });
  return integrate_volume(geo, dens);
}

// I_J(A) := J A
inline ACSVariation I_apply(const ACSVariation& A, const CompatibleACS& acs, const GeometryCache& geo) {
  const int d = geo.spec.dim();
  TensorField out(geo.spec, {Variance::Con, Variance::Cov});
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += acs.J.at(acs.J.cidx({a, c}), pt) * A.A.at(A.A.cidx({c, b}), pt);
        out.at(out.cidx({a, b}), pt) = acc;
      }
  });
  return make_variation(std::move(out), acs, geo);
}

// Levi-Civita map: the full geometry of g_J(.,.) = omega(., J.)
inline GeometryCache lc_geometry(const CompatibleACS& acs, const GeometryCache& geo,
                                 bool allow_nonintegrable = false) {
  if (!acs.integrable && !allow_nonintegrable)
    throw std::invalid_argument("lc: J is not integrable (Nijenhuis residual " +
                                std::to_string(acs.nijenhuis_residual) + ")");
  TensorField gJ = metric_of_acs(geo.omega, acs.J);
  return metric_geometry(geo.omega, gJ);
}

struct LcStarResult {
  Sym3Tensor B;
  double solve_residual = 0.0; // worst pointwise constraint residual
};

// lc_*(A): the unique symmetric B with B(X)Y + J B(X) JY = -nabla(JA)(X)Y,
// solved pointwise by least squares over S^3.
inline LcStarResult lc_star(const ACSVariation& A, const CompatibleACS& acs, const GeometryCache& geo,
                            const GeometryCache* lc_geo = nullptr) {
  const int d = geo.spec.dim();
  const std::size_t N = geo.spec.size();
  GeometryCache local;
  const GeometryCache* gJ = lc_geo;
  if (!gJ) {
    local = lc_geometry(acs, geo, true);
    gJ = &local;
  }

  // JA endomorphism and its covariant derivative wrt nabla^J
  TensorField JA(geo.spec, {Variance::Con, Variance::Cov});
  parallel_for(N, [&](std::size_t pt) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        double acc = 0.0;
        for (int c = 0; c < d; ++c) acc += acs.J.at(acs.J.cidx({a, c}), pt) * A.A.at(A.A.cidx({c, b}), pt);
        JA.at(JA.cidx({a, b}), pt) = acc;
      }
  });
  TensorField DJA = covariant_derivative(JA, gJ->conn.christoffel); // slots [i, a(con), b(cov)]

  // lowered C_{ijk} = omega( (nabla_i JA)(e_j), e_k )
  TensorField C(geo.spec, {Variance::Cov, Variance::Cov, Variance::Cov});
  parallel_for(N, [&](std::size_t pt) {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k) {
          double acc = 0.0;
          for (int s = 0; s < d; ++s)
            acc += geo.omega.at(geo.omega.cidx({s, k}), pt) * DJA.at(DJA.cidx({i, s, j}), pt);
          C.at(C.cidx({i, j, k}), pt) = acc;
        }
  });

  // symmetric multi-index basis
  std::vector<std::array<int, 3>> basis;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      for (int k = j; k < d; ++k) basis.push_back({i, j, k});
  const int nsym = static_cast<int>(basis.size());
  auto sym_col = [&](int i, int j, int k) {
    int s[3] = {i, j, k};
    std::sort(s, s + 3);
    for (int u = 0; u < nsym; ++u)
      if (basis[static_cast<std::size_t>(u)][0] == s[0] && basis[static_cast<std::size_t>(u)][1] == s[1] &&
          basis[static_cast<std::size_t>(u)][2] == s[2])
        return u;
    return -1;
  };

  const int neq = d * d * d;
  auto fill_matrix = [&](std::size_t pt, Eigen::MatrixXd& M) {
    M.setZero();
    int row = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k, ++row) {
          M(row, sym_col(i, j, k)) += 1.0;
          for (int a = 0; a < d; ++a)
            for (int c = 0; c < d; ++c) {
              const double w = acs.J.at(acs.J.cidx({a, j}), pt) * acs.J.at(acs.J.cidx({c, k}), pt);
              if (w != 0.0) M(row, sym_col(i, a, c)) -= w;
            }
        }
  };

  // constant-J fast path: one factorization for all points
  bool constJ = true;
  {
    const int dd = d * d;
    for (int ci = 0; ci < dd && constJ; ++ci) {
      const double* c0 = acs.J.comp(static_cast<std::size_t>(ci));
      for (std::size_t pt = 1; pt < N; ++pt)
        if (c0[pt] != c0[0]) {
          constJ = false;
          break;
        }
    }
  }

  TensorField Bt(geo.spec, {Variance::Cov, Variance::Cov, Variance::Cov});
  std::vector<double> residuals(N, 0.0);
  Eigen::MatrixXd M0(neq, nsym);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr0;
  if (constJ) {
    fill_matrix(0, M0);
    qr0.compute(M0);
    if (qr0.rank() < nsym) throw std::runtime_error("lc_star: constraint matrix rank-deficient");
  }
  parallel_for(N, [&](std::size_t pt) {
    Eigen::VectorXd rhs(neq);
    int row = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k, ++row) rhs(row) = -C.at(C.cidx({i, j, k}), pt);
    Eigen::VectorXd x;
    if (constJ) {
      x = qr0.solve(rhs);
      residuals[pt] = (M0 * x - rhs).lpNorm<Eigen::Infinity>();
    } else {
      Eigen::MatrixXd M(neq, nsym);
      fill_matrix(pt, M);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
      x = qr.solve(rhs);
      residuals[pt] = (M * x - rhs).lpNorm<Eigen::Infinity>();
    }
    for (int u = 0; u < nsym; ++u) {
      const auto& b = basis[static_cast<std::size_t>(u)];
      int perm[6][3] = {{b[0], b[1], b[2]}, {b[0], b[2], b[1]}, {b[1], b[0], b[2]},
                        {b[1], b[2], b[0]}, {b[2], b[0], b[1]}, {b[2], b[1], b[0]}};
      for (auto& pp : perm) Bt.at(Bt.cidx({pp[0], pp[1], pp[2]}), pt) = x(u);
    }
  });
  LcStarResult out;
  double worst = 0.0;
  for (double r : residuals) worst = std::max(worst, r);
  out.solve_residual = worst;
  const double scale = std::max(1.0, C.sup_norm());
  if (worst > 1e-7 * scale)
    throw std::runtime_error("lc_star: pointwise solve residual " + std::to_string(worst));
  out.B = Sym3Tensor(std::move(Bt));
  return out;
}

// (lc^* Omega^E)_J( L_{X_H} J, J L_{X_F} J )
inline double condition_c_pairing(const ScalarField& F, const ScalarField& H, const CompatibleACS& acs,
                                  const GeometryCache& geo) {
  GeometryCache geoJ = lc_geometry(acs, geo, true);
  ACSVariation AH = lie_derivative_J(H, acs, geo);
  ACSVariation AJF = I_apply(lie_derivative_J(F, acs, geo), acs, geo);
  LcStarResult B1 = lc_star(AH, acs, geo, &geoJ);
  LcStarResult B2 = lc_star(AJF, acs, geo, &geoJ);
  return omega_E(B1.B, B2.B, geo);
}

// sup-norm of the antisymmetric part (in X, Y) of J(nabla A(X)Y) - (nabla A)(JX)Y
inline double nijenhuis_variation_defect(const ACSVariation& A, const CompatibleACS& acs,
                                         const GeometryCache& geo) {
  const int d = geo.spec.dim();
  GeometryCache geoJ = lc_geometry(acs, geo, true);
  TensorField DA = covariant_derivative(A.A, geoJ.conn.christoffel); // [x, a(con), y]
  double res = 0.0;
  std::vector<double> worst(geo.spec.size(), 0.0);
  parallel_for(geo.spec.size(), [&](std::size_t pt) {
    double w = 0.0;
    for (int a = 0; a < d; ++a)
      for (int x = 0; x < d; ++x)
        for (int y = x + 1; y < d; ++y) {
          auto term = [&](int xx, int yy) {
            double t = 0.0;
            for (int s = 0; s < d; ++s) t += acs.J.at(acs.J.cidx({a, s}), pt) * DA.at(DA.cidx({xx, s, yy}), pt);
            for (int c = 0; c < d; ++c) t -= acs.J.at(acs.J.cidx({c, xx}), pt) * DA.at(DA.cidx({c, a, yy}), pt);
            return t;
          };
          w = std::max(w, std::abs(term(x, y) - term(y, x)));
        }
    worst[pt] = w;
  });
  for (double w : worst) res = std::max(res, w);
  return res;
}

struct ScalMomentData {
  double lhs = 0.0;            // Omega^J( L_{X_F} J, dJ_t/dt|_0 )
  double rhs_derivative = 0.0; // d/dt|_0 int F Scal(J_t) omega^n/n!  (Riemannian Scal)
};

inline ScalMomentData scal_moment_data(const PotentialPath& path, const ScalarField& F, double h = 1e-3,
                                       int steps = 32) {
  GeometryCache geo = build_geometry(path.potential(0.0));
  CompatibleACS acs = standard_acs(geo);
  ScalarField Fz = F;
  remove_mean_volume(geo, Fz);

  ScalarField psi = path.potential_dot(0.0);
  ACSVariation Lpsi = lie_derivative_J(psi, acs, geo);
  ACSVariation A = I_apply(Lpsi, acs, geo);
  for (auto& x : A.A.c) x = -x; // A = dJ_t/dt|_0 = -J L_{X_psi} J
  ACSVariation LF = lie_derivative_J(Fz, acs, geo);

  ScalMomentData out;
  out.lhs = omega_J(LF, A, acs, geo);
  auto scal_int = [&](double t) {
    DiscreteDiffeo f = moser_flow(path, t, steps);
    TensorField Jt = pulled_back_complex_structure(f);
    TensorField gJt = metric_of_acs(geo.omega, Jt);
    GeometryCache geoJt = metric_geometry(geo.omega, gJt);
    return integrate_volume(geo, Fz * geoJt.scal);
  };
  out.rhs_derivative = richardson_derivative(scal_int, h);
  return out;
}

// residual of the moment identity with the pinned Hermitian normalization
inline double scal_moment_residual(const PotentialPath& path, const ScalarField& F, double h = 1e-3,
                                   int steps = 32) {
  ScalMomentData d = scal_moment_data(path, F, h, steps);
  return std::abs(d.lhs - kHermitianScalFactor * d.rhs_derivative);
}

} // namespace kflow
