#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"

using namespace kflow;
using namespace kflow_test;

TEST_CASE("Omega^E is antisymmetric and matches the trace form") {
  GridSpec spec(1, 24);
  GeometryCache geo = build_geometry(curved_n1(spec));
  std::mt19937_64 rng(21);
  Sym3Tensor A = random_sym3(spec, rng, 2, 0.5);
  Sym3Tensor B = random_sym3(spec, rng, 2, 0.5);

  CHECK(std::abs(omega_E(A, A, geo)) < 1e-12);
  const double ab = omega_E(A, B, geo);
  const double ba = omega_E(B, A, geo);
  CHECK(std::abs(ab + ba) < 1e-12 * std::max(1.0, std::abs(ab)));

  const double tr = omega_E_trace_form(A, B, geo);
  CHECK(std::abs(ab - tr) < 1e-10 * std::max(1.0, std::abs(ab)));
}

TEST_CASE("Omega^E on constant coefficients matches the hand contraction") {
  // n = 1: four independent components, Lambda = [[0,-1],[1,0]] on the flat
  // torus. The expected value is the explicitly enumerated 8-term sum.
  GridSpec spec(1, 16);
  GeometryCache geo = flat_geometry(spec);
  const double a[2][2][2] = {{{0.3, -1.1}, {-1.1, 0.7}}, {{-1.1, 0.7}, {0.7, 2.2}}};
  const double b[2][2][2] = {{{1.4, 0.2}, {0.2, -0.5}}, {{0.2, -0.5}, {-0.5, 0.9}}};
  auto make = [&](const double (&c)[2][2][2]) {
    TensorField t(spec, {Variance::Cov, Variance::Cov, Variance::Cov});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          double* o = t.comp(t.cidx({i, j, k}));
          std::fill(o, o + t.npts(), c[i][j][k]);
        }
    return Sym3Tensor(std::move(t));
  };
  const double L[2][2] = {{0.0, -1.0}, {1.0, 0.0}};
  double expected = 0.0;
  for (int i1 = 0; i1 < 2; ++i1)
    for (int j1 = 0; j1 < 2; ++j1)
      for (int i2 = 0; i2 < 2; ++i2)
        for (int j2 = 0; j2 < 2; ++j2)
          for (int i3 = 0; i3 < 2; ++i3)
            for (int j3 = 0; j3 < 2; ++j3)
              expected += L[i1][j1] * L[i2][j2] * L[i3][j3] * a[i1][i2][i3] * b[j1][j2][j3];
  CHECK(omega_E(make(a), make(b), geo) == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("J^E and its metric") {
  GridSpec spec(1, 24);
  GeometryCache geo = flat_geometry(spec);
  std::mt19937_64 rng(4);

  SECTION("(J^E)^2 = -Id") {
    Sym3Tensor A = random_sym3(spec, rng, 2, 1.0);
    Sym3Tensor JJA = jE_apply(jE_apply(A, geo), geo);
    TensorField sum = JJA.t + A.t;
    CHECK(sum.sup_norm() < 1e-12 * std::max(1.0, A.t.sup_norm()));
  }
  SECTION("g_JE positive definite and symmetric") {
    for (int t = 0; t < 5; ++t) {
      Sym3Tensor A = random_sym3(spec, rng, 2, 1.0);
      CHECK(g_JE(A, A, geo) > 0.0);
    }
    Sym3Tensor A = random_sym3(spec, rng, 2, 1.0);
    Sym3Tensor B = random_sym3(spec, rng, 2, 1.0);
    const double ab = g_JE(A, B, geo), ba = g_JE(B, A, geo);
    CHECK(std::abs(ab - ba) < 1e-10 * std::max(1.0, std::abs(ab)));
  }
}

TEST_CASE("Lie derivative of the connection") {
  GridSpec spec(1, 32);
  GeometryCache flat = flat_geometry(spec);

  SECTION("constants act trivially") {
    ScalarField c(spec, 2.0);
    Sym3Tensor L = lie_derivative_connection(c, flat);
    CHECK(L.t.sup_norm() < 1e-12);
  }
  SECTION("flat torus: the lowered tensor is the plain third derivative of F") {
    ScalarField F = trig_field(spec, {1, 2}, 1.0, 0.4);
    Sym3Tensor L = lie_derivative_connection(F, flat);
    double worst = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          ScalarField d3 = partial_derivative(partial_derivative(partial_derivative(F, i), j), k);
          const double* o = L.t.comp(L.t.cidx({i, j, k}));
          for (std::size_t pt = 0; pt < spec.size(); ++pt)
            worst = std::max(worst, std::abs(o[pt] - d3[pt]));
        }
    CHECK(worst < 1e-7);
  }
  SECTION("curved torus: matches the flow oracle") {
    // central difference of the pulled-back connection along the Hamiltonian
    // flow of F at h = 1e-4
    GeometryCache geo = build_geometry(curved_n1(spec));
    ScalarField F = trig_field(spec, {1, 0}, 1.0, 0.8);
    Sym3Tensor L = lie_derivative_connection(F, geo);
    TensorField X = hamiltonian_field(geo, F);
    auto velocity = [&X](double) { return X; };
    const double h = 1e-4;
    DiscreteDiffeo fp = integrate_flow(spec, velocity, h, 32);
    DiscreteDiffeo fm = integrate_flow(spec, velocity, -h, 32);
    TensorField gp = pullback_connection(geo.conn.christoffel, fp);
    TensorField gm = pullback_connection(geo.conn.christoffel, fm);
    double worst = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        for (int k = 0; k < 2; ++k) {
          const std::size_t cs0 = gp.cidx({0, i, j});
          const std::size_t cs1 = gp.cidx({1, i, j});
          const double* a0 = gp.comp(cs0);
          const double* a1 = gp.comp(cs1);
          const double* b0 = gm.comp(cs0);
          const double* b1 = gm.comp(cs1);
          const double* ref = L.t.comp(L.t.cidx({i, j, k}));
          for (std::size_t pt = 0; pt < spec.size(); ++pt) {
            const double d0 = (a0[pt] - b0[pt]) / (2 * h);
            const double d1 = (a1[pt] - b1[pt]) / (2 * h);
            // lower with omega: value = dGamma^s omega_{s k}
            const double low = d0 * geo.omega.at(geo.omega.cidx({0, k}), pt) +
                               d1 * geo.omega.at(geo.omega.cidx({1, k}), pt);
            worst = std::max(worst, std::abs(low - ref[pt]));
          }
        }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("moment map") {
  SECTION("flat torus vanishes identically") {
    GridSpec spec(1, 32);
    MomentMap mm = moment_map(flat_geometry(spec));
    CHECK(mm.mu_tilde.sup_norm() == 0.0);
    CHECK(mm.mu0 == 0.0);
  }
  SECTION("n = 1 reduction to -1/2 Delta Scal") {
    GridSpec spec(1, 48);
    GeometryCache geo = build_geometry(curved_n1(spec));
    MomentMap mm = moment_map(geo);
    ScalarField ref = laplacian(geo, geo.scal);
    ref *= -0.5;
    remove_mean_volume(geo, ref);
    ScalarField diff = mm.mu - ref;
    CHECK(diff.sup_norm() / mm.mu.sup_norm() < 1e-7);
  }
  SECTION("wedge P is rejected at n = 1") {
    GridSpec spec(1, 16);
    GeometryCache geo = flat_geometry(spec);
    CHECK_THROWS_AS(p_wedge(geo.conn, geo), NotApplicable);
  }
  SECTION("n = 2: wedge P equals the expanded P") {
    GridSpec spec(2, 8);
    GeometryCache geo = build_geometry(curved_n2(spec));
    ScalarField pe = p_expanded(geo.conn, geo);
    ScalarField pw = p_wedge(geo.conn, geo);
    ScalarField diff = pe - pw;
    CHECK(diff.sup_norm() / pe.sup_norm() < 1e-8);
  }
}

TEST_CASE("moment identity") {
  GridSpec spec(1, 32);
  std::mt19937_64 rng(31);

  SECTION("constant F gives zero on both sides") {
    GeometryCache geo = flat_geometry(spec);
    Sym3Tensor A = random_sym3(spec, rng, 2, 0.1);
    ScalarField c(spec, 5.0);
    CHECK(moment_identity_residual(c, A, geo) < 1e-12);
  }
  SECTION("flat base with A a fundamental vector field") {
    GeometryCache geo = flat_geometry(spec);
    ScalarField H = trig_field(spec, {1, 1}, 0.05, 0.3);
    Sym3Tensor A = lie_derivative_connection(H, geo);
    ScalarField F = trig_field(spec, {1, 0}, 1.0, 0.8);
    CHECK(moment_identity_residual(F, A, geo) < 1e-6);
  }
  SECTION("curved base with random A") {
    GeometryCache geo = build_geometry(curved_n1(spec));
    ScalarField F = trig_field(spec, {0, 1}, 1.0, 1.1);
    Sym3Tensor A = random_sym3(spec, rng, 2, 0.1);
    CHECK(moment_identity_residual(F, A, geo) < 1e-6);
  }
  SECTION("h outside the supported bracket is rejected") {
    GeometryCache geo = flat_geometry(spec);
    Sym3Tensor A = random_sym3(spec, rng, 2, 0.1);
    ScalarField F = trig_field(spec, {1, 0}, 1.0, 0.0);
    CHECK_THROWS_AS(moment_identity_residual(F, A, geo, 1.0), std::invalid_argument);
  }
}

TEST_CASE("mu0 is connection independent and equivariance holds") {
  GridSpec spec(1, 48);
  GeometryCache geo = build_geometry(curved_n1(spec));
  MomentMap mm = moment_map(geo);
  std::mt19937_64 rng(17);

  SECTION("mu0 under a symplectic shift of the connection") {
    Sym3Tensor A = random_sym3(spec, rng, 2, 0.05);
    ConnectionPack pk = pack_of_christoffel(perturbed_christoffel(geo, A, 1.0), geo.omega);
    MomentMap mm2 = moment_map(pk, geo);
    CHECK(std::abs(mm2.mu0 - mm.mu0) < 1e-7);
    CHECK(std::abs(mm.mu0) < 1e-7);
  }
  SECTION("Omega^E(L_H nabla, L_F nabla) = -int {F,H} mu") {
    ScalarField F = trig_field(spec, {1, 0}, 1.0, 0.2);
    ScalarField H = trig_field(spec, {0, 1}, 1.0, 1.3);
    const double lhs = omega_E(lie_derivative_connection(H, geo), lie_derivative_connection(F, geo), geo);
    const double rhs = -integrate_volume(geo, poisson(geo, F, H) * mm.mu_tilde);
    CHECK(std::abs(lhs - rhs) < 1e-6 * std::max(1.0, std::abs(rhs)));
  }
}
