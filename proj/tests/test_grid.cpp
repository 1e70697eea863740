#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include <kflow/io.hpp>

#include "test_helpers.hpp"

using namespace kflow;
using namespace kflow_test;

TEST_CASE("spectral derivative matches analytic derivatives") {
  GridSpec spec(1, 32);
  ScalarField f = trig_field(spec, {1, 0}, 1.0);
  // d/dx cos(2 pi x) = -2 pi sin(2 pi x) = 2 pi cos(2 pi x + pi/2)
  ScalarField ref = trig_field(spec, {1, 0}, two_pi, std::numbers::pi / 2);
  ScalarField diff = partial_derivative(f, 0) - ref;
  CHECK(diff.sup_norm() < 1e-12);

  ScalarField c(spec, 3.7);
  CHECK(partial_derivative(c, 0).sup_norm() == 0.0);
  CHECK(partial_derivative(c, 1, 2).sup_norm() == 0.0);

  // double x-derivative of sin(2 pi (x+y)) is -4 pi^2 sin(2 pi (x+y))
  ScalarField s = trig_field(spec, {1, 1}, 1.0, -std::numbers::pi / 2);
  ScalarField d2 = partial_derivative(s, 0, 2);
  ScalarField ref2 = s;
  ref2 *= -two_pi * two_pi;
  ScalarField diff2 = d2 - ref2;
  CHECK(diff2.sup_norm() < 1e-9);
}

TEST_CASE("spectral derivative argument validation") {
  GridSpec spec(1, 16);
  ScalarField f(spec);
  CHECK_THROWS_AS(partial_derivative(f, 2), std::invalid_argument);
  CHECK_THROWS_AS(partial_derivative(f, -1), std::invalid_argument);
  CHECK_THROWS_AS(partial_derivative(f, 0, 0), std::invalid_argument);
}

TEST_CASE("quadrature") {
  GridSpec spec(1, 32);
  ScalarField one(spec, 1.0);
  CHECK(integrate(one, one) == Catch::Approx(1.0).margin(1e-15));
  ScalarField c = trig_field(spec, {1, 0}, 1.0);
  CHECK(std::abs(integrate(c, one)) < 1e-15);
  ScalarField c2 = c * c;
  CHECK(integrate(c2, one) == Catch::Approx(0.5).margin(1e-14));
  ScalarField bad(spec, -1.0);
  CHECK_THROWS_AS(integrate(one, bad), std::invalid_argument);
}

TEST_CASE("periodicity: integrals of derivatives vanish") {
  GridSpec spec(1, 24);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  ScalarField f(spec);
  for (int kx = -3; kx <= 3; ++kx)
    for (int ky = -3; ky <= 3; ++ky) f += trig_field(spec, {kx, ky}, 0.3 * ud(rng), ud(rng));
  ScalarField one(spec, 1.0);
  for (int axis = 0; axis < 2; ++axis)
    CHECK(std::abs(integrate(partial_derivative(f, axis), one)) < 1e-12);
}

TEST_CASE("Leibniz rule for band-limited products") {
  GridSpec spec(1, 32);
  ScalarField f = trig_field(spec, {2, 1}, 0.7, 0.4);
  ScalarField g = trig_field(spec, {1, -2}, 1.1, 1.9);
  ScalarField lhs = partial_derivative(f * g, 0);
  ScalarField rhs = partial_derivative(f, 0) * g + f * partial_derivative(g, 0);
  ScalarField diff = lhs - rhs;
  CHECK(diff.sup_norm() < 1e-8);
}

TEST_CASE("Parseval") {
  GridSpec spec(1, 16);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  ScalarField f(spec);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = ud(rng);
  auto c = dft(f);
  double grid_l2 = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) grid_l2 += f[i] * f[i];
  grid_l2 /= static_cast<double>(f.size());
  double coef_l2 = 0.0;
  for (auto& z : c) coef_l2 += std::norm(z);
  CHECK(std::abs(grid_l2 - coef_l2) / grid_l2 < 1e-12);
}

TEST_CASE("trigonometric interpolation") {
  GridSpec spec(1, 16);
  ScalarField f = trig_field(spec, {1, 0}, 1.0);
  f += trig_field(spec, {2, -1}, 0.3, 0.7);

  SECTION("exact at grid nodes") {
    std::vector<std::vector<double>> pts;
    pts.push_back({0.25, 0.5});
    auto v = interpolate(f, pts);
    std::size_t idx = (16 / 4) * 16 + 8;
    CHECK(std::abs(v[0] - f[idx]) < 1e-12);
  }
  SECTION("single mode off-grid") {
    ScalarField g = trig_field(spec, {1, 0}, 1.0);
    auto v = interpolate(g, {{0.123, 0.0}});
    CHECK(std::abs(v[0] - std::cos(two_pi * 0.123)) < 1e-10);
  }
  SECTION("constants and wrapping") {
    ScalarField c(spec, 2.5);
    auto v = interpolate(c, {{0.913, 0.271}, {1.2, -0.4}});
    CHECK(std::abs(v[0] - 2.5) < 1e-12);
    CHECK(std::abs(v[1] - 2.5) < 1e-12);
  }
  SECTION("interpolant gradient") {
    Interpolant it = Interpolant::build(f);
    double x[2] = {0.3137, 0.7411};
    double val, grad[4];
    it.eval_with_grad(x, val, grad);
    const double h = 1e-6;
    double xp[2] = {x[0] + h, x[1]}, xm[2] = {x[0] - h, x[1]};
    CHECK(std::abs(grad[0] - (it.eval(xp) - it.eval(xm)) / (2 * h)) < 1e-6);
  }
}

TEST_CASE("exact grid translation") {
  GridSpec spec(1, 16);
  ScalarField f = trig_field(spec, {1, 2}, 1.0, 0.3);
  ScalarField g = translate(f, {3, -2});
  // g(x) = f(x - m/p)
  std::size_t src = ((0 - 3 + 16) % 16) * 16 + ((0 + 2) % 16);
  CHECK(g[0] == f[src]);
  ScalarField back = translate(g, {-3, 2});
  ScalarField diff = back - f;
  CHECK(diff.sup_norm() == 0.0);
}

TEST_CASE("spectral lowpass keeps the retained band exactly") {
  GridSpec spec(1, 16);
  ScalarField lo = trig_field(spec, {1, 1}, 1.0, 0.2);
  ScalarField hi = trig_field(spec, {5, 0}, 1.0, 0.9);
  ScalarField f = lo + hi;
  ScalarField filtered = spectral_lowpass(f, 3);
  ScalarField diff = filtered - lo;
  CHECK(diff.sup_norm() < 1e-12);
}

TEST_CASE("KFLD round trip and header") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "kflow_test_io";
  fs::create_directories(dir);

  GridSpec spec(1, 8);
  TensorField t(spec, {Variance::Con, Variance::Cov});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (auto& x : t.c) x = ud(rng);
  const std::string path = (dir / "t.kfld").string();
  write_kfld(path, t);

  // header is a single JSON line
  {
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::getline(in, line);
    auto h = nlohmann::json::parse(line);
    CHECK(h.at("magic") == "KFLD");
    CHECK(h.at("version") == 1);
    CHECK(h.at("n") == 1);
    CHECK(h.at("points_per_axis") == 8);
    CHECK(h.at("rank") == 2);
    CHECK(h.at("variance") == std::vector<int>({1, 0}));
    CHECK(h.at("complex") == false);
  }
  TensorField r = read_kfld_tensor(path);
  REQUIRE(r.c.size() == t.c.size());
  for (std::size_t i = 0; i < r.c.size(); ++i) CHECK(r.c[i] == t.c[i]);

  ScalarField s(spec);
  for (auto& x : s.v) x = ud(rng);
  const std::string spath = (dir / "s.kfld").string();
  write_kfld(spath, s);
  ScalarField rs = read_kfld_scalar(spath);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(rs[i] == s[i]);
}
