#pragma once

// Periodic uniform grids on [0,1)^{2n}: spectral differentiation, quadrature,
// trigonometric interpolation, deterministic reductions.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace kflow {

using cplx = std::complex<double>;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

struct GridMismatch : std::runtime_error {
  GridMismatch() : std::runtime_error("fields live on different grids") {}
};

struct PositivityViolation : std::runtime_error {
  std::size_t point;
  double min_eigenvalue;
  PositivityViolation(std::size_t pt, double ev)
      : std::runtime_error("omega_phi(.,J.) not positive definite at grid point " +
                           std::to_string(pt) + " (min eigenvalue " + std::to_string(ev) + ")"),
        point(pt), min_eigenvalue(ev) {}
};

struct SymplecticityViolation : std::runtime_error {
  double residual;
  explicit SymplecticityViolation(double r)
      : std::runtime_error("connection does not preserve omega (residual " + std::to_string(r) + ")"),
        residual(r) {}
};

struct NotApplicable : std::runtime_error {
  explicit NotApplicable(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic pairwise-tree summation. All quadrature and norms reduce
// through this so reports are bit-reproducible.
inline double pairwise_sum(const double* a, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(a, h) + pairwise_sum(a + h, n - h);
}
inline double pairwise_sum(const std::vector<double>& v) { return pairwise_sum(v.data(), v.size()); }

inline cplx pairwise_sum(const cplx* a, std::size_t n) {
  if (n <= 8) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(a, h) + pairwise_sum(a + h, n - h);
}

inline unsigned thread_cap() {
  static const unsigned cap = [] {
    unsigned hw = std::thread::hardware_concurrency();
    unsigned c = hw ? std::min(hw, 8u) : 1u;
    if (const char* e = std::getenv("KFLOW_THREADS")) {
      long v = std::strtol(e, nullptr, 10);
      if (v >= 1) c = static_cast<unsigned>(v);
    }
    return c;
  }();
  return cap;
}

// Data-parallel loop over disjoint outputs; reductions stay serial.
template <class F>
inline void parallel_for(std::size_t n, F&& f) {
  const unsigned nt = thread_cap();
  if (nt <= 1 || n < 4096) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> ts;
  ts.reserve(nt);
  const std::size_t chunk = (n + nt - 1) / nt;
  for (unsigned t = 0; t < nt; ++t) {
    const std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b >= e) break;
    ts.emplace_back([&f, b, e] {
      for (std::size_t i = b; i < e; ++i) f(i);
    });
  }
  for (auto& th : ts) th.join();
}

// Grid over [0,1)^{2n}, axis order (x^1..x^n, y^1..y^n), coordinates j/p.
struct GridSpec {
  int n = 1;  // complex dimension
  int p = 16; // points per axis (even)

  GridSpec() = default;
  GridSpec(int n_, int p_) : n(n_), p(p_) {
    if (n < 1 || n > 2) throw std::invalid_argument("GridSpec: complex dimension must be 1 or 2");
    if (p < 8 || p % 2 != 0) throw std::invalid_argument("GridSpec: points_per_axis must be even and >= 8");
  }

  int dim() const { return 2 * n; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim(); ++a) s *= static_cast<std::size_t>(p);
    return s;
  }
  // row-major: axis 0 slowest
  std::size_t stride(int axis) const {
    std::size_t s = 1;
    for (int a = axis + 1; a < dim(); ++a) s *= static_cast<std::size_t>(p);
    return s;
  }
  void point_coords(std::size_t idx, double* x) const {
    for (int a = dim() - 1; a >= 0; --a) {
      x[a] = static_cast<double>(idx % p) / p;
      idx /= p;
    }
  }
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b) {
  if (!(a == b)) throw GridMismatch();
}

template <class T>
struct BasicField {
  GridSpec spec;
  std::vector<T> v;

  BasicField() = default;
  explicit BasicField(const GridSpec& s, T init = T{}) : spec(s), v(s.size(), init) {}

  std::size_t size() const { return v.size(); }
  T& operator[](std::size_t i) { return v[i]; }
  const T& operator[](std::size_t i) const { return v[i]; }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  BasicField& operator+=(const BasicField& o) {
    require_same_grid(spec, o.spec);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
    return *this;
  }
  BasicField& operator-=(const BasicField& o) {
    require_same_grid(spec, o.spec);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
    return *this;
  }
  BasicField& operator*=(T s) {
    for (auto& x : v) x *= s;
    return *this;
  }
  friend BasicField operator+(BasicField a, const BasicField& b) { return a += b; }
  friend BasicField operator-(BasicField a, const BasicField& b) { return a -= b; }
  friend BasicField operator*(T s, BasicField a) { return a *= s; }
  friend BasicField operator*(const BasicField& a, const BasicField& b) {
    require_same_grid(a.spec, b.spec);
    BasicField r = a;
    for (std::size_t i = 0; i < r.v.size(); ++i) r.v[i] *= b.v[i];
    return r;
  }

  T mean() const { return pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size()); }
  double sup_norm() const {
    double m = 0.0;
    for (const auto& x : v) m = std::max(m, std::abs(x));
    return m;
  }
};

using ScalarField = BasicField<double>;
using ComplexField = BasicField<cplx>;

enum class Variance : std::uint8_t { Cov = 0, Con = 1 };

// Dense tensor field, component-major storage (multi-index outer, point inner).
struct TensorField {
  GridSpec spec;
  int rank = 0;
  std::vector<Variance> variance;
  std::vector<double> c;

  TensorField() = default;
  TensorField(const GridSpec& s, std::vector<Variance> var)
      : spec(s), rank(static_cast<int>(var.size())), variance(std::move(var)) {
    c.assign(ncomp() * s.size(), 0.0);
  }

  int d() const { return spec.dim(); }
  std::size_t npts() const { return spec.size(); }
  std::size_t ncomp() const {
    std::size_t s = 1;
    for (int r = 0; r < rank; ++r) s *= static_cast<std::size_t>(d());
    return s;
  }
  std::size_t cidx(std::initializer_list<int> idx) const {
    std::size_t s = 0;
    for (int i : idx) s = s * d() + static_cast<std::size_t>(i);
    return s;
  }
  double* comp(std::size_t ci) { return c.data() + ci * npts(); }
  const double* comp(std::size_t ci) const { return c.data() + ci * npts(); }
  double& at(std::size_t ci, std::size_t pt) { return c[ci * npts() + pt]; }
  double at(std::size_t ci, std::size_t pt) const { return c[ci * npts() + pt]; }

  double sup_norm() const {
    double m = 0.0;
    for (double x : c) m = std::max(m, std::abs(x));
    return m;
  }
  TensorField& operator+=(const TensorField& o) {
    require_same_grid(spec, o.spec);
    if (rank != o.rank) throw std::invalid_argument("tensor rank mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += o.c[i];
    return *this;
  }
  TensorField& operator-=(const TensorField& o) {
    require_same_grid(spec, o.spec);
    if (rank != o.rank) throw std::invalid_argument("tensor rank mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= o.c[i];
    return *this;
  }
  TensorField& operator*=(double s) {
    for (auto& x : c) x *= s;
    return *this;
  }
  friend TensorField operator+(TensorField a, const TensorField& b) { return a += b; }
  friend TensorField operator-(TensorField a, const TensorField& b) { return a -= b; }
  friend TensorField operator*(double s, TensorField a) { return a *= s; }
};

// ---------------------------------------------------------------------------
// Spectral differentiation: circulant Fourier differentiation matrices.

namespace detail {

// kernel K[d] with D[j][l] = K[(j-l) mod p]; exact on trig polynomials.
inline std::vector<double> diff_kernel(int p, int order) {
  std::vector<double> K(static_cast<std::size_t>(p), 0.0);
  for (int d = 0; d < p; ++d) {
    cplx acc = 0.0;
    for (int k = 0; k < p; ++k) {
      int kt = (k <= p / 2) ? k : k - p;
      if (k == p / 2 && order % 2 != 0) continue; // Nyquist mode has no odd derivative
      cplx mult = std::pow(cplx(0.0, two_pi * kt), order);
      acc += mult * std::exp(cplx(0.0, two_pi * k * d / static_cast<double>(p)));
    }
    K[static_cast<std::size_t>(d)] = acc.real() / p;
  }
  // enforce the exact kernel symmetry (odd order: K[d] = -K[p-d], even:
  // K[d] = K[p-d]) and exact zero response on constants
  const double sgn = (order % 2) ? -1.0 : 1.0;
  for (int d = 1; d < p - d; ++d) {
    const double v = 0.5 * (K[static_cast<std::size_t>(d)] + sgn * K[static_cast<std::size_t>(p - d)]);
    K[static_cast<std::size_t>(d)] = v;
    K[static_cast<std::size_t>(p - d)] = sgn * v;
  }
  if (order % 2) {
    K[0] = 0.0;
    if (p % 2 == 0) K[static_cast<std::size_t>(p / 2)] = 0.0;
  } else {
    double rowsum = 0.0;
    for (double v : K) rowsum += v;
    K[0] -= rowsum;
  }
  return K;
}

inline const std::vector<double>& diff_matrix_kernel(int p, int order) {
  static std::map<std::pair<int, int>, std::unique_ptr<std::vector<double>>> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto& slot = cache[{p, order}];
  if (!slot) slot = std::make_unique<std::vector<double>>(diff_kernel(p, order));
  return *slot;
}

// apply circulant kernel along one axis; in != out. The line mean is
// subtracted first: kernels annihilate constants, so this changes nothing
// analytically but makes the constant part cancel exactly in floating point.
inline void apply_axis_kernel(const GridSpec& spec, const double* in, double* out, int axis,
                              const std::vector<double>& K) {
  const int p = spec.p;
  const std::size_t s = spec.stride(axis);
  const std::size_t block = s * static_cast<std::size_t>(p);
  const std::size_t nblocks = spec.size() / block;
  parallel_for(nblocks * s, [&](std::size_t w) {
    const std::size_t ob = w / s, inner = w % s;
    const std::size_t base = ob * block + inner;
    double mean = 0.0;
    for (int l = 0; l < p; ++l) mean += in[base + static_cast<std::size_t>(l) * s];
    mean /= p;
    for (int j = 0; j < p; ++j) {
      double acc = 0.0;
      const double* Kj = K.data();
      for (int l = 0; l < p; ++l) {
        int dd = j - l;
        if (dd < 0) dd += p;
        acc += Kj[dd] * (in[base + static_cast<std::size_t>(l) * s] - mean);
      }
      out[base + static_cast<std::size_t>(j) * s] = acc;
    }
  });
}

} // namespace detail

inline ScalarField partial_derivative(const ScalarField& f, int axis, int order = 1) {
  if (axis < 0 || axis >= f.spec.dim()) throw std::invalid_argument("partial_derivative: axis out of range");
  if (order < 1) throw std::invalid_argument("partial_derivative: order must be >= 1");
  ScalarField out(f.spec);
  detail::apply_axis_kernel(f.spec, f.data(), out.data(), axis, detail::diff_matrix_kernel(f.spec.p, order));
  return out;
}

inline TensorField partial_derivative(const TensorField& t, int axis, int order = 1) {
  if (axis < 0 || axis >= t.spec.dim()) throw std::invalid_argument("partial_derivative: axis out of range");
  if (order < 1) throw std::invalid_argument("partial_derivative: order must be >= 1");
  TensorField out(t.spec, t.variance);
  const auto& K = detail::diff_matrix_kernel(t.spec.p, order);
  for (std::size_t ci = 0; ci < t.ncomp(); ++ci)
    detail::apply_axis_kernel(t.spec, t.comp(ci), out.comp(ci), axis, K);
  return out;
}

// quadrature for \int_M f rho omega^n/n! on the unit torus
inline double integrate(const ScalarField& f, const ScalarField& density) {
  require_same_grid(f.spec, density.spec);
  std::vector<double> prod(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(density[i] > 0.0)) throw std::invalid_argument("integrate: density must be positive everywhere");
    prod[i] = f[i] * density[i];
  }
  return pairwise_sum(prod) / static_cast<double>(f.size());
}

inline cplx integrate(const ComplexField& f, const ScalarField& density) {
  require_same_grid(f.spec, density.spec);
  std::vector<cplx> prod(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(density[i] > 0.0)) throw std::invalid_argument("integrate: density must be positive everywhere");
    prod[i] = f[i] * density[i];
  }
  return pairwise_sum(prod.data(), prod.size()) / static_cast<double>(f.size());
}

// ---------------------------------------------------------------------------
// Full DFT (sizes here are small; dense per-axis transforms are plenty).

namespace detail {
inline void dft_axis(const GridSpec& spec, std::vector<cplx>& buf, int axis, bool inverse) {
  const int p = spec.p;
  const std::size_t s = spec.stride(axis);
  const std::size_t block = s * static_cast<std::size_t>(p);
  const std::size_t nblocks = spec.size() / block;
  std::vector<cplx> F(static_cast<std::size_t>(p) * p);
  const double sgn = inverse ? 1.0 : -1.0;
  for (int k = 0; k < p; ++k)
    for (int j = 0; j < p; ++j)
      F[static_cast<std::size_t>(k) * p + j] = std::exp(cplx(0.0, sgn * two_pi * k * j / p));
  std::vector<cplx> line(static_cast<std::size_t>(p));
  for (std::size_t ob = 0; ob < nblocks; ++ob)
    for (std::size_t inner = 0; inner < s; ++inner) {
      const std::size_t base = ob * block + inner;
      for (int j = 0; j < p; ++j) line[static_cast<std::size_t>(j)] = buf[base + static_cast<std::size_t>(j) * s];
      for (int k = 0; k < p; ++k) {
        cplx acc = 0.0;
        for (int j = 0; j < p; ++j) acc += F[static_cast<std::size_t>(k) * p + j] * line[static_cast<std::size_t>(j)];
        buf[base + static_cast<std::size_t>(k) * s] = inverse ? acc / static_cast<double>(p) : acc;
      }
    }
}
} // namespace detail

// forward DFT, normalized so that coefficients are mode amplitudes:
// f(x) = sum_k c_k exp(2 pi i k.x)
inline std::vector<cplx> dft(const ScalarField& f) {
  std::vector<cplx> buf(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) buf[i] = f[i];
  for (int a = 0; a < f.spec.dim(); ++a) detail::dft_axis(f.spec, buf, a, false);
  const double N = static_cast<double>(f.size());
  for (auto& z : buf) z /= N;
  return buf;
}

inline ScalarField idft(const std::vector<cplx>& coef, const GridSpec& spec) {
  std::vector<cplx> buf = coef;
  for (int a = 0; a < spec.dim(); ++a) detail::dft_axis(spec, buf, a, true);
  ScalarField out(spec);
  const double N = static_cast<double>(spec.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i].real() * N;
  return out;
}

// Trigonometric interpolant of a grid scalar; exact at grid nodes.
// Modes with |coef| <= rel_tol * max|coef| may be dropped (flows use this).
struct Interpolant {
  GridSpec spec;
  std::vector<std::array<int, 4>> kvec; // signed modes, unused axes zero
  std::vector<cplx> coef;

  static Interpolant build(const ScalarField& f, double rel_tol = 0.0) {
    Interpolant it;
    it.spec = f.spec;
    auto c = dft(f);
    double cmax = 0.0;
    for (auto& z : c) cmax = std::max(cmax, std::abs(z));
    const double thr = rel_tol * cmax;
    const int d = f.spec.dim(), p = f.spec.p;
    std::array<int, 4> k{0, 0, 0, 0};
    for (std::size_t idx = 0; idx < c.size(); ++idx) {
      if (std::abs(c[idx]) <= thr && rel_tol > 0.0) continue;
      std::size_t t = idx;
      for (int a = d - 1; a >= 0; --a) {
        int ka = static_cast<int>(t % p);
        t /= p;
        k[static_cast<std::size_t>(a)] = (ka <= p / 2) ? ka : ka - p;
      }
      it.kvec.push_back(k);
      it.coef.push_back(c[idx]);
    }
    return it;
  }

  double eval(const double* x) const {
    double val, grad[4];
    eval_impl(x, val, grad, false);
    return val;
  }
  void eval_with_grad(const double* x, double& val, double* grad) const {
    eval_impl(x, val, grad, true);
  }

private:
  void eval_impl(const double* x, double& val, double* grad, bool with_grad) const {
    const int d = spec.dim(), ph = spec.p / 2;
    // per-axis tables e^{2 pi i k x_a}, k = -p/2..p/2
    std::array<std::vector<cplx>, 4> tab;
    for (int a = 0; a < d; ++a) {
      tab[static_cast<std::size_t>(a)].assign(static_cast<std::size_t>(2 * ph + 1), cplx(1.0, 0.0));
      const cplx w = std::exp(cplx(0.0, two_pi * x[a]));
      cplx up = 1.0;
      for (int k = 1; k <= ph; ++k) {
        up *= w;
        tab[static_cast<std::size_t>(a)][static_cast<std::size_t>(ph + k)] = up;
        tab[static_cast<std::size_t>(a)][static_cast<std::size_t>(ph - k)] = std::conj(up);
      }
    }
    cplx acc = 0.0;
    std::array<cplx, 4> gacc{};
    for (std::size_t m = 0; m < coef.size(); ++m) {
      cplx e = coef[m];
      for (int a = 0; a < d; ++a)
        e *= tab[static_cast<std::size_t>(a)][static_cast<std::size_t>(ph + kvec[m][static_cast<std::size_t>(a)])];
      acc += e;
      if (with_grad)
        for (int a = 0; a < d; ++a)
          gacc[static_cast<std::size_t>(a)] += cplx(0.0, two_pi * kvec[m][static_cast<std::size_t>(a)]) * e;
    }
    val = acc.real();
    if (with_grad)
      for (int a = 0; a < d; ++a) grad[a] = gacc[static_cast<std::size_t>(a)].real();
  }
};

// interpolate(f, points): trigonometric interpolation, coordinates wrapped mod 1
inline std::vector<double> interpolate(const ScalarField& f, const std::vector<std::vector<double>>& points) {
  Interpolant it = Interpolant::build(f);
  std::vector<double> out;
  out.reserve(points.size());
  for (const auto& pt : points) {
    double x[4] = {0, 0, 0, 0};
    for (int a = 0; a < f.spec.dim(); ++a) {
      double xa = pt[static_cast<std::size_t>(a)];
      xa -= std::floor(xa);
      x[a] = xa;
    }
    out.push_back(it.eval(x));
  }
  return out;
}

// exact circular grid translation: out(x) = in(x - m/p)
inline ScalarField translate(const ScalarField& f, const std::vector<int>& m) {
  const int d = f.spec.dim(), p = f.spec.p;
  ScalarField out(f.spec);
  std::vector<int> idx(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::size_t t = i;
    for (int a = d - 1; a >= 0; --a) {
      idx[static_cast<std::size_t>(a)] = static_cast<int>(t % p);
      t /= p;
    }
    std::size_t src = 0;
    for (int a = 0; a < d; ++a) {
      int s = (idx[static_cast<std::size_t>(a)] - m[static_cast<std::size_t>(a)]) % p;
      if (s < 0) s += p;
      src = src * p + static_cast<std::size_t>(s);
    }
    out[i] = f[src];
  }
  return out;
}

inline TensorField translate(const TensorField& t, const std::vector<int>& m) {
  TensorField out(t.spec, t.variance);
  for (std::size_t ci = 0; ci < t.ncomp(); ++ci) {
    ScalarField tmp(t.spec);
    std::copy(t.comp(ci), t.comp(ci) + t.npts(), tmp.data());
    ScalarField sh = translate(tmp, m);
    std::copy(sh.data(), sh.data() + t.npts(), out.comp(ci));
  }
  return out;
}

// amp * cos(2 pi k.x + phase)
inline ScalarField trig_field(const GridSpec& spec, const std::vector<int>& k, double amp, double phase = 0.0) {
  ScalarField f(spec);
  const int d = spec.dim();
  double x[4];
  for (std::size_t i = 0; i < f.size(); ++i) {
    spec.point_coords(i, x);
    double arg = phase;
    for (int a = 0; a < d; ++a) arg += two_pi * k[static_cast<std::size_t>(a)] * x[a];
    f[i] = amp * std::cos(arg);
  }
  return f;
}

inline ScalarField constant_field(const GridSpec& spec, double v) { return ScalarField(spec, v); }

// zero every Fourier mode with |k|_inf > kcut (noise control for fields whose
// true spectrum decays geometrically)
inline ScalarField spectral_lowpass(const ScalarField& f, int kcut) {
  auto c = dft(f);
  const int d = f.spec.dim(), p = f.spec.p;
  for (std::size_t idx = 0; idx < c.size(); ++idx) {
    std::size_t t = idx;
    int kmax = 0;
    for (int a = d - 1; a >= 0; --a) {
      int ka = static_cast<int>(t % p);
      t /= p;
      int kt = (ka <= p / 2) ? ka : ka - p;
      kmax = std::max(kmax, std::abs(kt));
    }
    if (kmax > kcut) c[idx] = 0.0;
  }
  return idft(c, f.spec);
}

inline TensorField spectral_lowpass(const TensorField& tf, int kcut) {
  TensorField out(tf.spec, tf.variance);
  for (std::size_t ci = 0; ci < tf.ncomp(); ++ci) {
    ScalarField tmp(tf.spec);
    std::copy(tf.comp(ci), tf.comp(ci) + tf.npts(), tmp.data());
    ScalarField fl = spectral_lowpass(tmp, kcut);
    std::copy(fl.data(), fl.data() + tf.npts(), out.comp(ci));
  }
  return out;
}

inline void remove_mean(ScalarField& f) {
  const double m = f.mean();
  for (auto& x : f.v) x -= m;
}

} // namespace kflow
