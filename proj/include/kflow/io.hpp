#pragma once

// KFLD v1 field files: one JSON header line, then raw little-endian float64
// in row-major order (multi-index outer, grid point inner).

#include <bit>
#include <fstream>

#include <json.hpp>

#include "grid.hpp"

namespace kflow {

static_assert(std::endian::native == std::endian::little, "KFLD writer assumes little-endian host");

namespace detail {
inline nlohmann::ordered_json kfld_header(const GridSpec& spec, int rank,
                                          const std::vector<Variance>& var, bool is_complex) {
  nlohmann::ordered_json h;
  h["magic"] = "KFLD";
  h["version"] = 1;
  h["n"] = spec.n;
  h["points_per_axis"] = spec.p;
  h["rank"] = rank;
  std::vector<int> v;
  for (auto f : var) v.push_back(f == Variance::Con ? 1 : 0);
  h["variance"] = v;
  h["complex"] = is_complex;
  return h;
}

inline nlohmann::json kfld_read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("KFLD: missing header");
  auto h = nlohmann::json::parse(line);
  if (h.value("magic", "") != std::string("KFLD") || h.value("version", 0) != 1)
    throw std::runtime_error("KFLD: bad magic/version");
  return h;
}
} // namespace detail

inline void write_kfld(const std::string& path, const TensorField& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("KFLD: cannot open " + path);
  out << detail::kfld_header(t.spec, t.rank, t.variance, false).dump() << "\n";
  out.write(reinterpret_cast<const char*>(t.c.data()),
            static_cast<std::streamsize>(t.c.size() * sizeof(double)));
}

inline void write_kfld(const std::string& path, const ScalarField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("KFLD: cannot open " + path);
  out << detail::kfld_header(f.spec, 0, {}, false).dump() << "\n";
  out.write(reinterpret_cast<const char*>(f.v.data()),
            static_cast<std::streamsize>(f.v.size() * sizeof(double)));
}

inline void write_kfld(const std::string& path, const ComplexField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("KFLD: cannot open " + path);
  out << detail::kfld_header(f.spec, 0, {}, true).dump() << "\n";
  // re/im interleaved
  out.write(reinterpret_cast<const char*>(f.v.data()),
            static_cast<std::streamsize>(f.v.size() * sizeof(cplx)));
}

inline TensorField read_kfld_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("KFLD: cannot open " + path);
  auto h = detail::kfld_read_header(in);
  GridSpec spec(h.at("n").get<int>(), h.at("points_per_axis").get<int>());
  std::vector<Variance> var;
  for (int f : h.at("variance").get<std::vector<int>>())
    var.push_back(f ? Variance::Con : Variance::Cov);
  if (static_cast<int>(var.size()) != h.at("rank").get<int>())
    throw std::runtime_error("KFLD: rank/variance mismatch");
  TensorField t(spec, var);
  in.read(reinterpret_cast<char*>(t.c.data()), static_cast<std::streamsize>(t.c.size() * sizeof(double)));
  if (!in) throw std::runtime_error("KFLD: truncated payload in " + path);
  return t;
}

inline ScalarField read_kfld_scalar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("KFLD: cannot open " + path);
  auto h = detail::kfld_read_header(in);
  GridSpec spec(h.at("n").get<int>(), h.at("points_per_axis").get<int>());
  if (h.at("rank").get<int>() != 0) throw std::runtime_error("KFLD: expected rank-0 field");
  if (h.value("complex", false)) throw std::runtime_error("KFLD: expected real field");
  ScalarField f(spec);
  in.read(reinterpret_cast<char*>(f.v.data()), static_cast<std::streamsize>(f.v.size() * sizeof(double)));
  if (!in) throw std::runtime_error("KFLD: truncated payload in " + path);
  return f;
}

} // namespace kflow
