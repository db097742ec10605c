#pragma once

// Shared builders for the unit tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mkrf/flow.hpp"
#include "mkrf/kahler.hpp"

namespace mkrf::test {

inline CMatrix diag(std::initializer_list<double> d) {
  const int n = static_cast<int>(d.size());
  CMatrix m = CMatrix::Zero(n, n);
  int i = 0;
  for (double v : d) m(i, i) = v, ++i;
  return m;
}

inline FlowInputs inputs(const GridSpec& g, const CMatrix& A0, const CMatrix& Ainf, std::vector<Mode> phi0 = {},
                         std::vector<Mode> phi_inf = {}, std::vector<Mode> log_h = {}) {
  return {g, compute_T(A0, Ainf), trig_field(g, phi0), trig_field(g, phi_inf), trig_field(g, log_h)};
}

inline double sup_diff(const ScalarField& a, const ScalarField& b) {
  double d = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) d = std::max(d, std::abs(a[p] - b[p]));
  return d;
}

inline ScalarField minus_mean(const ScalarField& f) {
  ScalarField out = f;
  const double m = mean(f);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] -= m;
  return out;
}

// Random positive 2x2 Hermitian matrix with eigenvalues in [0.2, 5].
inline Herm random_positive(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> eig(0.2, 5.0), ang(0.0, 2.0 * M_PI);
  const double l1 = eig(rng), l2 = eig(rng), th = ang(rng) / 4.0, ph = ang(rng);
  const double c = std::cos(th), s = std::sin(th);
  const cplx e = std::polar(1.0, ph);
  // U = [[c, -s e], [s conj(e), c]], M = U diag(l1, l2) U^*
  return {l1 * c * c + l2 * s * s, l1 * s * s + l2 * c * c, (l1 - l2) * c * s * e};
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mkrf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mkrf::test
