#pragma once

// Discretized flat torus T^{2n} = R^{2n} / Z^{2n}: grids, real fields,
// pointwise Hermitian fields, spectral complex Hessians and snapshot files.
//
// Axis order is (x^1, y^1, x^2, y^2), row-major, so the last listed axis is
// the fastest-varying index. z^j = x^j + i y^j.

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mkrf {

using cplx = std::complex<double>;

struct GridSpec {
  int n = 1;  // complex dimension, 1 or 2
  int N = 8;  // points per real axis

  int axes() const { return 2 * n; }
  std::size_t size() const;
  double spacing() const { return 1.0 / N; }

  // Throws Error(invalid_input) unless n in {1,2} and N is even and >= 8.
  void validate() const;

  bool operator==(const GridSpec&) const = default;
};

class ScalarField {
 public:
  ScalarField() = default;
  explicit ScalarField(const GridSpec& grid, double value = 0.0);
  ScalarField(const GridSpec& grid, std::vector<double> values);

  const GridSpec& grid() const { return grid_; }
  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  double min() const;
  double max() const;
  std::size_t argmin() const;
  std::size_t argmax() const;
  bool all_finite() const;

 private:
  GridSpec grid_{1, 0};  // empty until constructed with a grid
  std::vector<double> values_;
};

// One Hermitian n x n matrix, n <= 2, stored as [[a, b], [conj(b), d]].
// For n = 1 only `a` is meaningful.
struct Herm {
  double a = 0.0;
  double d = 0.0;
  cplx b{};
};

// Pointwise Hermitian matrix field. Only the upper triangle is stored, so the
// Hermitian symmetry holds exactly by construction.
class HermitianField {
 public:
  HermitianField() = default;
  explicit HermitianField(const GridSpec& grid);

  const GridSpec& grid() const { return grid_; }
  std::size_t size() const { return a_.size(); }

  Herm at(std::size_t p) const {
    return grid_.n == 1 ? Herm{a_[p], 0.0, {}} : Herm{a_[p], d_[p], b_[p]};
  }
  void set(std::size_t p, const Herm& h) {
    a_[p] = h.a;
    if (grid_.n == 2) {
      d_[p] = h.d;
      b_[p] = h.b;
    }
  }
  cplx entry(std::size_t p, int j, int k) const;

  std::span<double> diag0() { return a_; }
  std::span<double> diag1() { return d_; }
  std::span<cplx> offdiag() { return b_; }
  std::span<const double> diag0() const { return a_; }
  std::span<const double> diag1() const { return d_; }
  std::span<const cplx> offdiag() const { return b_; }

 private:
  GridSpec grid_{1, 0};  // empty until constructed with a grid
  std::vector<double> a_, d_;
  std::vector<cplx> b_;
};

// Physical coordinate (in [0,1)) of flat point index p along `axis`.
double coordinate(const GridSpec& grid, std::size_t p, int axis);

// A single real Fourier mode amp * cos(2 pi k.x + phase); k is indexed by the
// axis order (x^1, y^1, x^2, y^2), trailing entries ignored when n = 1.
struct Mode {
  std::array<int, 4> k{};
  double amplitude = 0.0;
  double phase = 0.0;
};

ScalarField trig_field(const GridSpec& grid, std::span<const Mode> modes);

// Spectral calculus on one grid. Owns FFT plans and scratch buffers, so an
// instance must not be shared between threads; create one per worker.
class SpectralOps {
 public:
  explicit SpectralOps(const GridSpec& grid);
  ~SpectralOps();
  SpectralOps(const SpectralOps&) = delete;
  SpectralOps& operator=(const SpectralOps&) = delete;

  const GridSpec& grid() const { return grid_; }
  std::size_t spectrum_size() const { return spectrum_size_; }

  // H[f]_{jk} = d_{z^j} d_{zbar^k} f.
  void hessian(std::span<const double> f, HermitianField& out);
  HermitianField hessian(const ScalarField& f);

  // Symbol of the constant-coefficient operator f -> tr(B H[f]) for a
  // Hermitian B (given as `inverse_metric`). Non-positive when B > 0.
  std::vector<double> laplacian_symbol(const Herm& inverse_metric) const;

  // out = F^{-1}[ multiplier(k) * F[f](k) ]; multiplier has spectrum_size().
  void apply_multiplier(std::span<const double> f, std::span<const double> multiplier,
                        std::span<double> out);

 private:
  void forward(std::span<const double> f);
  void inverse_scaled(std::span<const double> symbol, std::span<double> out);

  GridSpec grid_;
  std::size_t spectrum_size_ = 0;
  // Symbols of H_11, H_22, Re H_12, Im H_12 on the half spectrum.
  std::vector<double> s11_, s22_, s12re_, s12im_;
  std::vector<double> re_, im_;
  struct Plans;
  std::unique_ptr<Plans> plans_;
};

// Stateless conveniences; each call builds (cached) plans and its own buffers.
HermitianField complex_hessian(const ScalarField& f);
double mean(const ScalarField& f);
double mean(std::span<const double> values);

struct NamedField {
  std::string name;
  ScalarField field;
};

void write_snapshot(const std::filesystem::path& path, std::span<const NamedField> fields);
std::vector<NamedField> read_snapshot(const std::filesystem::path& path);

}  // namespace mkrf
