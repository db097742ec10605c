#pragma once

// Storage split for collapsing classes whose kernel is spanned by coordinate
// axes: a potential is held as its average over the collapsing (fibre)
// directions plus a fibre-dependent remainder. The fibre entries of the
// metric shrink like e^{-t}; computing them only from the small remainder
// keeps their rounding error relative instead of absolute.

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mkrf/kahler.hpp"
#include "mkrf/torus_field.hpp"

namespace mkrf::detail {

class FibreSplit {
 public:
  // Split for the class path, or nullopt when A_inf has no kernel or its
  // kernel is not spanned by coordinate axes.
  static std::optional<FibreSplit> for_path(const GridSpec& grid, const ClassPath& path);

  FibreSplit(const GridSpec& grid, int base_axis);  // base_axis -1: the base is a point

  const GridSpec& grid() const { return grid_; }
  int base_axis() const { return base_axis_; }
  std::size_t base_size() const { return base_size_; }
  std::size_t base_index(std::size_t p) const;

  // Mean over the fibre directions.
  void average(std::span<const double> full, std::span<double> base) const;
  // base + fibre, pointwise on the full grid.
  void combine(std::span<const double> base, std::span<const double> fibre, std::span<double> full) const;
  // full = broadcast(base) + fibre with mean-free fibre part.
  void split(std::span<const double> full, std::span<double> base, std::span<double> fibre) const;

  // The only non-zero Hessian entry of a base function is the base-base one.
  void base_hessian(std::span<const double> base, std::span<double> out) const;
  // Applies a base-grid Fourier multiplier built from the base Laplacian symbol.
  std::vector<double> base_symbol() const;
  void base_multiplier(std::span<const double> base, std::span<const double> multiplier,
                       std::span<double> out) const;

 private:
  GridSpec grid_;
  int base_axis_ = -1;
  std::size_t base_size_ = 1;
  std::shared_ptr<SpectralOps> base_ops_;
};

}  // namespace mkrf::detail
