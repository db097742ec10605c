#include "fibre_split.hpp"

#include <algorithm>
#include <cmath>

namespace mkrf::detail {

std::optional<FibreSplit> FibreSplit::for_path(const GridSpec& grid, const ClassPath& path) {
  if (path.regime != Regime::collapsed || path.r <= 0) return std::nullopt;
  const int n = grid.n;
  const double tol = 1e-12 * std::max(1.0, path.Ainf.cwiseAbs().maxCoeff());
  std::vector<int> fibre;
  for (int j = 0; j < n; ++j)
    if (path.Ainf.row(j).cwiseAbs().maxCoeff() <= tol) fibre.push_back(j);
  if (static_cast<int>(fibre.size()) != path.r) return std::nullopt;
  if (path.r == n) return FibreSplit(grid, -1);
  return FibreSplit(grid, fibre[0] == 0 ? 1 : 0);
}

FibreSplit::FibreSplit(const GridSpec& grid, int base_axis) : grid_(grid), base_axis_(base_axis) {
  if (base_axis_ >= 0) {
    const GridSpec base{1, grid_.N};
    base_size_ = base.size();
    base_ops_ = std::make_shared<SpectralOps>(base);
  }
}

std::size_t FibreSplit::base_index(std::size_t p) const {
  if (base_axis_ < 0) return 0;
  return base_axis_ == 0 ? p / base_size_ : p % base_size_;
}

void FibreSplit::average(std::span<const double> full, std::span<double> base) const {
  std::fill(base.begin(), base.end(), 0.0);
  for (std::size_t p = 0; p < full.size(); ++p) base[base_index(p)] += full[p];
  const double scale = static_cast<double>(base_size_) / static_cast<double>(full.size());
  for (double& b : base) b *= scale;
}

void FibreSplit::combine(std::span<const double> base, std::span<const double> fibre,
                         std::span<double> full) const {
  for (std::size_t p = 0; p < full.size(); ++p) full[p] = base[base_index(p)] + fibre[p];
}

void FibreSplit::split(std::span<const double> full, std::span<double> base, std::span<double> fibre) const {
  average(full, base);
  for (std::size_t p = 0; p < full.size(); ++p) fibre[p] = full[p] - base[base_index(p)];
}

void FibreSplit::base_hessian(std::span<const double> base, std::span<double> out) const {
  if (base_axis_ < 0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  HermitianField h(base_ops_->grid());
  base_ops_->hessian(base, h);
  std::copy(h.diag0().begin(), h.diag0().end(), out.begin());
}

std::vector<double> FibreSplit::base_symbol() const {
  if (base_axis_ < 0) return {0.0};
  return base_ops_->laplacian_symbol(Herm{1.0, 0.0, {}});
}

void FibreSplit::base_multiplier(std::span<const double> base, std::span<const double> multiplier,
                                 std::span<double> out) const {
  if (base_axis_ < 0) {
    out[0] = multiplier[0] * base[0];
    return;
  }
  base_ops_->apply_multiplier(base, multiplier, out);
}

}  // namespace mkrf::detail
