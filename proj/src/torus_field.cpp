#include "mkrf/torus_field.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

#include "mkrf/error.hpp"
#include "parallel.hpp"

namespace mkrf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// FFTW's planner is not reentrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// GridSpec / fields

std::size_t GridSpec::size() const {
  std::size_t s = 1;
  for (int a = 0; a < axes(); ++a) s *= static_cast<std::size_t>(N);
  return s;
}

void GridSpec::validate() const {
  if (n != 1 && n != 2)
    throw Error(ErrorCode::invalid_input, "grid: complex dimension n must be 1 or 2");
  if (N < 8 || N % 2 != 0)
    throw Error(ErrorCode::invalid_input, "grid: N must be even and at least 8");
}

ScalarField::ScalarField(const GridSpec& grid, double value)
    : grid_(grid), values_(grid.size(), value) {}

ScalarField::ScalarField(const GridSpec& grid, std::vector<double> values)
    : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size())
    throw Error(ErrorCode::dimension_mismatch, "field: value count does not match grid");
}

double ScalarField::min() const { return values_[argmin()]; }
double ScalarField::max() const { return values_[argmax()]; }

std::size_t ScalarField::argmin() const {
  return static_cast<std::size_t>(std::min_element(values_.begin(), values_.end()) -
                                  values_.begin());
}

std::size_t ScalarField::argmax() const {
  return static_cast<std::size_t>(std::max_element(values_.begin(), values_.end()) -
                                  values_.begin());
}

bool ScalarField::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

HermitianField::HermitianField(const GridSpec& grid) : grid_(grid), a_(grid.size(), 0.0) {
  if (grid.n == 2) {
    d_.assign(grid.size(), 0.0);
    b_.assign(grid.size(), cplx{});
  }
}

cplx HermitianField::entry(std::size_t p, int j, int k) const {
  if (j == 0 && k == 0) return a_[p];
  if (j == 1 && k == 1) return d_[p];
  if (j == 0 && k == 1) return b_[p];
  return std::conj(b_[p]);
}

double coordinate(const GridSpec& grid, std::size_t p, int axis) {
  std::size_t stride = 1;
  for (int a = grid.axes() - 1; a > axis; --a) stride *= static_cast<std::size_t>(grid.N);
  const auto i = (p / stride) % static_cast<std::size_t>(grid.N);
  return static_cast<double>(i) / grid.N;
}

ScalarField trig_field(const GridSpec& grid, std::span<const Mode> modes) {
  ScalarField f(grid);
  const int axes = grid.axes();
  const auto N = static_cast<std::size_t>(grid.N);
  std::vector<std::size_t> idx(static_cast<std::size_t>(axes), 0);
  for (std::size_t p = 0; p < f.size(); ++p) {
    std::size_t rem = p;
    for (int a = axes - 1; a >= 0; --a) {
      idx[static_cast<std::size_t>(a)] = rem % N;
      rem /= N;
    }
    double v = 0.0;
    for (const auto& m : modes) {
      // Integer phase accumulation keeps the argument exact modulo N.
      long long acc = 0;
      for (int a = 0; a < axes; ++a)
        acc += static_cast<long long>(m.k[static_cast<std::size_t>(a)]) *
               static_cast<long long>(idx[static_cast<std::size_t>(a)]);
      acc %= static_cast<long long>(N);
      v += m.amplitude * std::cos(kTwoPi * static_cast<double>(acc) / grid.N + m.phase);
    }
    f[p] = v;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Spectral operators

struct SpectralOps::Plans {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_complex* work = nullptr;
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;

  ~Plans() {
    std::lock_guard lock(planner_mutex());
    if (r2c) fftw_destroy_plan(r2c);
    if (c2r) fftw_destroy_plan(c2r);
    fftw_free(real);
    fftw_free(spec);
    fftw_free(work);
  }
};

SpectralOps::SpectralOps(const GridSpec& grid) : grid_(grid), plans_(std::make_unique<Plans>()) {
  grid_.validate();
  const int axes = grid_.axes();
  const int N = grid_.N;
  const int half = N / 2 + 1;
  spectrum_size_ = grid_.size() / static_cast<std::size_t>(N) * static_cast<std::size_t>(half);

  std::vector<int> dims(static_cast<std::size_t>(axes), N);
  {
    std::lock_guard lock(planner_mutex());
    plans_->real = fftw_alloc_real(grid_.size());
    plans_->spec = fftw_alloc_complex(spectrum_size_);
    plans_->work = fftw_alloc_complex(spectrum_size_);
    plans_->r2c = fftw_plan_dft_r2c(axes, dims.data(), plans_->real, plans_->spec, FFTW_ESTIMATE);
    plans_->c2r = fftw_plan_dft_c2r(axes, dims.data(), plans_->work, plans_->real, FFTW_ESTIMATE);
  }
  if (!plans_->r2c || !plans_->c2r) throw Error(ErrorCode::invalid_input, "fft: planning failed");

  // Wavenumbers 2 pi m, m in {-N/2, ..., N/2 - 1}. `odd` variants vanish on
  // the Nyquist index so odd derivatives of real data stay real.
  auto wavenumber = [N](int i, bool last_axis) {
    const int m = (last_axis || i < N / 2) ? i : i - N;
    return kTwoPi * m;
  };
  auto is_nyquist = [N](int i) { return i == N / 2; };

  s11_.resize(spectrum_size_);
  if (grid_.n == 2) {
    s22_.resize(spectrum_size_);
    s12re_.resize(spectrum_size_);
    s12im_.resize(spectrum_size_);
  }
  std::vector<int> idx(static_cast<std::size_t>(axes), 0);
  std::vector<double> k(static_cast<std::size_t>(axes)), kodd(static_cast<std::size_t>(axes));
  for (std::size_t q = 0; q < spectrum_size_; ++q) {
    std::size_t rem = q;
    for (int a = axes - 1; a >= 0; --a) {
      const int extent = (a == axes - 1) ? half : N;
      idx[static_cast<std::size_t>(a)] = static_cast<int>(rem % static_cast<std::size_t>(extent));
      rem /= static_cast<std::size_t>(extent);
    }
    for (int a = 0; a < axes; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      k[ua] = wavenumber(idx[ua], a == axes - 1);
      kodd[ua] = is_nyquist(idx[ua]) ? 0.0 : k[ua];
    }
    // H_{jk} = 1/4 [f_{x_j x_k} + f_{y_j y_k} + i (f_{x_j y_k} - f_{y_j x_k})]
    s11_[q] = -0.25 * (k[0] * k[0] + k[1] * k[1]);
    if (grid_.n == 2) {
      s22_[q] = -0.25 * (k[2] * k[2] + k[3] * k[3]);
      s12re_[q] = -0.25 * (kodd[0] * kodd[2] + kodd[1] * kodd[3]);
      s12im_[q] = -0.25 * (kodd[0] * kodd[3] - kodd[1] * kodd[2]);
    }
  }
}

SpectralOps::~SpectralOps() = default;

void SpectralOps::forward(std::span<const double> f) {
  if (f.size() != grid_.size())
    throw Error(ErrorCode::dimension_mismatch, "spectral: field size does not match grid");
  std::copy(f.begin(), f.end(), plans_->real);
  fftw_execute(plans_->r2c);
}

void SpectralOps::inverse_scaled(std::span<const double> symbol, std::span<double> out) {
  const double scale = 1.0 / static_cast<double>(grid_.size());
  fftw_complex* spec = plans_->spec;
  fftw_complex* work = plans_->work;
  const std::size_t m = spectrum_size_;
  MKRF_PARALLEL_FOR(m)
  for (std::size_t q = 0; q < m; ++q) {
    const double s = symbol[q] * scale;
    work[q][0] = spec[q][0] * s;
    work[q][1] = spec[q][1] * s;
  }
  fftw_execute(plans_->c2r);
  std::copy(plans_->real, plans_->real + grid_.size(), out.begin());
}

void SpectralOps::hessian(std::span<const double> f, HermitianField& out) {
  if (!(out.grid() == grid_)) out = HermitianField(grid_);
  for (double v : f)
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_input, "hessian: non-finite input");
  forward(f);
  inverse_scaled(s11_, out.diag0());
  if (grid_.n == 2) {
    inverse_scaled(s22_, out.diag1());
    re_.resize(grid_.size());
    im_.resize(grid_.size());
    inverse_scaled(s12re_, re_);
    inverse_scaled(s12im_, im_);
    auto b = out.offdiag();
    for (std::size_t p = 0; p < grid_.size(); ++p) b[p] = cplx(re_[p], im_[p]);
  }
}

HermitianField SpectralOps::hessian(const ScalarField& f) {
  HermitianField out(grid_);
  hessian(f.values(), out);
  return out;
}

std::vector<double> SpectralOps::laplacian_symbol(const Herm& B) const {
  std::vector<double> sym(spectrum_size_);
  for (std::size_t q = 0; q < spectrum_size_; ++q) {
    double s = B.a * s11_[q];
    if (grid_.n == 2) {
      // tr(B S) = B11 S11 + B22 S22 + 2 Re(B21 S12), B21 = conj(B12).
      const cplx s12(s12re_[q], s12im_[q]);
      s += B.d * s22_[q] + 2.0 * (B.b.real() * s12.real() + B.b.imag() * s12.imag());
    }
    sym[q] = s;
  }
  return sym;
}

void SpectralOps::apply_multiplier(std::span<const double> f, std::span<const double> multiplier,
                                   std::span<double> out) {
  if (multiplier.size() != spectrum_size_ || out.size() != grid_.size())
    throw Error(ErrorCode::dimension_mismatch, "spectral: multiplier or output size mismatch");
  forward(f);
  inverse_scaled(multiplier, out);
}

HermitianField complex_hessian(const ScalarField& f) {
  SpectralOps ops(f.grid());
  return ops.hessian(f);
}

double mean(std::span<const double> values) {
  // Pairwise summation keeps the rounding error at O(log n) ulps.
  if (values.empty()) return 0.0;
  auto sum = [](auto&& self, std::span<const double> v) -> double {
    if (v.size() <= 64) {
      double s = 0.0;
      for (double x : v) s += x;
      return s;
    }
    const auto h = v.size() / 2;
    return self(self, v.first(h)) + self(self, v.subspan(h));
  };
  return sum(sum, values) / static_cast<double>(values.size());
}

double mean(const ScalarField& f) { return mean(f.values()); }

// ---------------------------------------------------------------------------
// Snapshot files: "MKRF" u16 version u16 n u32 N u32 count, then per field
// u16 name length, UTF-8 name, N^{2n} little-endian f64.

namespace {

constexpr std::uint16_t kSnapshotVersion = 1;

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get_le(std::istream& is, ErrorCode on_short, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw Error(on_short, std::string("snapshot: truncated ") + what);
  std::make_unsigned_t<T> u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::make_unsigned_t<T>>(bytes[i]) << (8 * i);
  return static_cast<T>(u);
}

}  // namespace

void write_snapshot(const std::filesystem::path& path, std::span<const NamedField> fields) {
  if (fields.empty()) throw Error(ErrorCode::invalid_input, "snapshot: no fields to write");
  const GridSpec grid = fields.front().field.grid();
  for (const auto& nf : fields) {
    if (!(nf.field.grid() == grid))
      throw Error(ErrorCode::dimension_mismatch, "snapshot: fields live on different grids");
    if (nf.name.size() > 0xFFFF) throw Error(ErrorCode::invalid_input, "snapshot: name too long");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::io, "snapshot: cannot open " + path.string() + " for writing");
  os.write("MKRF", 4);
  put_le<std::uint16_t>(os, kSnapshotVersion);
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(grid.n));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(grid.N));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(fields.size()));
  for (const auto& nf : fields) {
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(nf.name.size()));
    os.write(nf.name.data(), static_cast<std::streamsize>(nf.name.size()));
    for (double v : nf.field.values()) put_f64(os, v);
  }
  if (!os) throw Error(ErrorCode::io, "snapshot: write failed for " + path.string());
}

std::vector<NamedField> read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::io, "snapshot: cannot open " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw Error(ErrorCode::header, "snapshot: truncated header");
  if (std::memcmp(magic, "MKRF", 4) != 0) throw Error(ErrorCode::format, "snapshot: bad magic");
  const auto version = get_le<std::uint16_t>(is, ErrorCode::header, "header");
  if (version != kSnapshotVersion)
    throw Error(ErrorCode::format, "snapshot: unsupported version " + std::to_string(version));
  GridSpec grid;
  grid.n = get_le<std::uint16_t>(is, ErrorCode::header, "header");
  grid.N = static_cast<int>(get_le<std::uint32_t>(is, ErrorCode::header, "header"));
  const auto count = get_le<std::uint32_t>(is, ErrorCode::header, "header");
  try {
    grid.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::dimension_mismatch, std::string("snapshot: ") + e.what());
  }
  std::vector<NamedField> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint16_t>(is, ErrorCode::header, "field header");
    std::string name(len, '\0');
    if (len && !is.read(name.data(), len))
      throw Error(ErrorCode::header, "snapshot: truncated field name");
    std::vector<double> values(grid.size());
    for (auto& v : values)
      v = std::bit_cast<double>(get_le<std::uint64_t>(is, ErrorCode::dimension_mismatch, "field data"));
    out.push_back({std::move(name), ScalarField(grid, std::move(values))});
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw Error(ErrorCode::dimension_mismatch, "snapshot: trailing bytes after last field");
  return out;
}

}  // namespace mkrf
