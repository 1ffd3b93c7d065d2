#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace metafunc {

/// Non-owning row-major view.
struct MatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const double> row(std::size_t i) const noexcept { return {data + i * cols, cols}; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }
};

/// Owning row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) noexcept { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }

  MatrixView view() const noexcept { return {data.data(), rows, cols}; }
  operator MatrixView() const noexcept { return view(); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace metafunc
