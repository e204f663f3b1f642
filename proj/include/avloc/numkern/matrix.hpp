// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace avloc::nk {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix(rows, cols); }
    static Matrix ones(std::size_t rows, std::size_t cols) { return Matrix(rows, cols, 1.0); }
    static Matrix identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }
    bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    const std::vector<double>& values() const noexcept { return data_; }

    void fill(double v);
    void set_zero() { fill(0.0); }

    Matrix transposed() const;
    bool all_finite() const;
    double sum() const;
    double max_abs() const;
    double frobenius_norm() const;

    Matrix& operator+=(const Matrix& o);
    Matrix& operator-=(const Matrix& o);
    Matrix& operator*=(double s);

    bool operator==(const Matrix& o) const = default;

    std::string shape_string() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// a * b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// Accumulating variants: out += a * b (and transposed forms).
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

void require_shape(bool ok, const char* what);

}  // namespace avloc::nk
