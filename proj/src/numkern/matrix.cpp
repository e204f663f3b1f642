// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/numkern/matrix.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace avloc::nk {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Matrix& m) { return MapC(m.data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())); }
Map view(Matrix& m) { return Map(m.data(), Eigen::Index(m.rows()), Eigen::Index(m.cols())); }

}  // namespace

void require_shape(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    require_shape(data_.size() == rows_ * cols_, "Matrix: data length != rows*cols");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        require_shape(r.size() == cols_, "Matrix: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Matrix::sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
}

double Matrix::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
}

double Matrix::frobenius_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
}

Matrix& Matrix::operator+=(const Matrix& o) {
    require_shape(same_shape(o), "Matrix +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
    require_shape(same_shape(o), "Matrix -=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

std::string Matrix::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    matmul_acc(a, b, out);
    return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.rows());
    matmul_nt_acc(a, b, out);
    return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    matmul_tn_acc(a, b, out);
    return out;
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    require_shape(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols(),
                  "matmul: shape mismatch");
    if (a.empty() || b.empty()) return;
    view(out).noalias() += view(a) * view(b);
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    require_shape(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows(),
                  "matmul_nt: shape mismatch");
    if (a.empty() || b.empty()) return;
    view(out).noalias() += view(a) * view(b).transpose();
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    require_shape(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols(),
                  "matmul_tn: shape mismatch");
    if (a.empty() || b.empty()) return;
    view(out).noalias() += view(a).transpose() * view(b);
}

}  // namespace avloc::nk
