#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

#include "sot/errors.hpp"

namespace sot {

using Vector = std::vector<double>;

/// Dense real matrix, row-major, double precision. The universal carrier for
/// token batches, cross-covariances, and gradients.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix diag(const Vector& d);
    static Matrix from_column(const Vector& v);
    static Matrix from_row(const Vector& v);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// -- products and elementwise algebra ---------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
Matrix hadamard(const Matrix& a, const Matrix& b);
void add_in_place(Matrix& a, const Matrix& b);
void axpy_in_place(Matrix& a, double c, const Matrix& b); // a += c*b

// a * v and a^T * v for column vectors.
Vector matvec(const Matrix& a, const Vector& v);
Vector matvec_transposed(const Matrix& a, const Vector& v);

// Rank-1 product u * v^T.
Matrix outer(const Vector& u, const Vector& v);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double dot(const Matrix& a, const Matrix& b); // <A, B>_F
bool all_finite(const Matrix& a);
void ensure_finite(const Matrix& a, const char* context);

// -- vector helpers ----------------------------------------------------------

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);
void axpy(Vector& y, double c, const Vector& x); // y += c*x
Vector scaled(const Vector& v, double c);

// -- CSV interchange ---------------------------------------------------------
// First line "rows,cols", then `rows` lines of `cols` comma-separated decimal
// literals. Values are written with 17 significant digits so a write/read
// round trip is bit exact.

std::string to_csv(const Matrix& a);
Matrix matrix_from_csv(std::istream& in);
Matrix read_matrix_csv(const std::string& path);
void write_matrix_csv(const Matrix& a, const std::string& path);

std::string format_double(double v); // 17 significant digits

} // namespace sot
