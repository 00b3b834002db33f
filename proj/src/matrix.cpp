#include "sot/matrix.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sot {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Matrix init: ragged rows");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diag(const Vector& d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Matrix Matrix::from_column(const Vector& v) {
    Matrix m(v.size(), 1);
    for (std::size_t i = 0; i < v.size(); ++i) m(i, 0) = v[i];
    return m;
}

Matrix Matrix::from_row(const Vector& v) {
    Matrix m(1, v.size());
    for (std::size_t j = 0; j < v.size(); ++j) m(0, j) = v[j];
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.cols();
    // i-k-j loop order; the k-sum for each entry still runs in ascending
    // order, so results are deterministic.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* crow = c.data() + i * c.cols();
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.data() + k * b.cols();
            for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
    return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("sub: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
    return c;
}

Matrix scale(const Matrix& a, double c) {
    Matrix r = a;
    for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] *= c;
    return r;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("hadamard: shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
    return c;
}

void add_in_place(Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("add_in_place: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

void axpy_in_place(Matrix& a, double c, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("axpy_in_place: shape mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += c * b.data()[i];
}

Vector matvec(const Matrix& a, const Vector& v) {
    if (a.cols() != v.size()) throw ShapeError("matvec: shape mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        const double* row = a.data() + i * a.cols();
        for (std::size_t j = 0; j < a.cols(); ++j) s += row[j] * v[j];
        y[i] = s;
    }
    return y;
}

Vector matvec_transposed(const Matrix& a, const Vector& v) {
    if (a.rows() != v.size()) throw ShapeError("matvec_transposed: shape mismatch");
    Vector y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double vi = v[i];
        if (vi == 0.0) continue;
        const double* row = a.data() + i * a.cols();
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += row[j] * vi;
    }
    return y;
}

Matrix outer(const Vector& u, const Vector& v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
    return m;
}

double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
    return std::sqrt(s);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i]));
    return m;
}

double dot(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw ShapeError("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

bool all_finite(const Matrix& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.data()[i])) return false;
    return true;
}

void ensure_finite(const Matrix& a, const char* context) {
    if (!all_finite(a)) throw NumericError(std::string(context) + ": non-finite entries");
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("dot: vector size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const Vector& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void axpy(Vector& y, double c, const Vector& x) {
    if (y.size() != x.size()) throw ShapeError("axpy: vector size mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}

Vector scaled(const Vector& v, double c) {
    Vector r = v;
    for (double& x : r) x *= c;
    return r;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string to_csv(const Matrix& a) {
    std::ostringstream out;
    out << a.rows() << "," << a.cols() << "\n";
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (j) out << ",";
            out << format_double(a(i, j));
        }
        out << "\n";
    }
    return out.str();
}

namespace {

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

} // namespace

Matrix matrix_from_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("matrix csv: missing header line");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_commas(line);
    if (header.size() != 2) throw ConfigError("matrix csv: header must be rows,cols");
    const long rows = std::stol(header[0]);
    const long cols = std::stol(header[1]);
    if (rows <= 0 || cols <= 0) throw ConfigError("matrix csv: rows and cols must be positive");
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (long i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw ConfigError("matrix csv: truncated data");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto fields = split_commas(line);
        if (fields.size() != static_cast<std::size_t>(cols))
            throw ConfigError("matrix csv: wrong field count on row " + std::to_string(i));
        for (long j = 0; j < cols; ++j) {
            std::size_t consumed = 0;
            const double v = std::stod(fields[static_cast<std::size_t>(j)], &consumed);
            if (consumed == 0) throw ConfigError("matrix csv: bad literal");
            m(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = v;
        }
    }
    return m;
}

Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open matrix file: " + path);
    return matrix_from_csv(in);
}

void write_matrix_csv(const Matrix& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write matrix file: " + path);
    out << to_csv(a);
}

} // namespace sot
