#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace opera {

// Plain row-major matrix of doubles. Used for data that never enters the
// gradient tape (synthetic features, backbone probabilities).
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
        if (values.size() != rows * cols) {
            throw std::invalid_argument("Matrix: " + std::to_string(values.size()) + " values for " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    const double* row(std::size_t r) const { return values.data() + r * cols; }
    double* row(std::size_t r) { return values.data() + r * cols; }

    // First `n` rows.
    Matrix top_rows(std::size_t n) const {
        if (n > rows) throw std::out_of_range("Matrix::top_rows: " + std::to_string(n) + " > " + std::to_string(rows));
        return Matrix(n, cols, std::vector<double>(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(n * cols)));
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

}  // namespace opera
