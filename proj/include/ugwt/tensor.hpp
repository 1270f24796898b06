#ifndef UGWT_TENSOR_HPP
#define UGWT_TENSOR_HPP

#include <cmath>
#include <string>
#include <vector>

#include "ugwt/common.hpp"

namespace ugwt {

// Dense row-major matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {
        if (r < 1 || c < 1) throw ShapeError("Matrix dims must be >= 1");
    }

    double& operator()(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }

    const double* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }
    double* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    friend bool operator==(const Matrix& a, const Matrix& b) {
        return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
    }
};

// Third-order tensor (rows i1, columns i2, slices i3).
// Storage is slice-major, then row, then column: index((r,c,k)) = (k*i1 + r)*i2 + c.
// Slices are therefore contiguous i1 x i2 row-major blocks.
struct Tensor3 {
    int i1 = 0;
    int i2 = 0;
    int i3 = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int r, int c, int k)
        : i1(r), i2(c), i3(k), v(static_cast<std::size_t>(r) * c * k, 0.0) {
        if (r < 1 || c < 1 || k < 1) throw ShapeError("Tensor3 dims must be >= 1");
    }

    std::size_t index(int r, int c, int k) const {
        return (static_cast<std::size_t>(k) * i1 + r) * i2 + c;
    }
    double& operator()(int r, int c, int k) { return v[index(r, c, k)]; }
    double operator()(int r, int c, int k) const { return v[index(r, c, k)]; }

    // contiguous row (r, ., k)
    const double* row(int r, int k) const { return v.data() + index(r, 0, k); }
    double* row(int r, int k) { return v.data() + index(r, 0, k); }

    std::size_t size() const { return v.size(); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    friend bool operator==(const Tensor3& a, const Tensor3& b) {
        return a.i1 == b.i1 && a.i2 == b.i2 && a.i3 == b.i3 && a.v == b.v;
    }
};

// Mode-2 unfolding: i2 x (i1*i3) matrix whose column q = k*i1 + r is the
// mode-2 vector at (row r, slice k). The slice-major column order keeps the
// leading slices' (e.g. a source domain's) columns contiguous.
inline Matrix unfold_mode2(const Tensor3& t) {
    Matrix m(t.i2, t.i1 * t.i3);
    for (int k = 0; k < t.i3; ++k)
        for (int r = 0; r < t.i1; ++r) {
            const int q = k * t.i1 + r;
            const double* src = t.row(r, k);
            for (int c = 0; c < t.i2; ++c) m(c, q) = src[c];
        }
    return m;
}

// Inverse of unfold_mode2 under the same column enumeration.
inline Tensor3 fold_mode2(const Matrix& m, int i1, int i2, int i3) {
    if (m.rows != i2 || m.cols != i1 * i3)
        throw ShapeError("fold_mode2: matrix is " + std::to_string(m.rows) + "x" +
                         std::to_string(m.cols) + ", expected " + std::to_string(i2) + "x" +
                         std::to_string(i1 * i3));
    Tensor3 t(i1, i2, i3);
    for (int k = 0; k < i3; ++k)
        for (int r = 0; r < i1; ++r) {
            const int q = k * i1 + r;
            double* dst = t.row(r, k);
            for (int c = 0; c < i2; ++c) dst[c] = m(c, q);
        }
    return t;
}

// Replace every mode-2 vector v (length i2) by b_transpose * v.
inline Tensor3 mode2_product(const Tensor3& t, const Matrix& b_transpose) {
    if (b_transpose.cols != t.i2)
        throw ShapeError("mode2_product: basis has " + std::to_string(b_transpose.cols) +
                         " columns, tensor mode-2 length is " + std::to_string(t.i2));
    Tensor3 out(t.i1, b_transpose.rows, t.i3);
    for (int k = 0; k < t.i3; ++k)
        for (int r = 0; r < t.i1; ++r) {
            const double* src = t.row(r, k);
            double* dst = out.row(r, k);
            for (int p = 0; p < b_transpose.rows; ++p) {
                const double* brow = b_transpose.row(p);
                double acc = 0.0;
                for (int c = 0; c < t.i2; ++c) acc += brow[c] * src[c];
                dst[p] = acc;
            }
        }
    return out;
}

inline Matrix slice(const Tensor3& t, int k) {
    if (k < 0 || k >= t.i3)
        throw ShapeError("slice: index " + std::to_string(k) + " out of range [0," +
                         std::to_string(t.i3) + ")");
    Matrix m(t.i1, t.i2);
    const double* src = t.v.data() + t.index(0, 0, k);
    std::copy(src, src + static_cast<std::size_t>(t.i1) * t.i2, m.v.begin());
    return m;
}

// Concatenate equally-sized matrices along mode 3, preserving order.
inline Tensor3 stack(const std::vector<Matrix>& slices) {
    if (slices.empty()) throw ShapeError("stack: no slices");
    const int r = slices.front().rows, c = slices.front().cols;
    for (const Matrix& m : slices)
        if (m.rows != r || m.cols != c) throw ShapeError("stack: heterogeneous slice dims");
    Tensor3 t(r, c, static_cast<int>(slices.size()));
    for (int k = 0; k < t.i3; ++k)
        std::copy(slices[k].v.begin(), slices[k].v.end(),
                  t.v.begin() + t.index(0, 0, k));
    return t;
}

} // namespace ugwt

#endif // UGWT_TENSOR_HPP
