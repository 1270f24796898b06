#ifndef UGWT_LINALG_HPP
#define UGWT_LINALG_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt {

struct SymEigResult {
    std::vector<double> eigenvalues; // descending
    Matrix eigenvectors;             // column j pairs with eigenvalues[j]
    int sweeps = 0;
    double offdiag_residual = 0.0;
};

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: " + std::to_string(a.cols) + " != " + std::to_string(b.rows));
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        double* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

inline double frobenius_norm(const Matrix& a) {
    double s = 0.0;
    for (double x : a.v) s += x * x;
    return std::sqrt(s);
}

// Symmetric eigendecomposition by cyclic Jacobi rotations.
//
// Sweeps run until the largest off-diagonal magnitude falls to
// 1e-11 * ||s||_F or 100 sweeps elapse (the latter raises ConvergenceError).
// Rotations whose pivot is already far below the target are skipped; the
// sweep-end scan still sees every entry, so the termination criterion is
// evaluated on the true maximum.
inline SymEigResult sym_eig(const Matrix& s) {
    if (s.rows != s.cols) throw ShapeError("sym_eig: matrix not square");
    const int n = s.rows;

    double max_abs = 0.0, max_asym = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            max_abs = std::max(max_abs, std::abs(s(i, j)));
            if (j > i) max_asym = std::max(max_asym, std::abs(s(i, j) - s(j, i)));
        }
    if (max_asym > 1e-9 * std::max(1.0, max_abs))
        throw NumericError("sym_eig: input not symmetric (max asymmetry " +
                           std::to_string(max_asym) + ")");

    Matrix a = s;
    // enforce exact symmetry so row/column mirroring stays consistent
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double m = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = a(j, i) = m;
        }

    const double fnorm = frobenius_norm(a);
    const double tol = 1e-11 * fnorm;
    const double skip_tol = 0.5 * tol;

    // eigenvectors accumulated as rows of vt (contiguous rotations)
    Matrix vt = Matrix::identity(n);

    auto max_offdiag = [&]() {
        double m = 0.0;
        for (int i = 0; i < n; ++i) {
            const double* row = a.row(i);
            for (int j = i + 1; j < n; ++j) m = std::max(m, std::abs(row[j]));
        }
        return m;
    };

    int sweeps = 0;
    double off = max_offdiag();
    while (off > tol && sweeps < 100) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= skip_tol) continue;
                const double app = a(p, p), aqq = a(q, q);
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;

                double* rp = a.row(p);
                double* rq = a.row(q);
                for (int j = 0; j < n; ++j) {
                    const double x = rp[j], y = rq[j];
                    rp[j] = c * x - sn * y;
                    rq[j] = sn * x + c * y;
                }
                // exact updates for the 2x2 pivot block
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                // mirror the rotated rows into the columns
                for (int j = 0; j < n; ++j) {
                    if (j == p || j == q) continue;
                    a(j, p) = rp[j];
                    a(j, q) = rq[j];
                }

                double* vp = vt.row(p);
                double* vq = vt.row(q);
                for (int j = 0; j < n; ++j) {
                    const double x = vp[j], y = vq[j];
                    vp[j] = c * x - sn * y;
                    vq[j] = sn * x + c * y;
                }
            }
        }
        ++sweeps;
        off = max_offdiag();
    }
    if (off > tol)
        throw ConvergenceError("sym_eig: no convergence in 100 sweeps, residual " +
                               std::to_string(off));

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return a(i, i) > a(j, j); });

    SymEigResult res;
    res.eigenvalues.resize(n);
    res.eigenvectors = Matrix(n, n);
    for (int j = 0; j < n; ++j) {
        res.eigenvalues[j] = a(order[j], order[j]);
        const double* src = vt.row(order[j]);
        for (int i = 0; i < n; ++i) res.eigenvectors(i, j) = src[i];
    }
    res.sweeps = sweeps;
    res.offdiag_residual = off;
    return res;
}

} // namespace ugwt

#endif // UGWT_LINALG_HPP
