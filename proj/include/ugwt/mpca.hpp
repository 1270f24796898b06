#ifndef UGWT_MPCA_HPP
#define UGWT_MPCA_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "ugwt/common.hpp"
#include "ugwt/linalg.hpp"
#include "ugwt/tensor.hpp"

namespace ugwt {

// Mode-2 projection basis fitted on a joint source+target tensor.
// `basis` holds the retained column-orthonormal eigenvectors (i2 x p2); its
// transpose maps a centered mode-2 vector into the shared subspace.
struct ModeBasis {
    Matrix basis;
    std::vector<double> eigenvalues; // full archived spectrum, descending, clamped at 0
    std::vector<double> mean;        // centering offset, length i2 (zeros when uncentered)
    double retained_fraction = 1.0;
    double q_percent = 100.0;

    int i2() const { return basis.rows; }
    int p2() const { return basis.cols; }
};

struct JointFitResult {
    ModeBasis basis;
    Tensor3 projected_source;
    Tensor3 projected_target;
    int p2 = 0;
};

namespace detail {

// mode-2 vectors as rows (slice-major enumeration), optionally centered in place
inline Matrix mode2_rows(const Tensor3& t) {
    Matrix x(t.i1 * t.i3, t.i2);
    for (int k = 0; k < t.i3; ++k)
        for (int r = 0; r < t.i1; ++r)
            std::copy(t.row(r, k), t.row(r, k) + t.i2, x.row(k * t.i1 + r));
    return x;
}

inline std::vector<double> column_mean(const Matrix& x) {
    std::vector<double> m(x.cols, 0.0);
    for (int r = 0; r < x.rows; ++r) {
        const double* row = x.row(r);
        for (int c = 0; c < x.cols; ++c) m[c] += row[c];
    }
    for (double& v : m) v /= x.rows;
    return m;
}

inline void subtract_row(Matrix& x, const std::vector<double>& m) {
    for (int r = 0; r < x.rows; ++r) {
        double* row = x.row(r);
        for (int c = 0; c < x.cols; ++c) row[c] -= m[c];
    }
}

// upper-triangle accumulation of x^T x, mirrored to full symmetry
inline Matrix crossprod(const Matrix& x) {
    Matrix s(x.cols, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        const double* row = x.row(r);
        for (int c = 0; c < x.cols; ++c) {
            const double vc = row[c];
            if (vc == 0.0) continue;
            double* srow = s.row(c);
            for (int d = c; d < x.cols; ++d) srow[d] += vc * row[d];
        }
    }
    for (int c = 0; c < x.cols; ++c)
        for (int d = c + 1; d < x.cols; ++d) s(d, c) = s(c, d);
    return s;
}

// x x^T for row-stored vectors; entries are independent, so the row range is
// split across workers without any cross-thread reduction.
inline Matrix gram_of_rows(const Matrix& x) {
    const int n = x.rows;
    Matrix g(n, n);
    auto fill_rows = [&](int lo, int hi) {
        for (int a = lo; a < hi; ++a) {
            const double* ra = x.row(a);
            double* grow = g.row(a);
            for (int b = a; b < n; ++b) {
                const double* rb = x.row(b);
                double acc = 0.0;
                for (int c = 0; c < x.cols; ++c) acc += ra[c] * rb[c];
                grow[b] = acc;
            }
        }
    };
    const int workers = std::min(thread_budget(), 8);
    if (workers <= 1 || n < 64) {
        fill_rows(0, n);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (n + workers - 1) / workers;
        for (int w = 0; w < workers; ++w) {
            const int lo = w * chunk, hi = std::min(n, lo + chunk);
            if (lo < hi) pool.emplace_back(fill_rows, lo, hi);
        }
        for (auto& t : pool) t.join();
    }
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) g(b, a) = g(a, b);
    return g;
}

inline void fix_column_signs(Matrix& b) {
    for (int j = 0; j < b.cols; ++j) {
        int arg = 0;
        double best = -1.0;
        for (int i = 0; i < b.rows; ++i) {
            const double m = std::abs(b(i, j));
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        if (b(arg, j) < 0.0)
            for (int i = 0; i < b.rows; ++i) b(i, j) = -b(i, j);
    }
}

} // namespace detail

// Scatter of the mode-2 vectors: sum of (v - mean) (v - mean)^T, exactly
// symmetric by construction. center=false uses a zero mean.
inline Matrix mode2_scatter(const Tensor3& t, bool center = true) {
    Matrix x = detail::mode2_rows(t);
    if (center) {
        const std::vector<double> m = detail::column_mean(x);
        detail::subtract_row(x, m);
    }
    return detail::crossprod(x);
}

// Minimal leading count whose cumulative eigenvalue mass reaches q_percent.
// q = 100 keeps every numerically nonzero eigenvalue; zero total variance
// degenerates to a single component.
inline int select_components(const std::vector<double>& eigenvalues, double q_percent) {
    if (!(q_percent > 0.0 && q_percent <= 100.0))
        throw ConfigError("select_components: q_percent must be in (0, 100]");
    const int n = static_cast<int>(eigenvalues.size());
    if (n == 0) throw ShapeError("select_components: empty spectrum");
    double total = 0.0, lmax = 0.0;
    for (double l : eigenvalues) {
        total += l;
        lmax = std::max(lmax, l);
    }
    if (total <= 0.0) return 1;
    if (q_percent == 100.0) {
        int cnt = 0;
        for (double l : eigenvalues)
            if (l > 1e-12 * lmax) ++cnt;
        return std::max(cnt, 1);
    }
    const double want = q_percent / 100.0;
    double cum = 0.0;
    for (int i = 0; i < n; ++i) {
        cum += eigenvalues[i];
        if (cum / total >= want) return i + 1;
    }
    return n;
}

// Applies w = B^T (v - mean) to every mode-2 vector.
inline Tensor3 project(const Tensor3& t, const ModeBasis& basis) {
    if (t.i2 != basis.i2())
        throw ShapeError("project: tensor mode-2 length " + std::to_string(t.i2) +
                         " != basis rows " + std::to_string(basis.i2()));
    const Matrix bt = transpose(basis.basis);
    Tensor3 out(t.i1, basis.p2(), t.i3);
    std::vector<double> tmp(t.i2);
    for (int k = 0; k < t.i3; ++k)
        for (int r = 0; r < t.i1; ++r) {
            const double* src = t.row(r, k);
            for (int c = 0; c < t.i2; ++c) tmp[c] = src[c] - basis.mean[c];
            double* dst = out.row(r, k);
            for (int p = 0; p < bt.rows; ++p) {
                const double* brow = bt.row(p);
                double acc = 0.0;
                for (int c = 0; c < t.i2; ++c) acc += brow[c] * tmp[c];
                dst[p] = acc;
            }
        }
    return out;
}

// Inverse map v = B w + mean; identity on the retained subspace.
inline Tensor3 reconstruct(const Tensor3& p, const ModeBasis& basis) {
    if (p.i2 != basis.p2())
        throw ShapeError("reconstruct: tensor mode-2 length " + std::to_string(p.i2) +
                         " != retained components " + std::to_string(basis.p2()));
    const Matrix bt = transpose(basis.basis); // p2 x i2, rows contiguous
    Tensor3 out(p.i1, basis.i2(), p.i3);
    for (int k = 0; k < p.i3; ++k)
        for (int r = 0; r < p.i1; ++r) {
            const double* w = p.row(r, k);
            double* dst = out.row(r, k);
            std::copy(basis.mean.begin(), basis.mean.end(), dst);
            for (int j = 0; j < bt.rows; ++j) {
                const double wj = w[j];
                if (wj == 0.0) continue;
                const double* brow = bt.row(j);
                for (int c = 0; c < basis.i2(); ++c) dst[c] += wj * brow[c];
            }
        }
    return out;
}

// Joint fit: concatenate source and target along mode 3 (source slices first),
// center, eigensolve the mode-2 scatter, keep the leading components per the
// q_percent rule, and project both domains.
//
// When the joint vector count is below i2 the eigenproblem is solved on the
// Gram matrix of the centered vectors and eigenvectors are lifted back, which
// has the same nonzero spectrum at a fraction of the cost. Lifted columns are
// re-orthonormalized (modified Gram-Schmidt) before use. Eigenvector signs are
// fixed so the largest-magnitude entry of each column is positive, making the
// fit bit-reproducible.
inline JointFitResult fit_joint(const Tensor3& source, const Tensor3& target, double q_percent,
                                bool center = true) {
    if (source.i1 != target.i1 || source.i2 != target.i2)
        throw ShapeError("fit_joint: domain dims differ (" + std::to_string(source.i1) + "x" +
                         std::to_string(source.i2) + " vs " + std::to_string(target.i1) + "x" +
                         std::to_string(target.i2) + ")");
    const int i2 = source.i2;
    const int n_vec = source.i1 * (source.i3 + target.i3);

    // centered mode-2 vectors of the joint tensor, source slices first
    Matrix x(n_vec, i2);
    {
        int row = 0;
        for (int k = 0; k < source.i3; ++k)
            for (int r = 0; r < source.i1; ++r)
                std::copy(source.row(r, k), source.row(r, k) + i2, x.row(row++));
        for (int k = 0; k < target.i3; ++k)
            for (int r = 0; r < target.i1; ++r)
                std::copy(target.row(r, k), target.row(r, k) + i2, x.row(row++));
    }
    std::vector<double> mean(i2, 0.0);
    if (center) mean = detail::column_mean(x);
    detail::subtract_row(x, mean);

    ModeBasis mb;
    mb.mean = mean;
    mb.q_percent = q_percent;

    if (n_vec >= i2) {
        const SymEigResult eig = sym_eig(detail::crossprod(x));
        mb.eigenvalues = eig.eigenvalues;
        for (double& l : mb.eigenvalues) l = std::max(l, 0.0);
        const int p2 = select_components(mb.eigenvalues, q_percent);
        mb.basis = Matrix(i2, p2);
        for (int j = 0; j < p2; ++j)
            for (int i = 0; i < i2; ++i) mb.basis(i, j) = eig.eigenvectors(i, j);
    } else {
        const SymEigResult eig = sym_eig(detail::gram_of_rows(x));
        mb.eigenvalues = eig.eigenvalues;
        for (double& l : mb.eigenvalues) l = std::max(l, 0.0);
        const int p2 = select_components(mb.eigenvalues, q_percent);
        // lift: u_j = x^T w_j / sqrt(lambda_j), assembled row-wise
        Matrix bt(p2, i2);
        for (int r = 0; r < n_vec; ++r) {
            const double* xrow = x.row(r);
            for (int j = 0; j < p2; ++j) {
                const double lj = mb.eigenvalues[j];
                const double coef = lj > 0.0 ? eig.eigenvectors(r, j) / std::sqrt(lj) : 0.0;
                if (coef == 0.0) continue;
                double* brow = bt.row(j);
                for (int c = 0; c < i2; ++c) brow[c] += coef * xrow[c];
            }
        }
        // modified Gram-Schmidt pass to absorb lifting roundoff
        for (int j = 0; j < p2; ++j) {
            double* bj = bt.row(j);
            for (int k = 0; k < j; ++k) {
                const double* bk = bt.row(k);
                double dot = 0.0;
                for (int c = 0; c < i2; ++c) dot += bj[c] * bk[c];
                for (int c = 0; c < i2; ++c) bj[c] -= dot * bk[c];
            }
            double nrm = 0.0;
            for (int c = 0; c < i2; ++c) nrm += bj[c] * bj[c];
            nrm = std::sqrt(nrm);
            if (!(nrm > 0.0))
                throw NumericError("fit_joint: degenerate lifted eigenvector " +
                                   std::to_string(j));
            for (int c = 0; c < i2; ++c) bj[c] /= nrm;
        }
        mb.basis = transpose(bt);
    }

    detail::fix_column_signs(mb.basis);

    double total = 0.0, kept = 0.0;
    for (std::size_t i = 0; i < mb.eigenvalues.size(); ++i) {
        total += mb.eigenvalues[i];
        if (static_cast<int>(i) < mb.basis.cols) kept += mb.eigenvalues[i];
    }
    mb.retained_fraction = total > 0.0 ? kept / total : 1.0;

    JointFitResult res;
    res.p2 = mb.basis.cols;
    res.projected_source = project(source, mb);
    res.projected_target = project(target, mb);
    res.basis = std::move(mb);
    return res;
}

} // namespace ugwt

#endif // UGWT_MPCA_HPP
