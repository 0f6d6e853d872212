#include "ptstab/tridiag.hpp"

#include <cmath>

namespace ptstab {

namespace {
void check_pivot(double p, const char* where) {
    if (!(std::abs(p) > 1e-300) || !std::isfinite(p))
        throw numeric_error(std::string("singular tridiagonal system in ") + where);
}
} // namespace

void solve_tridiagonal(std::span<const double> a, std::span<const double> b,
                       std::span<const double> c, std::span<double> d) {
    const std::size_t n = b.size();
    if (a.size() != n || c.size() != n || d.size() != n)
        throw validation_error("solve_tridiagonal: size mismatch");
    if (n == 0) return;
    std::vector<double> bt(b.begin(), b.end());
    check_pivot(bt[0], "solve_tridiagonal");
    for (std::size_t i = 1; i < n; ++i) {
        double m = a[i] / bt[i - 1];
        bt[i] -= m * c[i - 1];
        d[i] -= m * d[i - 1];
        check_pivot(bt[i], "solve_tridiagonal");
    }
    d[n - 1] /= bt[n - 1];
    for (std::size_t i = n - 1; i-- > 0;)
        d[i] = (d[i] - c[i] * d[i + 1]) / bt[i];
}

void solve_tridiagonal_dense_last_row(std::span<const double> a, std::span<const double> b,
                                      std::span<const double> c, std::span<const double> last_row,
                                      std::span<double> rhs) {
    const std::size_t n = rhs.size();
    if (b.size() != n - 1 || a.size() != n - 1 || c.size() != n - 1 || last_row.size() != n)
        throw validation_error("solve_tridiagonal_dense_last_row: size mismatch");
    std::vector<double> bt(b.begin(), b.end());
    std::vector<double> L(last_row.begin(), last_row.end());
    // forward elimination of rows 0..n-2, folding the dense row along
    check_pivot(bt[0], "dense_last_row");
    for (std::size_t i = 1; i < n - 1; ++i) {
        double m = a[i] / bt[i - 1];
        bt[i] -= m * c[i - 1];
        rhs[i] -= m * rhs[i - 1];
        check_pivot(bt[i], "dense_last_row");
    }
    double dr = rhs[n - 1];
    for (std::size_t i = 0; i < n - 1; ++i) {
        double f = L[i] / bt[i];
        L[i + 1] -= f * c[i];
        dr -= f * rhs[i];
    }
    check_pivot(L[n - 1], "dense_last_row");
    rhs[n - 1] = dr / L[n - 1];
    for (std::size_t i = n - 1; i-- > 0;)
        rhs[i] = (rhs[i] - c[i] * rhs[i + 1]) / bt[i];
}

} // namespace ptstab
