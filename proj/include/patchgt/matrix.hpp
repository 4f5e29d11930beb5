#pragma once

#include <cstddef>
#include <vector>

#include "patchgt/errors.hpp"

namespace patchgt {

// Dense row-major matrix of doubles for the plain (non-differentiated) linear
// algebra: Laplacians, eigenvectors, the bottleneck lab. The autodiff engine
// has its own Tensor type.
struct Mat {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& at(size_t i, size_t j) { return a[i * cols + j]; }
    double at(size_t i, size_t j) const { return a[i * cols + j]; }

    static Mat identity(size_t n) {
        Mat m(n, n);
        for (size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw ContractError("matmul: inner dimensions disagree");
    Mat z(x.rows, y.cols);
    for (size_t i = 0; i < x.rows; ++i)
        for (size_t k = 0; k < x.cols; ++k) {
            const double xv = x.at(i, k);
            if (xv == 0.0) continue;
            for (size_t j = 0; j < y.cols; ++j) z.at(i, j) += xv * y.at(k, j);
        }
    return z;
}

inline Mat transpose(const Mat& x) {
    Mat z(x.cols, x.rows);
    for (size_t i = 0; i < x.rows; ++i)
        for (size_t j = 0; j < x.cols; ++j) z.at(j, i) = x.at(i, j);
    return z;
}

inline double max_abs_diff(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols)
        throw ContractError("max_abs_diff: shapes disagree");
    double worst = 0.0;
    for (size_t i = 0; i < x.a.size(); ++i) {
        double d = x.a[i] - y.a[i];
        if (d < 0) d = -d;
        if (d > worst) worst = d;
    }
    return worst;
}

}  // namespace patchgt
