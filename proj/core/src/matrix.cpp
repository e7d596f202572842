#include "ptq/matrix.hpp"

#include "ptq/errors.hpp"
#include "ptq/threading.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ptq {

Matrix::Matrix(size_t rows, size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(size_t rows, size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                    " does not match " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }
}

Matrix Matrix::identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) {
        m.at(i, i) = 1.0f;
    }
    return m;
}

namespace {

void check_matmul_shapes(size_t ak, size_t bk, const char * what) {
    if (ak != bk) {
        throw std::invalid_argument(std::string(what) + ": inner dimensions " +
                                    std::to_string(ak) + " and " + std::to_string(bk) +
                                    " do not match");
    }
}

} // namespace

Matrix matmul(const Matrix & a, const Matrix & b) {
    check_matmul_shapes(a.cols(), b.rows(), "matmul");
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix out(m, n);
    parallel_for(m, [&](size_t r0, size_t r1) {
        std::vector<double> acc(n);
        for (size_t i = r0; i < r1; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float * arow = a.row(i);
            for (size_t p = 0; p < k; ++p) {
                const double av   = arow[p];
                const float * brow = b.row(p);
                for (size_t j = 0; j < n; ++j) {
                    acc[j] += av * static_cast<double>(brow[j]);
                }
            }
            float * orow = out.row(i);
            for (size_t j = 0; j < n; ++j) {
                orow[j] = static_cast<float>(acc[j]);
            }
        }
    });
    return out;
}

Matrix matmul_nt(const Matrix & a, const Matrix & b) {
    check_matmul_shapes(a.cols(), b.cols(), "matmul_nt");
    const size_t m = a.rows(), k = a.cols(), n = b.rows();
    Matrix out(m, n);
    parallel_for(m, [&](size_t r0, size_t r1) {
        for (size_t i = r0; i < r1; ++i) {
            const float * arow = a.row(i);
            float * orow       = out.row(i);
            size_t j = 0;
            // four independent rows of b at a time; each output element
            // keeps its own ascending-k chain
            for (; j + 4 <= n; j += 4) {
                const float * b0 = b.row(j);
                const float * b1 = b.row(j + 1);
                const float * b2 = b.row(j + 2);
                const float * b3 = b.row(j + 3);
                double c0 = 0.0, c1 = 0.0, c2 = 0.0, c3 = 0.0;
                for (size_t p = 0; p < k; ++p) {
                    const double av = arow[p];
                    c0 += av * static_cast<double>(b0[p]);
                    c1 += av * static_cast<double>(b1[p]);
                    c2 += av * static_cast<double>(b2[p]);
                    c3 += av * static_cast<double>(b3[p]);
                }
                orow[j]     = static_cast<float>(c0);
                orow[j + 1] = static_cast<float>(c1);
                orow[j + 2] = static_cast<float>(c2);
                orow[j + 3] = static_cast<float>(c3);
            }
            for (; j < n; ++j) {
                const float * brow = b.row(j);
                double c = 0.0;
                for (size_t p = 0; p < k; ++p) {
                    c += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
                }
                orow[j] = static_cast<float>(c);
            }
        }
    });
    return out;
}

Matrix matmul_tn(const Matrix & a, const Matrix & b) {
    check_matmul_shapes(a.rows(), b.rows(), "matmul_tn");
    const size_t k = a.rows(), m = a.cols(), n = b.cols();
    Matrix out(m, n);
    parallel_for(m, [&](size_t r0, size_t r1) {
        std::vector<double> acc((r1 - r0) * n, 0.0);
        for (size_t p = 0; p < k; ++p) {
            const float * arow = a.row(p);
            const float * brow = b.row(p);
            for (size_t i = r0; i < r1; ++i) {
                const double av = arow[i];
                double * accrow = acc.data() + (i - r0) * n;
                for (size_t j = 0; j < n; ++j) {
                    accrow[j] += av * static_cast<double>(brow[j]);
                }
            }
        }
        for (size_t i = r0; i < r1; ++i) {
            const double * accrow = acc.data() + (i - r0) * n;
            float * orow          = out.row(i);
            for (size_t j = 0; j < n; ++j) {
                orow[j] = static_cast<float>(accrow[j]);
            }
        }
    });
    return out;
}

Matrix transpose(const Matrix & a) {
    Matrix out(a.cols(), a.rows());
    for (size_t i = 0; i < a.rows(); ++i) {
        for (size_t j = 0; j < a.cols(); ++j) {
            out.at(j, i) = a.at(i, j);
        }
    }
    return out;
}

Matrix cholesky(const Matrix & a) {
    if (a.rows() != a.cols()) {
        throw std::invalid_argument("cholesky: matrix is not square");
    }
    const size_t n = a.rows();
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (std::fabs(a.at(i, j) - a.at(j, i)) > 1e-5f) {
                throw std::invalid_argument("cholesky: matrix is not symmetric at (" +
                                            std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }
    Matrix l(n, n);
    for (size_t j = 0; j < n; ++j) {
        double d = a.at(j, j);
        for (size_t p = 0; p < j; ++p) {
            d -= static_cast<double>(l.at(j, p)) * static_cast<double>(l.at(j, p));
        }
        if (d <= 0.0 || !std::isfinite(d)) {
            throw DecompositionError("cholesky: non-positive pivot " + std::to_string(d) +
                                         " at index " + std::to_string(j) +
                                         " (matrix is not positive definite)",
                                     static_cast<int>(j));
        }
        const double diag = std::sqrt(d);
        l.at(j, j) = static_cast<float>(diag);
        for (size_t i = j + 1; i < n; ++i) {
            double s = a.at(i, j);
            for (size_t p = 0; p < j; ++p) {
                s -= static_cast<double>(l.at(i, p)) * static_cast<double>(l.at(j, p));
            }
            l.at(i, j) = static_cast<float>(s / diag);
        }
    }
    return l;
}

Matrix solve_lower(const Matrix & l, const Matrix & b) {
    if (l.rows() != l.cols()) {
        throw std::invalid_argument("solve_lower: matrix is not square");
    }
    check_matmul_shapes(l.cols(), b.rows(), "solve_lower");
    const size_t n = l.rows(), m = b.cols();
    Matrix x(n, m);
    for (size_t j = 0; j < m; ++j) {
        for (size_t i = 0; i < n; ++i) {
            double s = b.at(i, j);
            for (size_t p = 0; p < i; ++p) {
                s -= static_cast<double>(l.at(i, p)) * static_cast<double>(x.at(p, j));
            }
            x.at(i, j) = static_cast<float>(s / static_cast<double>(l.at(i, i)));
        }
    }
    return x;
}

Matrix solve_lower_transposed(const Matrix & l, const Matrix & b) {
    if (l.rows() != l.cols()) {
        throw std::invalid_argument("solve_lower_transposed: matrix is not square");
    }
    check_matmul_shapes(l.cols(), b.rows(), "solve_lower_transposed");
    const size_t n = l.rows(), m = b.cols();
    Matrix x(n, m);
    for (size_t j = 0; j < m; ++j) {
        for (size_t ii = n; ii > 0; --ii) {
            const size_t i = ii - 1;
            double s = b.at(i, j);
            for (size_t p = i + 1; p < n; ++p) {
                s -= static_cast<double>(l.at(p, i)) * static_cast<double>(x.at(p, j));
            }
            x.at(i, j) = static_cast<float>(s / static_cast<double>(l.at(i, i)));
        }
    }
    return x;
}

Matrix inverse_spd(const Matrix & a) {
    const Matrix l = cholesky(a);
    const Matrix y = solve_lower(l, Matrix::identity(a.rows()));
    Matrix inv     = solve_lower_transposed(l, y);
    // round-off leaves the product slightly asymmetric; restore symmetry
    for (size_t i = 0; i < inv.rows(); ++i) {
        for (size_t j = i + 1; j < inv.cols(); ++j) {
            const float v = 0.5f * (inv.at(i, j) + inv.at(j, i));
            inv.at(i, j) = v;
            inv.at(j, i) = v;
        }
    }
    return inv;
}

double frobenius_norm_sq(const Matrix & a) {
    double s = 0.0;
    for (float v : a.values()) {
        s += static_cast<double>(v) * static_cast<double>(v);
    }
    return s;
}

double max_abs_diff(const Matrix & a, const Matrix & b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch");
    }
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(static_cast<double>(a.values()[i]) -
                                  static_cast<double>(b.values()[i])));
    }
    return m;
}

} // namespace ptq
