#pragma once

// Forward numerical kernels shared by the plain (Matrix-valued) API and the
// differentiable tape ops, so both routes produce bit-identical values.

#include <sggnn/matrix.hpp>

#include <cmath>
#include <limits>
#include <vector>

namespace sggnn::kernels {

inline constexpr double kBceClamp = 1e-7;

inline double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Matrix relu(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.values()) {
        v = v > 0.0 ? v : 0.0;
    }
    return y;
}

/// y = x + bias, bias broadcast over rows (bias is 1 x cols).
inline Matrix add_bias(const Matrix& x, const Matrix& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols()) {
        throw ShapeError("add_bias: bias " + bias.shape_string() + " for input " + x.shape_string());
    }
    Matrix y = x;
    for (std::size_t r = 0; r < y.rows(); ++r) {
        auto row = y.row(r);
        for (std::size_t c = 0; c < y.cols(); ++c) {
            row[c] += bias[c];
        }
    }
    return y;
}

/// Row-wise logits x * w + b with w a column (D x 1) and b a 1 x 1 scalar.
/// Each row is reduced independently so a row's value never depends on the batch.
inline Matrix linear_logits(const Matrix& x, const Matrix& w, const Matrix& b) {
    if (w.cols() != 1 || w.rows() != x.cols() || b.size() != 1) {
        throw ShapeError("linear_logits: input " + x.shape_string() + ", w " + w.shape_string());
    }
    Matrix out(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        out(r, 0) = dot(x.row(r), w.values()) + b[0];
    }
    return out;
}

struct BatchNormTrace {
    Matrix normalized;           // x-hat
    std::vector<double> mean;    // per column
    std::vector<double> var;     // per column, biased
    std::vector<double> inv_std; // 1 / sqrt(var + eps)
};

/// Batch-statistics normalization over rows. Requires at least two rows.
inline Matrix batch_norm_train(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps,
                               BatchNormTrace* trace = nullptr) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    if (n < 2) {
        throw ShapeError("batch_norm_train: batch statistics need at least 2 rows, got " + std::to_string(n));
    }
    if (gamma.size() != d || beta.size() != d) {
        throw ShapeError("batch_norm_train: parameter width does not match input " + x.shape_string());
    }
    std::vector<double> mean(d, 0.0);
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            mean[c] += row[c];
        }
    }
    for (double& m : mean) {
        m /= static_cast<double>(n);
    }
    for (std::size_t r = 0; r < n; ++r) {
        auto row = x.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = row[c] - mean[c];
            var[c] += dv * dv;
        }
    }
    std::vector<double> inv_std(d);
    for (std::size_t c = 0; c < d; ++c) {
        var[c] /= static_cast<double>(n);
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    Matrix xhat(n, d);
    Matrix y(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (x(r, c) - mean[c]) * inv_std[c];
            xhat(r, c) = h;
            y(r, c) = gamma[c] * h + beta[c];
        }
    }
    if (trace) {
        trace->normalized = std::move(xhat);
        trace->mean = std::move(mean);
        trace->var = std::move(var);
        trace->inv_std = std::move(inv_std);
    }
    return y;
}

/// Running-statistics normalization; elementwise, so every row is independent of the batch.
inline Matrix batch_norm_eval(const Matrix& x, const Matrix& gamma, const Matrix& beta, const Matrix& running_mean,
                              const Matrix& running_var, double eps) {
    const std::size_t d = x.cols();
    if (gamma.size() != d || beta.size() != d || running_mean.size() != d || running_var.size() != d) {
        throw ShapeError("batch_norm_eval: parameter width does not match input " + x.shape_string());
    }
    Matrix y(x.rows(), d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const double inv_std = 1.0 / std::sqrt(running_var[c] + eps);
            y(r, c) = gamma[c] * ((x(r, c) - running_mean[c]) * inv_std) + beta[c];
        }
    }
    return y;
}

/// Row softmax over off-diagonal entries; the diagonal is forced to 0.
/// A 1 x 1 input yields [[0]] (empty neighbourhood).
inline Matrix softmax_offdiag(const Matrix& s) {
    if (s.rows() != s.cols()) {
        throw ShapeError("softmax_offdiag: square input required, got " + s.shape_string());
    }
    const std::size_t n = s.rows();
    Matrix w(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                row_max = std::max(row_max, s(i, j));
            }
        }
        if (n < 2) {
            continue;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                const double e = std::exp(s(i, j) - row_max);
                w(i, j) = e;
                denom += e;
            }
        }
        for (std::size_t j = 0; j < n; ++j) {
            w(i, j) /= denom;
        }
        w(i, i) = 0.0;
    }
    return w;
}

/// out = ca * a + cb * b, elementwise.
inline Matrix lincomb(const Matrix& a, const Matrix& b, double ca, double cb) {
    require_same_shape(a, b, "lincomb");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = ca * a[i] + cb * b[i];
    }
    return out;
}

/// Summed binary cross-entropy of sigmoid(logits) with clamped probabilities.
inline double bce_from_logits(const Matrix& logits, std::span<const double> labels) {
    if (logits.size() != labels.size()) {
        throw ShapeError("bce: " + std::to_string(logits.size()) + " logits vs " + std::to_string(labels.size()) +
                         " labels");
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double p = std::clamp(sigmoid(logits[i]), kBceClamp, 1.0 - kBceClamp);
        loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    return loss;
}

} // namespace sggnn::kernels
