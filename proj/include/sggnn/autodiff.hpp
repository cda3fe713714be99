#pragma once

// Matrix-granular reverse-mode differentiation. Every op records its forward
// value and, when any input needs a gradient, a closure that pushes the output
// gradient back to its inputs. Nodes are appended in topological order, so a
// single reverse sweep is a valid backward pass.

#include <sggnn/kernels.hpp>
#include <sggnn/matrix.hpp>

#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace sggnn::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    const Matrix& grad() const;
    bool requires_grad() const;
};

class Tape {
public:
    Var constant(Matrix value) { return push(std::move(value), false, {}); }
    Var variable(Matrix value) { return push(std::move(value), true, {}); }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient buffer of a node, allocated on first use.
    Matrix& grad_buffer(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty() && !n.value.empty()) {
            n.grad = Matrix(n.value.rows(), n.value.cols());
        }
        return n.grad;
    }

    /// Seeds d(root)/d(root) = 1 and sweeps every recorded closure in reverse.
    void backward(Var root) {
        if (root.value().size() != 1) {
            throw ShapeError("backward: root must be a scalar, got " + root.value().shape_string());
        }
        grad_buffer(root.id)[0] = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) {
                n.backward(*this, n.grad);
            }
        }
    }

    using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

    Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
        bool needs = false;
        for (const Var& v : inputs) {
            needs = needs || v.requires_grad();
        }
        return record(std::move(value), needs, std::move(backward));
    }

    Var record(Matrix value, bool needs_grad, Backward backward) {
        return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : Backward{});
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Matrix value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backward)});
        return Var{this, nodes_.size() - 1};
    }

    std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }
inline bool Var::requires_grad() const { return tape->requires_grad(id); }

namespace detail {

inline void accumulate(Tape& t, Var v, const Matrix& g) {
    if (!v.requires_grad()) {
        return;
    }
    Matrix& dst = t.grad_buffer(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
        dst[i] += g[i];
    }
}

} // namespace detail

inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(sggnn::matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (a.requires_grad()) {
            detail::accumulate(tp, a, sggnn::matmul_nt(g, b.value()));
        }
        if (b.requires_grad()) {
            detail::accumulate(tp, b, sggnn::matmul_tn(a.value(), g));
        }
    });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(sggnn::matmul_nt(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        if (a.requires_grad()) {
            detail::accumulate(tp, a, sggnn::matmul(g, b.value()));
        }
        if (b.requires_grad()) {
            detail::accumulate(tp, b, sggnn::matmul_tn(g, a.value()));
        }
    });
}

inline Var add_bias(Var x, Var bias) {
    Tape& t = *x.tape;
    return t.record(kernels::add_bias(x.value(), bias.value()), {x, bias}, [x, bias](Tape& tp, const Matrix& g) {
        detail::accumulate(tp, x, g);
        if (bias.requires_grad()) {
            Matrix gb(1, g.cols());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                for (std::size_t c = 0; c < g.cols(); ++c) {
                    gb[c] += g(r, c);
                }
            }
            detail::accumulate(tp, bias, gb);
        }
    });
}

inline Var relu(Var x) {
    Tape& t = *x.tape;
    return t.record(kernels::relu(x.value()), {x}, [x](Tape& tp, const Matrix& g) {
        Matrix gx = g;
        const Matrix& xv = x.value();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (!(xv[i] > 0.0)) {
                gx[i] = 0.0;
            }
        }
        detail::accumulate(tp, x, gx);
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = *a.tape;
    return t.record(kernels::lincomb(a.value(), b.value(), 1.0, -1.0), {a, b}, [a, b](Tape& tp, const Matrix& g) {
        detail::accumulate(tp, a, g);
        if (b.requires_grad()) {
            Matrix gb = g;
            for (double& v : gb.values()) {
                v = -v;
            }
            detail::accumulate(tp, b, gb);
        }
    });
}

inline Var square(Var x) {
    Tape& t = *x.tape;
    Matrix y = x.value();
    for (double& v : y.values()) {
        v = v * v;
    }
    return t.record(std::move(y), {x}, [x](Tape& tp, const Matrix& g) {
        Matrix gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] *= 2.0 * x.value()[i];
        }
        detail::accumulate(tp, x, gx);
    });
}

/// ca * a + cb * b
inline Var lincomb(Var a, Var b, double ca, double cb) {
    Tape& t = *a.tape;
    return t.record(kernels::lincomb(a.value(), b.value(), ca, cb), {a, b}, [a, b, ca, cb](Tape& tp, const Matrix& g) {
        if (a.requires_grad()) {
            Matrix ga = g;
            for (double& v : ga.values()) {
                v *= ca;
            }
            detail::accumulate(tp, a, ga);
        }
        if (b.requires_grad()) {
            Matrix gb = g;
            for (double& v : gb.values()) {
                v *= cb;
            }
            detail::accumulate(tp, b, gb);
        }
    });
}

inline Var add(Var a, Var b) { return lincomb(a, b, 1.0, 1.0); }

inline Var scale(Var x, double c) {
    Tape& t = *x.tape;
    Matrix y = x.value();
    for (double& v : y.values()) {
        v *= c;
    }
    return t.record(std::move(y), {x}, [x, c](Tape& tp, const Matrix& g) {
        Matrix gx = g;
        for (double& v : gx.values()) {
            v *= c;
        }
        detail::accumulate(tp, x, gx);
    });
}

inline Var gather_rows(Var x, std::vector<std::size_t> idx) {
    Tape& t = *x.tape;
    Matrix y = select_rows(x.value(), idx);
    return t.record(std::move(y), {x}, [x, idx = std::move(idx)](Tape& tp, const Matrix& g) {
        Matrix& dst = tp.grad_buffer(x.id);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            auto src = g.row(r);
            auto out = dst.row(idx[r]);
            for (std::size_t c = 0; c < src.size(); ++c) {
                out[c] += src[c];
            }
        }
    });
}

/// y[r][c] = x[rows[r]][cols[c]]
inline Var gather_block(Var x, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
    Tape& t = *x.tape;
    Matrix y = select_block(x.value(), rows, cols);
    return t.record(std::move(y), {x}, [x, rows = std::move(rows), cols = std::move(cols)](Tape& tp, const Matrix& g) {
        Matrix& dst = tp.grad_buffer(x.id);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < cols.size(); ++c) {
                dst(rows[r], cols[c]) += g(r, c);
            }
        }
    });
}

/// Places pair values (P x 1) symmetrically into an n x n matrix; diagonal stays 0.
inline Var scatter_symmetric(Var pair_values, std::size_t n,
                             std::vector<std::pair<std::size_t, std::size_t>> pairs) {
    Tape& t = *pair_values.tape;
    if (pair_values.value().size() != pairs.size()) {
        throw ShapeError("scatter_symmetric: value count does not match pair count");
    }
    Matrix y(n, n);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        y(pairs[p].first, pairs[p].second) = pair_values.value()[p];
        y(pairs[p].second, pairs[p].first) = pair_values.value()[p];
    }
    return t.record(std::move(y), {pair_values},
                    [pair_values, pairs = std::move(pairs)](Tape& tp, const Matrix& g) {
                        Matrix& dst = tp.grad_buffer(pair_values.id);
                        for (std::size_t p = 0; p < pairs.size(); ++p) {
                            dst[p] += g(pairs[p].first, pairs[p].second) + g(pairs[p].second, pairs[p].first);
                        }
                    });
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no inputs");
    }
    Tape& t = *parts.front().tape;
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    bool needs = false;
    for (const Var& p : parts) {
        if (p.value().cols() != cols) {
            throw ShapeError("concat_rows: column mismatch");
        }
        rows += p.value().rows();
        needs = needs || p.requires_grad();
    }
    Matrix y(rows, cols);
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), y.values().begin() + off * cols);
        off += p.value().rows();
    }
    return t.record(std::move(y), needs, [parts](Tape& tp, const Matrix& g) {
        std::size_t off = 0;
        for (const Var& p : parts) {
            const std::size_t n = p.value().size();
            if (p.requires_grad()) {
                Matrix& dst = tp.grad_buffer(p.id);
                for (std::size_t i = 0; i < n; ++i) {
                    dst[i] += g[off + i];
                }
            }
            off += n;
        }
    });
}

inline Var batch_norm_train(Var x, Var gamma, Var beta, double eps, kernels::BatchNormTrace* stats_out = nullptr) {
    Tape& t = *x.tape;
    auto trace = std::make_shared<kernels::BatchNormTrace>();
    Matrix y = kernels::batch_norm_train(x.value(), gamma.value(), beta.value(), eps, trace.get());
    if (stats_out) {
        *stats_out = *trace;
    }
    return t.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, trace](Tape& tp, const Matrix& g) {
        const std::size_t n = g.rows();
        const std::size_t d = g.cols();
        const Matrix& xhat = trace->normalized;
        std::vector<double> sum_g(d, 0.0);
        std::vector<double> sum_gx(d, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                sum_g[c] += g(r, c);
                sum_gx[c] += g(r, c) * xhat(r, c);
            }
        }
        if (gamma.requires_grad()) {
            detail::accumulate(tp, gamma, Matrix::row_vector(sum_gx));
        }
        if (beta.requires_grad()) {
            detail::accumulate(tp, beta, Matrix::row_vector(sum_g));
        }
        if (x.requires_grad()) {
            const double inv_n = 1.0 / static_cast<double>(n);
            Matrix gx(n, d);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    gx(r, c) = gamma.value()[c] * trace->inv_std[c] *
                               (g(r, c) - sum_g[c] * inv_n - xhat(r, c) * sum_gx[c] * inv_n);
                }
            }
            detail::accumulate(tp, x, gx);
        }
    });
}

/// Normalization with frozen statistics (running mean/var are constants here).
inline Var batch_norm_eval(Var x, Var gamma, Var beta, const Matrix& running_mean, const Matrix& running_var,
                           double eps) {
    Tape& t = *x.tape;
    Matrix y = kernels::batch_norm_eval(x.value(), gamma.value(), beta.value(), running_mean, running_var, eps);
    std::vector<double> inv_std(running_var.size());
    for (std::size_t c = 0; c < inv_std.size(); ++c) {
        inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
    return t.record(std::move(y), {x, gamma, beta},
                    [x, gamma, beta, mean = running_mean, inv_std = std::move(inv_std)](Tape& tp, const Matrix& g) {
                        const std::size_t d = g.cols();
                        Matrix gg(1, d);
                        Matrix gb(1, d);
                        Matrix gx(g.rows(), d);
                        for (std::size_t r = 0; r < g.rows(); ++r) {
                            for (std::size_t c = 0; c < d; ++c) {
                                const double h = (x.value()(r, c) - mean[c]) * inv_std[c];
                                gg[c] += g(r, c) * h;
                                gb[c] += g(r, c);
                                gx(r, c) = g(r, c) * gamma.value()[c] * inv_std[c];
                            }
                        }
                        detail::accumulate(tp, gamma, gg);
                        detail::accumulate(tp, beta, gb);
                        detail::accumulate(tp, x, gx);
                    });
}

/// Row-wise x * w + b (w: D x 1, b: 1 x 1), see kernels::linear_logits.
inline Var linear_logits(Var x, Var w, Var b) {
    Tape& t = *x.tape;
    return t.record(kernels::linear_logits(x.value(), w.value(), b.value()), {x, w, b},
                    [x, w, b](Tape& tp, const Matrix& g) {
                        const Matrix& xv = x.value();
                        if (x.requires_grad()) {
                            Matrix gx(xv.rows(), xv.cols());
                            for (std::size_t r = 0; r < xv.rows(); ++r) {
                                for (std::size_t c = 0; c < xv.cols(); ++c) {
                                    gx(r, c) = g[r] * w.value()[c];
                                }
                            }
                            detail::accumulate(tp, x, gx);
                        }
                        if (w.requires_grad()) {
                            Matrix gw(xv.cols(), 1);
                            for (std::size_t r = 0; r < xv.rows(); ++r) {
                                for (std::size_t c = 0; c < xv.cols(); ++c) {
                                    gw[c] += g[r] * xv(r, c);
                                }
                            }
                            detail::accumulate(tp, w, gw);
                        }
                        if (b.requires_grad()) {
                            Matrix gb(1, 1);
                            for (std::size_t r = 0; r < g.size(); ++r) {
                                gb[0] += g[r];
                            }
                            detail::accumulate(tp, b, gb);
                        }
                    });
}

inline Var softmax_offdiag(Var s) {
    Tape& t = *s.tape;
    Matrix w = kernels::softmax_offdiag(s.value());
    return t.record(w, {s}, [s, w](Tape& tp, const Matrix& g) {
        const std::size_t n = w.rows();
        Matrix gs(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            double inner = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                inner += w(i, j) * g(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                gs(i, j) = j == i ? 0.0 : w(i, j) * (g(i, j) - inner);
            }
        }
        detail::accumulate(tp, s, gs);
    });
}

/// Summed clamped BCE of sigmoid(logits) against labels; returns a 1 x 1 node.
/// Entries whose probability is clamped contribute no gradient.
inline Var bce_with_logits(Var logits, std::vector<double> labels) {
    Tape& t = *logits.tape;
    Matrix loss(1, 1);
    loss[0] = kernels::bce_from_logits(logits.value(), labels);
    return t.record(std::move(loss), {logits}, [logits, labels = std::move(labels)](Tape& tp, const Matrix& g) {
        const Matrix& z = logits.value();
        Matrix gz(z.rows(), z.cols());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const double p = kernels::sigmoid(z[i]);
            const bool clamped = p < kernels::kBceClamp || p > 1.0 - kernels::kBceClamp;
            gz[i] = clamped ? 0.0 : g[0] * (p - labels[i]);
        }
        detail::accumulate(tp, logits, gz);
    });
}

} // namespace sggnn::ad
