#include "codir/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "codir/error.hpp"

namespace codir {

using detail::grad_buffer;
using detail::make_result;

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.rank() != rank) {
        fail(ErrorKind::Dimension, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                       t.shape_string());
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        fail(ErrorKind::Dimension, std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

void check_temperature(double temperature, const char* op) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        fail(ErrorKind::Parameter, std::string(op) + ": temperature must be positive, got " + std::to_string(temperature));
    }
}

// out[p x r] += a[p x q] * b[q x r]
void gemm_acc(const double* a, const double* b, double* out, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        double* out_row = out + i * r;
        const double* a_row = a + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = a_row[k];
            const double* b_row = b + k * r;
            for (std::size_t j = 0; j < r; ++j) out_row[j] += aik * b_row[j];
        }
    }
}

// ga[p x q] += g[p x r] * b[q x r]^T
void gemm_nt_acc(const double* g, const double* b, double* ga, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const double* g_row = g + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double* b_row = b + k * r;
            double acc = 0.0;
            for (std::size_t j = 0; j < r; ++j) acc += g_row[j] * b_row[j];
            ga[i * q + k] += acc;
        }
    }
}

// gb[q x r] += a[p x q]^T * g[p x r]
void gemm_tn_acc(const double* a, const double* g, double* gb, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const double* a_row = a + i * q;
        const double* g_row = g + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = a_row[k];
            double* gb_row = gb + k * r;
            for (std::size_t j = 0; j < r; ++j) gb_row[j] += aik * g_row[j];
        }
    }
}

std::size_t last_extent(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
    if (b.dim(0) != q) {
        fail(ErrorKind::Dimension, "matmul: inner extents differ, " + a.shape_string() + " x " + b.shape_string());
    }
    std::vector<double> out(p * r, 0.0);
    gemm_acc(a.values().data(), b.values().data(), out.data(), p, q, r);
    return make_result({p, r}, std::move(out), {a, b}, [a, b, p, q, r](TensorNode& node) {
        const double* g = node.grad.data();
        if (double* ga = grad_buffer(*a.node())) gemm_nt_acc(g, b.values().data(), ga, p, q, r);
        if (double* gb = grad_buffer(*b.node())) gemm_tn_acc(a.values().data(), g, gb, p, q, r);
    });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::size_t n = a.dim(0), p = a.dim(1), q = a.dim(2), r = b.dim(2);
    if (b.dim(0) != n || b.dim(1) != q) {
        fail(ErrorKind::Dimension, "bmm: incompatible shapes " + a.shape_string() + " x " + b.shape_string());
    }
    std::vector<double> out(n * p * r, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        gemm_acc(a.values().data() + s * p * q, b.values().data() + s * q * r, out.data() + s * p * r, p, q, r);
    }
    return make_result({n, p, r}, std::move(out), {a, b}, [a, b, n, p, q, r](TensorNode& node) {
        const double* g = node.grad.data();
        double* ga = grad_buffer(*a.node());
        double* gb = grad_buffer(*b.node());
        for (std::size_t s = 0; s < n; ++s) {
            if (ga) gemm_nt_acc(g + s * p * r, b.values().data() + s * q * r, ga + s * p * q, p, q, r);
            if (gb) gemm_tn_acc(a.values().data() + s * p * q, g + s * p * r, gb + s * q * r, p, q, r);
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2 && a.rank() != 3) {
        fail(ErrorKind::Dimension, "transpose: expected rank 2 or 3, got " + a.shape_string());
    }
    const bool batched = a.rank() == 3;
    const std::size_t n = batched ? a.dim(0) : 1;
    const std::size_t p = a.dim(a.rank() - 2), q = a.dim(a.rank() - 1);
    std::vector<double> out(a.numel());
    const auto in = a.values();
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < q; ++j) out[s * p * q + j * p + i] = in[s * p * q + i * q + j];
        }
    }
    Shape shape = batched ? Shape{n, q, p} : Shape{q, p};
    return make_result(std::move(shape), std::move(out), {a}, [a, n, p, q](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        const double* g = node.grad.data();
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < q; ++j) ga[s * p * q + i * q + j] += g[s * p * q + j * p + i];
            }
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        fail(ErrorKind::Dimension, "reshape: cannot view " + a.shape_string() + " as " + shape_to_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return make_result(std::move(shape), std::move(out), {a}, [a](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode& node) {
        for (const Tensor* t : {&a, &b}) {
            if (double* gt = grad_buffer(*t->node())) {
                for (std::size_t i = 0; i < node.grad.size(); ++i) gt[i] += node.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode& node) {
        if (double* ga = grad_buffer(*a.node())) {
            for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
        }
        if (double* gb = grad_buffer(*b.node())) {
            for (std::size_t i = 0; i < node.grad.size(); ++i) gb[i] -= node.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](TensorNode& node) {
        if (double* ga = grad_buffer(*a.node())) {
            for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * b.values()[i];
        }
        if (double* gb = grad_buffer(*b.node())) {
            for (std::size_t i = 0; i < node.grad.size(); ++i) gb[i] += node.grad[i] * a.values()[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    return make_result(a.shape(), std::move(out), {a}, [a, factor](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& a, double offset) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + offset;
    return make_result(a.shape(), std::move(out), {a}, [a](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
    });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
    require_rank(bias, 1, "add_bias");
    const std::size_t width = last_extent(a);
    if (bias.numel() != width) {
        fail(ErrorKind::Dimension, "add_bias: bias " + bias.shape_string() + " does not match " + a.shape_string());
    }
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + bias.values()[i % width];
    return make_result(a.shape(), std::move(out), {a, bias}, [a, bias, width](TensorNode& node) {
        if (double* ga = grad_buffer(*a.node())) {
            for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
        }
        if (double* gb = grad_buffer(*bias.node())) {
            for (std::size_t i = 0; i < node.grad.size(); ++i) gb[i % width] += node.grad[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return make_result({1}, {total}, {a}, [a](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += node.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) fail(ErrorKind::Dimension, "mean of an empty tensor");
    double total = 0.0;
    for (double v : a.values()) total += v;
    const double n = static_cast<double>(a.numel());
    return make_result({1}, {total / n}, {a}, [a, n](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += node.grad[0] / n;
    });
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
    check_temperature(temperature, "softmax_rows");
    const std::size_t k = last_extent(logits);
    const std::size_t rows = logits.numel() / k;
    const auto in = logits.values();
    std::vector<double> out(logits.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * k;
        double* y = out.data() + r * k;
        double mx = x[0] / temperature;
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[j] / temperature);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            y[j] = std::exp(x[j] / temperature - mx);
            total += y[j];
        }
        for (std::size_t j = 0; j < k; ++j) y[j] /= total;
    }
    return make_result(logits.shape(), std::move(out), {logits}, [logits, k, rows, temperature](TensorNode& node) {
        double* gx = grad_buffer(*logits.node());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = node.values.data() + r * k;
            const double* g = node.grad.data() + r * k;
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[j] * (g[j] - dot) / temperature;
        }
    });
}

Tensor log_softmax_rows(const Tensor& logits, double temperature) {
    check_temperature(temperature, "log_softmax_rows");
    const std::size_t k = last_extent(logits);
    const std::size_t rows = logits.numel() / k;
    const auto in = logits.values();
    std::vector<double> out(logits.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * k;
        double* y = out.data() + r * k;
        double mx = x[0] / temperature;
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[j] / temperature);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += std::exp(x[j] / temperature - mx);
        const double log_total = std::log(total);
        for (std::size_t j = 0; j < k; ++j) y[j] = x[j] / temperature - mx - log_total;
    }
    return make_result(logits.shape(), std::move(out), {logits}, [logits, k, rows, temperature](TensorNode& node) {
        double* gx = grad_buffer(*logits.node());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = node.values.data() + r * k;
            const double* g = node.grad.data() + r * k;
            double gsum = 0.0;
            for (std::size_t j = 0; j < k; ++j) gsum += g[j];
            for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += (g[j] - std::exp(y[j]) * gsum) / temperature;
        }
    });
}

Tensor masked_softmax_rows(const Tensor& scores, std::span<const std::size_t> valid_cols) {
    require_rank(scores, 3, "masked_softmax_rows");
    const std::size_t groups = scores.dim(0), rows = scores.dim(1), cols = scores.dim(2);
    if (valid_cols.size() != groups) {
        fail(ErrorKind::Dimension, "masked_softmax_rows: " + std::to_string(valid_cols.size()) +
                                       " lengths for " + std::to_string(groups) + " groups");
    }
    for (std::size_t n : valid_cols) {
        if (n == 0 || n > cols) fail(ErrorKind::Parameter, "masked_softmax_rows: valid length out of range");
    }
    std::vector<std::size_t> valid(valid_cols.begin(), valid_cols.end());
    const auto in = scores.values();
    std::vector<double> out(scores.numel(), 0.0);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t n = valid[gi];
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = (gi * rows + r) * cols;
            double mx = in[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[base + j]);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                out[base + j] = std::exp(in[base + j] - mx);
                total += out[base + j];
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j] /= total;
        }
    }
    return make_result(scores.shape(), std::move(out), {scores},
                       [scores, valid = std::move(valid), rows, cols](TensorNode& node) {
                           double* gx = grad_buffer(*scores.node());
                           for (std::size_t gi = 0; gi < valid.size(); ++gi) {
                               const std::size_t n = valid[gi];
                               for (std::size_t r = 0; r < rows; ++r) {
                                   const std::size_t base = (gi * rows + r) * cols;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < n; ++j) dot += node.grad[base + j] * node.values[base + j];
                                   for (std::size_t j = 0; j < n; ++j) {
                                       gx[base + j] += node.values[base + j] * (node.grad[base + j] - dot);
                                   }
                               }
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t d = last_extent(x);
    if (gain.numel() != d || bias.numel() != d) {
        fail(ErrorKind::Dimension, "layer_norm: gain/bias " + gain.shape_string() + "/" + bias.shape_string() +
                                       " do not match " + x.shape_string());
    }
    const std::size_t rows = x.numel() / d;
    const auto in = x.values();
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
            out[r * d + j] = xhat[r * d + j] * gain.values()[j] + bias.values()[j];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gain, bias},
                       [x, gain, bias, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode& node) {
                           const double* g = node.grad.data();
                           if (double* gg = grad_buffer(*gain.node())) {
                               for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += g[i] * xhat[i];
                           }
                           if (double* gb = grad_buffer(*bias.node())) {
                               for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += g[i];
                           }
                           if (double* gx = grad_buffer(*x.node())) {
                               const auto gamma = gain.values();
                               for (std::size_t r = 0; r < rows; ++r) {
                                   double mean_g = 0.0, mean_gx = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gh = g[r * d + j] * gamma[j];
                                       mean_g += gh;
                                       mean_gx += gh * xhat[r * d + j];
                                   }
                                   mean_g /= static_cast<double>(d);
                                   mean_gx /= static_cast<double>(d);
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gh = g[r * d + j] * gamma[j];
                                       gx[r * d + j] += inv_std[r] * (gh - mean_g - xhat[r * d + j] * mean_gx);
                                   }
                               }
                           }
                       });
}

Tensor gelu(const Tensor& x) {
    const auto in = x.values();
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = 0.5 * in[i] * (1.0 + std::erf(in[i] / std::numbers::sqrt2));
    }
    return make_result(x.shape(), std::move(out), {x}, [x](TensorNode& node) {
        double* gx = grad_buffer(*x.node());
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const auto in = x.values();
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(in[i] / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * in[i] * in[i]);
            gx[i] += node.grad[i] * (cdf + in[i] * pdf);
        }
    });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) fail(ErrorKind::Parameter, "dropout rate must be in [0, 1)");
    if (rate == 0.0) return x;
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<double> keep(x.numel());
    const double kept_scale = 1.0 / (1.0 - rate);
    for (double& k : keep) k = uniform(rng) >= rate ? kept_scale : 0.0;
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * keep[i];
    return make_result(x.shape(), std::move(out), {x}, [x, keep = std::move(keep)](TensorNode& node) {
        double* gx = grad_buffer(*x.node());
        for (std::size_t i = 0; i < node.grad.size(); ++i) gx[i] += node.grad[i] * keep[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail(ErrorKind::Dimension, "concat: no inputs");
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::vector<std::size_t> widths;
    std::size_t total_width = 0;
    for (const auto& p : parts) {
        Shape p_lead(p.shape().begin(), p.shape().end() - 1);
        if (p_lead != lead) {
            fail(ErrorKind::Dimension, "concat: leading extents differ, " + parts[0].shape_string() + " vs " + p.shape_string());
        }
        widths.push_back(last_extent(p));
        total_width += widths.back();
    }
    const std::size_t rows = shape_numel(lead);
    std::vector<double> out(rows * total_width);
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const auto in = parts[pi].values();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(in.data() + r * widths[pi], widths[pi], out.data() + r * total_width + offset);
        }
        offset += widths[pi];
    }
    Shape shape = lead;
    shape.push_back(total_width);
    return make_result(std::move(shape), std::move(out), parts, [parts, widths, rows, total_width](TensorNode& node) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            if (double* gp = grad_buffer(*parts[pi].node())) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < widths[pi]; ++j) {
                        gp[r * widths[pi] + j] += node.grad[r * total_width + offset + j];
                    }
                }
            }
            offset += widths[pi];
        }
    });
}

Tensor select_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_rank(a, 2, "select_rows");
    const std::size_t n = a.dim(0), d = a.dim(1);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    std::vector<double> out(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= n) {
            fail(ErrorKind::Bounds, "select_rows: row " + std::to_string(idx[i]) + " out of range for " + a.shape_string());
        }
        std::copy_n(a.values().data() + idx[i] * d, d, out.data() + i * d);
    }
    const std::size_t count = idx.size();
    return make_result({count, d}, std::move(out), {a}, [a, idx = std::move(idx), d](TensorNode& node) {
        double* ga = grad_buffer(*a.node());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) ga[idx[i] * d + j] += node.grad[i * d + j];
        }
    });
}

Tensor row(const Tensor& a, std::size_t index) {
    const std::size_t rows[] = {index};
    return reshape(select_rows(a, rows), {a.dim(1)});
}

Tensor mean_pool_rows(const Tensor& h, std::size_t valid_len) {
    require_rank(h, 2, "mean_pool_rows");
    const std::size_t lens[] = {valid_len};
    return reshape(mean_pool_rows(reshape(h, {1, h.dim(0), h.dim(1)}), lens), {h.dim(1)});
}

Tensor mean_pool_rows(const Tensor& h, std::span<const std::size_t> valid_lens) {
    require_rank(h, 3, "mean_pool_rows");
    const std::size_t batch = h.dim(0), len = h.dim(1), d = h.dim(2);
    if (valid_lens.size() != batch) {
        fail(ErrorKind::Dimension, "mean_pool_rows: " + std::to_string(valid_lens.size()) + " lengths for batch " +
                                       std::to_string(batch));
    }
    std::vector<std::size_t> lens(valid_lens.begin(), valid_lens.end());
    std::vector<double> out(batch * d, 0.0);
    const auto in = h.values();
    for (std::size_t b = 0; b < batch; ++b) {
        if (lens[b] < 1 || lens[b] > len) {
            fail(ErrorKind::Parameter, "mean_pool_rows: valid_len " + std::to_string(lens[b]) + " outside [1, " +
                                           std::to_string(len) + "]");
        }
        for (std::size_t r = 0; r < lens[b]; ++r) {
            for (std::size_t j = 0; j < d; ++j) out[b * d + j] += in[(b * len + r) * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) out[b * d + j] /= static_cast<double>(lens[b]);
    }
    return make_result({batch, d}, std::move(out), {h}, [h, lens = std::move(lens), len, d](TensorNode& node) {
        double* gh = grad_buffer(*h.node());
        for (std::size_t b = 0; b < lens.size(); ++b) {
            const double inv = 1.0 / static_cast<double>(lens[b]);
            for (std::size_t r = 0; r < lens[b]; ++r) {
                for (std::size_t j = 0; j < d; ++j) gh[(b * len + r) * d + j] += node.grad[b * d + j] * inv;
            }
        }
    });
}

namespace {

struct CosineParts {
    double dot = 0.0, uu = 0.0, vv = 0.0;
};

CosineParts cosine_parts(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        fail(ErrorKind::Dimension, "cosine_sim: lengths differ (" + std::to_string(u.size()) + " vs " +
                                       std::to_string(v.size()) + ")");
    }
    CosineParts parts;
    for (std::size_t i = 0; i < u.size(); ++i) {
        parts.dot += u[i] * v[i];
        parts.uu += u[i] * u[i];
        parts.vv += v[i] * v[i];
    }
    if (!(parts.uu > 0.0) || !(parts.vv > 0.0)) fail(ErrorKind::DegenerateVector, "cosine_sim: zero-norm vector");
    return parts;
}

double cosine_from_parts(const CosineParts& p) {
    return std::clamp(p.dot / std::sqrt(p.uu * p.vv), -1.0, 1.0);
}

}  // namespace

double cosine_sim_value(std::span<const double> u, std::span<const double> v) {
    return cosine_from_parts(cosine_parts(u, v));
}

Tensor cosine_sim(const Tensor& u, const Tensor& v) {
    require_rank(u, 1, "cosine_sim");
    require_rank(v, 1, "cosine_sim");
    const CosineParts parts = cosine_parts(u.values(), v.values());
    const double c = cosine_from_parts(parts);
    return make_result({1}, {c}, {u, v}, [u, v, parts](TensorNode& node) {
        const double g = node.grad[0];
        const double nu = std::sqrt(parts.uu), nv = std::sqrt(parts.vv);
        const double c = parts.dot / (nu * nv);
        if (double* gu = grad_buffer(*u.node())) {
            for (std::size_t i = 0; i < u.numel(); ++i) {
                gu[i] += g * (v.values()[i] / (nu * nv) - c * u.values()[i] / parts.uu);
            }
        }
        if (double* gv = grad_buffer(*v.node())) {
            for (std::size_t i = 0; i < v.numel(); ++i) {
                gv[i] += g * (u.values()[i] / (nu * nv) - c * v.values()[i] / parts.vv);
            }
        }
    });
}

Tensor nll_rows(const Tensor& logp, std::span<const std::size_t> targets) {
    require_rank(logp, 2, "nll_rows");
    const std::size_t n = logp.dim(0), k = logp.dim(1);
    if (targets.size() != n) {
        fail(ErrorKind::Dimension, "nll_rows: " + std::to_string(targets.size()) + " targets for " +
                                       std::to_string(n) + " rows");
    }
    if (n == 0) fail(ErrorKind::Dimension, "nll_rows: no rows");
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (tgt[i] >= k) fail(ErrorKind::Bounds, "nll_rows: target " + std::to_string(tgt[i]) + " >= " + std::to_string(k));
        total -= logp.values()[i * k + tgt[i]];
    }
    return make_result({1}, {total / static_cast<double>(n)}, {logp}, [logp, tgt = std::move(tgt), k](TensorNode& node) {
        double* gl = grad_buffer(*logp.node());
        const double w = node.grad[0] / static_cast<double>(tgt.size());
        for (std::size_t i = 0; i < tgt.size(); ++i) gl[i * k + tgt[i]] -= w;
    });
}

Tensor kl_rows(const Tensor& target_logp, const Tensor& logq) {
    require_rank(logq, 2, "kl_rows");
    require_same_shape(target_logp, logq, "kl_rows");
    const std::size_t n = logq.dim(0), k = logq.dim(1);
    if (n == 0) fail(ErrorKind::Dimension, "kl_rows: no rows");
    std::vector<double> p(n * k);
    double total = 0.0;
    for (std::size_t i = 0; i < n * k; ++i) {
        const double lp = target_logp.values()[i];
        p[i] = std::exp(lp);
        total += p[i] * (lp - logq.values()[i]);
    }
    return make_result({1}, {total / static_cast<double>(n)}, {logq}, [logq, p = std::move(p), n](TensorNode& node) {
        double* gq = grad_buffer(*logq.node());
        const double w = node.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < p.size(); ++i) gq[i] -= w * p[i];
    });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads) {
    require_rank(x, 2, "split_heads");
    const std::size_t d = x.dim(1);
    if (x.dim(0) != batch * len || heads == 0 || d % heads != 0) {
        fail(ErrorKind::Dimension, "split_heads: cannot split " + x.shape_string() + " into " + std::to_string(heads) + " heads");
    }
    const std::size_t dh = d / heads;
    std::vector<double> out(x.numel());
    const auto in = x.values();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < len; ++l)
                std::copy_n(in.data() + (b * len + l) * d + h * dh, dh, out.data() + ((b * heads + h) * len + l) * dh);
    return make_result({batch * heads, len, dh}, std::move(out), {x}, [x, batch, len, heads, dh, d](TensorNode& node) {
        double* gx = grad_buffer(*x.node());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t e = 0; e < dh; ++e)
                        gx[(b * len + l) * d + h * dh + e] += node.grad[((b * heads + h) * len + l) * dh + e];
    });
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t len, std::size_t heads) {
    require_rank(x, 3, "merge_heads");
    if (x.dim(0) != batch * heads || x.dim(1) != len) {
        fail(ErrorKind::Dimension, "merge_heads: unexpected shape " + x.shape_string());
    }
    const std::size_t dh = x.dim(2), d = dh * heads;
    std::vector<double> out(x.numel());
    const auto in = x.values();
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < len; ++l)
                std::copy_n(in.data() + ((b * heads + h) * len + l) * dh, dh, out.data() + (b * len + l) * d + h * dh);
    return make_result({batch * len, d}, std::move(out), {x}, [x, batch, len, heads, dh, d](TensorNode& node) {
        double* gx = grad_buffer(*x.node());
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t l = 0; l < len; ++l)
                    for (std::size_t e = 0; e < dh; ++e)
                        gx[((b * heads + h) * len + l) * dh + e] += node.grad[(b * len + l) * d + h * dh + e];
    });
}

}  // namespace codir
