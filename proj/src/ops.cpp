#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gps/autodiff.hpp"
#include "gps/error.hpp"

namespace gps {

namespace {

Graph& same_graph(std::string_view op, Var a, Var b) {
    if (a.graph() == nullptr || a.graph() != b.graph()) {
        throw ContractError(std::string(op) + ": operands must belong to the same graph");
    }
    return *a.graph();
}

Graph& graph_of(std::string_view op, Var a) {
    if (a.graph() == nullptr) {
        throw ContractError(std::string(op) + ": unbound operand");
    }
    return *a.graph();
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_str(t.shape()));
    }
}

template <typename Fwd, typename Deriv>
Var elementwise(std::string_view op, Var x, Fwd fwd, Deriv deriv) {
    Graph& g = graph_of(op, x);
    const Tensor& in = x.value();
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.numel(); ++i) {
        out[i] = fwd(in[i]);
    }
    return g.record(op, {x}, std::move(out), [deriv](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        const Tensor& in = ctx.input(0);
        auto gout = ctx.out_grad();
        for (std::size_t i = 0; i < gin.size(); ++i) {
            gin[i] += gout[i] * deriv(in[i]);
        }
    });
}

}  // namespace

Var add(Var a, Var b) {
    Graph& g = same_graph("add", a, b);
    require_same_shape("add", a.value(), b.value());
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] + b.value()[i];
    }
    return g.record("add", {a, b}, std::move(out), [](BackwardContext& ctx) {
        auto gout = ctx.out_grad();
        for (std::size_t k = 0; k < 2; ++k) {
            auto gin = ctx.input_grad(k);
            for (std::size_t i = 0; i < gin.size(); ++i) {
                gin[i] += gout[i];
            }
        }
    });
}

Var sub(Var a, Var b) {
    Graph& g = same_graph("sub", a, b);
    require_same_shape("sub", a.value(), b.value());
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] - b.value()[i];
    }
    return g.record("sub", {a, b}, std::move(out), [](BackwardContext& ctx) {
        auto gout = ctx.out_grad();
        auto ga = ctx.input_grad(0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += gout[i];
        }
        auto gb = ctx.input_grad(1);
        for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] -= gout[i];
        }
    });
}

Var mul(Var a, Var b) {
    Graph& g = same_graph("mul", a, b);
    require_same_shape("mul", a.value(), b.value());
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = a.value()[i] * b.value()[i];
    }
    return g.record("mul", {a, b}, std::move(out), [](BackwardContext& ctx) {
        auto gout = ctx.out_grad();
        const Tensor& av = ctx.input(0);
        const Tensor& bv = ctx.input(1);
        auto ga = ctx.input_grad(0);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += gout[i] * bv[i];
        }
        auto gb = ctx.input_grad(1);
        for (std::size_t i = 0; i < gb.size(); ++i) {
            gb[i] += gout[i] * av[i];
        }
    });
}

Var scale(Var a, double factor) {
    return elementwise(
        "scale", a, [factor](double x) { return x * factor; }, [factor](double) { return factor; });
}

Var add_bias(Var x, Var bias, std::size_t axis) {
    Graph& g = same_graph("add_bias", x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    if (axis >= xv.rank() || bv.rank() != 1 || bv.dim(0) != xv.dim(axis)) {
        throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match axis " +
                             std::to_string(axis) + " of " + shape_str(xv.shape()));
    }
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < xv.rank(); ++d) {
        inner *= xv.dim(d);
    }
    const std::size_t n = bv.dim(0);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = xv[i] + bv[(i / inner) % n];
    }
    return g.record("add_bias", {x, bias}, std::move(out), [inner, n](BackwardContext& ctx) {
        auto gout = ctx.out_grad();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += gout[i];
        }
        auto gb = ctx.input_grad(1);
        if (!gb.empty()) {
            for (std::size_t i = 0; i < gout.size(); ++i) {
                gb[(i / inner) % n] += gout[i];
            }
        }
    });
}

Var add_trailing(Var x, Var y) {
    Graph& g = same_graph("add_trailing", x, y);
    const Tensor& xv = x.value();
    const Tensor& yv = y.value();
    const Shape& xs = xv.shape();
    const Shape& ys = yv.shape();
    if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size()))) {
        throw DimensionError("add_trailing: " + shape_str(ys) + " is not a trailing shape of " + shape_str(xs));
    }
    const std::size_t m = yv.numel();
    Tensor out(xs);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        out[i] = xv[i] + yv[i % m];
    }
    return g.record("add_trailing", {x, y}, std::move(out), [m](BackwardContext& ctx) {
        auto gout = ctx.out_grad();
        auto gx = ctx.input_grad(0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] += gout[i];
        }
        auto gy = ctx.input_grad(1);
        if (!gy.empty()) {
            for (std::size_t i = 0; i < gout.size(); ++i) {
                gy[i % m] += gout[i];
            }
        }
    });
}

namespace {

// c[m x n] += a[m x k] * b[k x n]; each output accumulates in ascending k.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                c[i * n + j] += av * b[p * n + j];
            }
        }
    }
}

// ga[m x k] += gc[m x n] * b^T
void gemm_nt(const double* gc, const double* b, double* ga, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                acc += gc[i * n + j] * b[p * n + j];
            }
            ga[i * k + p] += acc;
        }
    }
}

// gb[k x n] += a^T * gc[m x n]
void gemm_tn(const double* a, const double* gc, double* gb, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) {
                gb[p * n + j] += av * gc[i * n + j];
            }
        }
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = same_graph("matmul", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out(Shape{m, n});
    gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return g.record("matmul", {a, b}, std::move(out), [m, k, n](BackwardContext& ctx) {
        const double* gc = ctx.out_grad().data();
        auto ga = ctx.input_grad(0);
        if (!ga.empty()) {
            gemm_nt(gc, ctx.input(1).data().data(), ga.data(), m, k, n);
        }
        auto gb = ctx.input_grad(1);
        if (!gb.empty()) {
            gemm_tn(ctx.input(0).data().data(), gc, gb.data(), m, k, n);
        }
    });
}

Var bmm(Var a, Var b) {
    Graph& g = same_graph("bmm", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    }
    const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    Tensor out(Shape{batch, m, n});
    for (std::size_t s = 0; s < batch; ++s) {
        gemm_nn(av.data().data() + s * m * k, bv.data().data() + s * k * n, out.data().data() + s * m * n, m, k, n);
    }
    return g.record("bmm", {a, b}, std::move(out), [batch, m, k, n](BackwardContext& ctx) {
        const double* gc = ctx.out_grad().data();
        auto ga = ctx.input_grad(0);
        auto gb = ctx.input_grad(1);
        const double* ad = ctx.input(0).data().data();
        const double* bd = ctx.input(1).data().data();
        for (std::size_t s = 0; s < batch; ++s) {
            if (!ga.empty()) {
                gemm_nt(gc + s * m * n, bd + s * k * n, ga.data() + s * m * k, m, k, n);
            }
            if (!gb.empty()) {
                gemm_tn(ad + s * m * k, gc + s * m * n, gb.data() + s * k * n, m, k, n);
            }
        }
    });
}

Var transpose(Var a) {
    require_rank("transpose", a.value(), 2);
    return permute(a, {1, 0});
}

Var permute(Var a, std::vector<std::size_t> axes) {
    Graph& g = graph_of("permute", a);
    const Tensor& in = a.value();
    const std::size_t rank = in.rank();
    std::vector<bool> seen(rank, false);
    if (axes.size() != rank) {
        throw DimensionError("permute: axis list length does not match " + shape_str(in.shape()));
    }
    for (std::size_t ax : axes) {
        if (ax >= rank || seen[ax]) {
            throw DimensionError("permute: invalid axis permutation for " + shape_str(in.shape()));
        }
        seen[ax] = true;
    }
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t d = rank; d-- > 1;) {
        in_strides[d - 1] = in_strides[d] * in.dim(d);
    }
    Shape out_shape(rank);
    std::vector<std::size_t> step(rank);
    for (std::size_t d = 0; d < rank; ++d) {
        out_shape[d] = in.dim(axes[d]);
        step[d] = in_strides[axes[d]];
    }
    // source[i] = flat input offset of output element i
    std::vector<std::size_t> source(in.numel());
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t i = 0; i < source.size(); ++i) {
        std::size_t off = 0;
        for (std::size_t d = 0; d < rank; ++d) {
            off += idx[d] * step[d];
        }
        source[i] = off;
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    Tensor out(out_shape);
    for (std::size_t i = 0; i < source.size(); ++i) {
        out[i] = in[source[i]];
    }
    return g.record("permute", {a}, std::move(out), [source = std::move(source)](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        auto gout = ctx.out_grad();
        for (std::size_t i = 0; i < source.size(); ++i) {
            gin[source[i]] += gout[i];
        }
    });
}

Var reshape(Var a, Shape shape) {
    Graph& g = graph_of("reshape", a);
    Tensor out = a.value().reshaped(std::move(shape));
    return g.record("reshape", {a}, std::move(out), [](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        auto gout = ctx.out_grad();
        for (std::size_t i = 0; i < gin.size(); ++i) {
            gin[i] += gout[i];
        }
    });
}

Var sum(Var a) {
    Graph& g = graph_of("sum", a);
    double acc = 0.0;
    for (double v : a.value().data()) {
        acc += v;
    }
    return g.record("sum", {a}, Tensor::scalar(acc), [](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        const double go = ctx.out_grad()[0];
        for (double& v : gin) {
            v += go;
        }
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().numel();
    if (n == 0) {
        throw DimensionError("mean of an empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_axis(Var a, std::size_t axis) {
    Graph& g = graph_of("mean_axis", a);
    const Tensor& in = a.value();
    if (axis >= in.rank() || in.dim(axis) == 0) {
        throw DimensionError("mean_axis: invalid axis " + std::to_string(axis) + " for " + shape_str(in.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= in.dim(d);
    for (std::size_t d = axis + 1; d < in.rank(); ++d) inner *= in.dim(d);
    const std::size_t n = in.dim(axis);
    Shape out_shape = in.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    Tensor out(out_shape);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                acc += in[(o * n + k) * inner + i];
            }
            out[o * inner + i] = acc * inv;
        }
    }
    return g.record("mean_axis", {a}, std::move(out), [outer, inner, n, inv](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        auto gout = ctx.out_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
                for (std::size_t i = 0; i < inner; ++i) {
                    gin[(o * n + k) * inner + i] += gout[o * inner + i] * inv;
                }
            }
        }
    });
}

Activation parse_activation(std::string_view name) {
    if (name == "relu") return Activation::Relu;
    if (name == "gelu") return Activation::Gelu;
    if (name == "softmax" || name == "softmax-lastdim") return Activation::Softmax;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Var activation(Var x, Activation kind) {
    switch (kind) {
        case Activation::Relu: return relu(x);
        case Activation::Gelu: return gelu(x);
        case Activation::Softmax: return softmax(x);
    }
    throw ConfigError("unknown activation kind");
}

Var relu(Var x) {
    return elementwise(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
    // Exact form: 0.5 x (1 + erf(x / sqrt 2)).
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return elementwise(
        "gelu", x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Var softmax(Var x) {
    Graph& g = graph_of("softmax", x);
    const Tensor& in = x.value();
    if (in.rank() == 0 || in.dim(in.rank() - 1) == 0) {
        throw DimensionError("softmax: last dimension must be non-empty, got " + shape_str(in.shape()));
    }
    const std::size_t d = in.dim(in.rank() - 1);
    const std::size_t rows = in.numel() / d;
    Tensor out(in.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data().data() + r * d;
        double* dst = out.data().data() + r * d;
        double mx = src[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, src[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dst[j] = std::exp(src[j] - mx);
            total += dst[j];
        }
        for (std::size_t j = 0; j < d; ++j) dst[j] /= total;
    }
    return g.record("softmax", {x}, std::move(out), [rows, d](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        auto gout = ctx.out_grad();
        const Tensor& y = ctx.output();
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += gout[r * d + j] * y[r * d + j];
            for (std::size_t j = 0; j < d; ++j) gin[r * d + j] += y[r * d + j] * (gout[r * d + j] - dot);
        }
    });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Graph& g = same_graph("layer_norm", x, gamma);
    same_graph("layer_norm", x, beta);
    if (!(eps > 0.0)) {
        throw ConfigError("layer_norm: eps must be positive");
    }
    const Tensor& in = x.value();
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    if (in.rank() == 0 || gv.rank() != 1 || bv.rank() != 1 || gv.dim(0) != in.dim(in.rank() - 1) ||
        bv.dim(0) != gv.dim(0)) {
        throw DimensionError("layer_norm: input " + shape_str(in.shape()) + " with gamma " + shape_str(gv.shape()) +
                             " and beta " + shape_str(bv.shape()));
    }
    const std::size_t d = gv.dim(0);
    const std::size_t rows = in.numel() / d;
    Tensor out(in.shape());
    std::vector<double> xhat(in.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = in.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += src[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (src[j] - mu) * (src[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (src[j] - mu) * is;
            out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
        }
    }
    return g.record("layer_norm", {x, gamma, beta}, std::move(out),
                    [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](BackwardContext& ctx) {
                        auto gout = ctx.out_grad();
                        const Tensor& gv = ctx.input(1);
                        auto gx = ctx.input_grad(0);
                        auto gg = ctx.input_grad(1);
                        auto gb = ctx.input_grad(2);
                        const double inv_d = 1.0 / static_cast<double>(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const std::size_t base = r * d;
                            if (!gx.empty()) {
                                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                                for (std::size_t j = 0; j < d; ++j) {
                                    const double dxh = gout[base + j] * gv[j];
                                    mean_dxh += dxh;
                                    mean_dxh_xh += dxh * xhat[base + j];
                                }
                                mean_dxh *= inv_d;
                                mean_dxh_xh *= inv_d;
                                for (std::size_t j = 0; j < d; ++j) {
                                    const double dxh = gout[base + j] * gv[j];
                                    gx[base + j] += inv_std[r] * (dxh - mean_dxh - xhat[base + j] * mean_dxh_xh);
                                }
                            }
                            for (std::size_t j = 0; j < d; ++j) {
                                if (!gg.empty()) gg[j] += gout[base + j] * xhat[base + j];
                                if (!gb.empty()) gb[j] += gout[base + j];
                            }
                        }
                    });
}

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
    Graph& g = same_graph("conv2d", input, kernel);
    const Tensor& in = input.value();
    const Tensor& kv = kernel.value();
    require_rank("conv2d input", in, 4);
    require_rank("conv2d kernel", kv, 4);
    if (stride == 0) {
        throw ConfigError("conv2d: stride must be >= 1");
    }
    const std::size_t n = in.dim(0), cin = in.dim(1), h = in.dim(2), w = in.dim(3);
    const std::size_t cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
    if (kv.dim(1) != cin) {
        throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) + " does not match input channels of " +
                             shape_str(in.shape()));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding || kh == 0 || kw == 0) {
        throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) + " larger than padded input " +
                             shape_str(in.shape()) + " with padding " + std::to_string(padding));
    }
    const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
    Tensor out(Shape{n, cout, ho, wo});

    // Visits (output position, input position, kernel position) triples in a fixed order.
    auto for_each_tap = [=](auto&& fn) {
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const std::size_t o = ((b * cout + co) * ho + oy) * wo + ox;
                        for (std::size_t ci = 0; ci < cin; ++ci)
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                          static_cast<std::ptrdiff_t>(padding);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                              static_cast<std::ptrdiff_t>(padding);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                    const std::size_t i = ((b * cin + ci) * h + static_cast<std::size_t>(iy)) * w +
                                                          static_cast<std::size_t>(ix);
                                    const std::size_t k = ((co * cin + ci) * kh + ky) * kw + kx;
                                    fn(o, i, k);
                                }
                            }
                    }
    };

    for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) { out[o] += in[i] * kv[k]; });
    return g.record("conv2d", {input, kernel}, std::move(out), [for_each_tap](BackwardContext& ctx) {
        auto gout = ctx.out_grad();
        auto gi = ctx.input_grad(0);
        auto gk = ctx.input_grad(1);
        const Tensor& in = ctx.input(0);
        const Tensor& kv = ctx.input(1);
        for_each_tap([&](std::size_t o, std::size_t i, std::size_t k) {
            if (!gi.empty()) gi[i] += gout[o] * kv[k];
            if (!gk.empty()) gk[k] += gout[o] * in[i];
        });
    });
}

Var normalize_rows(Var x) {
    Graph& g = graph_of("normalize_rows", x);
    const Tensor& in = x.value();
    require_rank("normalize_rows", in, 2);
    const std::size_t rows = in.dim(0), d = in.dim(1);
    constexpr double min_norm = 1e-12;
    Tensor out(in.shape());
    std::vector<double> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += in[r * d + j] * in[r * d + j];
        norms[r] = std::sqrt(ss);
        const double denom = std::max(norms[r], min_norm);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[r * d + j] / denom;
    }
    return g.record("normalize_rows", {x}, std::move(out), [rows, d, norms = std::move(norms)](BackwardContext& ctx) {
        auto gin = ctx.input_grad(0);
        auto gout = ctx.out_grad();
        const Tensor& y = ctx.output();
        for (std::size_t r = 0; r < rows; ++r) {
            if (norms[r] <= min_norm) {
                for (std::size_t j = 0; j < d; ++j) gin[r * d + j] += gout[r * d + j] / min_norm;
                continue;
            }
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += gout[r * d + j] * y[r * d + j];
            for (std::size_t j = 0; j < d; ++j) gin[r * d + j] += (gout[r * d + j] - y[r * d + j] * dot) / norms[r];
        }
    });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels, Reduction reduction) {
    Graph& g = graph_of("softmax_cross_entropy", logits);
    const Tensor& lv = logits.value();
    require_rank("softmax_cross_entropy", lv, 2);
    const std::size_t batch = lv.dim(0), classes = lv.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_str(lv.shape()));
    }
    if (batch == 0 || classes == 0) {
        throw DimensionError("softmax_cross_entropy: empty logits " + shape_str(lv.shape()));
    }
    for (std::size_t i = 0; i < batch; ++i) {
        if (labels[i] >= classes) {
            throw InputError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at position " +
                             std::to_string(i) + " out of range [0, " + std::to_string(classes) + ")");
        }
    }
    std::vector<double> probs(lv.numel());
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double* row = lv.data().data() + i * classes;
        double mx = row[0];
        for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < classes; ++c) probs[i * classes + c] = std::exp(row[c] - lse);
        total += lse - row[labels[i]];
    }
    const double factor = reduction == Reduction::Mean ? 1.0 / static_cast<double>(batch) : 1.0;
    std::vector<std::size_t> targets(labels.begin(), labels.end());
    return g.record("softmax_cross_entropy", {logits}, Tensor::scalar(total * factor),
                    [probs = std::move(probs), targets = std::move(targets), classes, factor](BackwardContext& ctx) {
                        auto gin = ctx.input_grad(0);
                        const double go = ctx.out_grad()[0] * factor;
                        for (std::size_t i = 0; i < targets.size(); ++i) {
                            for (std::size_t c = 0; c < classes; ++c) {
                                const double onehot = c == targets[i] ? 1.0 : 0.0;
                                gin[i * classes + c] += go * (probs[i * classes + c] - onehot);
                            }
                        }
                    });
}

}  // namespace gps
