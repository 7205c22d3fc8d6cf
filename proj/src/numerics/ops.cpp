#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mmpkd/tensor.hpp"

namespace mmpkd::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat cmap(const double* p, std::size_t r, std::size_t c) {
    return ConstMapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MapMat mmap(double* p, std::size_t r, std::size_t c) {
    return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// Number of leading repetitions when `b` is `a` or a trailing suffix of `a`.
std::size_t suffix_repeats(const char* op, const Shape& a, const Shape& b) {
    if (b.size() > a.size()) mismatch(op, a, b);
    if (!std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()))) mismatch(op, a, b);
    return shape_numel(a) / shape_numel(b);
}

Node& parent(Node& out, std::size_t i) { return *out.parents[i]; }

}  // namespace

double sigmoid_scalar(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) mismatch("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    mmap(out.data(), m, n).noalias() = cmap(a.data().data(), m, k) * cmap(b.data().data(), k, n);
    return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        auto g = cmap(o.grad.data(), m, n);
        if (pa.requires_grad) mmap(pa.ensure_grad().data(), m, k).noalias() += g * cmap(pb.data.data(), k, n).transpose();
        if (pb.requires_grad) mmap(pb.ensure_grad().data(), k, n).noalias() += cmap(pa.data.data(), m, k).transpose() * g;
    });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) mismatch("bmm", a.shape(), b.shape());
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    if (bk != k) mismatch("bmm", a.shape(), b.shape());
    std::vector<double> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        auto A = cmap(a.data().data() + i * m * k, m, k);
        auto C = mmap(out.data() + i * m * n, m, n);
        if (transpose_b) {
            C.noalias() = A * cmap(b.data().data() + i * n * k, n, k).transpose();
        } else {
            C.noalias() = A * cmap(b.data().data() + i * k * n, k, n);
        }
    }
    return Tensor::make_result({batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, transpose_b](Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        double* ga = pa.requires_grad ? pa.ensure_grad().data() : nullptr;
        double* gb = pb.requires_grad ? pb.ensure_grad().data() : nullptr;
        for (std::size_t i = 0; i < batch; ++i) {
            auto G = cmap(o.grad.data() + i * m * n, m, n);
            auto A = cmap(pa.data.data() + i * m * k, m, k);
            if (transpose_b) {
                auto B = cmap(pb.data.data() + i * n * k, n, k);
                if (ga) mmap(ga + i * m * k, m, k).noalias() += G * B;
                if (gb) mmap(gb + i * n * k, n, k).noalias() += G.transpose() * A;
            } else {
                auto B = cmap(pb.data.data() + i * k * n, k, n);
                if (ga) mmap(ga + i * m * k, m, k).noalias() += G * B.transpose();
                if (gb) mmap(gb + i * k * n, k, n).noalias() += A.transpose() * G;
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const std::size_t reps = suffix_repeats("add", a.shape(), b.shape());
    const std::size_t inner = b.numel();
    std::vector<double> out(a.data().begin(), a.data().end());
    const auto bd = b.data();
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < inner; ++j) out[r * inner + j] += bd[j];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [reps, inner](Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < inner; ++j) g[j] += o.grad[r * inner + j];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    const std::size_t reps = suffix_repeats("mul", a.shape(), b.shape());
    const std::size_t inner = b.numel();
    std::vector<double> out(a.numel());
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t j = 0; j < inner; ++j) out[r * inner + j] = ad[r * inner + j] * bd[j];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [reps, inner](Node& o) {
        Node& pa = parent(o, 0);
        Node& pb = parent(o, 1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < inner; ++j) g[r * inner + j] += o.grad[r * inner + j] * pb.data[j];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t j = 0; j < inner; ++j) g[j] += o.grad[r * inner + j] * pa.data[r * inner + j];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= c;
    return Tensor::make_result(a.shape(), std::move(out), {a}, [c](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * o.grad[i];
    });
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(xd[i]);
    return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& o) {
        Node& px = parent(o, 0);
        auto& g = px.ensure_grad();
        constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = px.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += o.grad[i] * (cdf + v * pdf);
        }
    });
}

Tensor sigmoid(const Tensor& z) {
    std::vector<double> out(z.numel());
    const auto zd = z.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(zd[i]);
    return Tensor::make_result(z.shape(), std::move(out), {z}, [](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.data[i] * (1.0 - o.data[i]);
    });
}

Tensor softmax(const Tensor& x) {
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(in, in + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += (y[c] = std::exp(in[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) y[c] /= s;
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [rows, cols](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * cols;
            const double* dy = o.grad.data() + r * cols;
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
            for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: epsilon must be positive");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d}) mismatch("layer_norm(gamma)", x.shape(), gamma.shape());
    if (beta.shape() != Shape{d}) mismatch("layer_norm(beta)", x.shape(), beta.shape());
    const std::size_t rows = x.numel() / d;
    std::vector<double> out(x.numel());
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    const auto xd = x.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xd.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += in[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (in[c] - mu) * rs;
            (*xhat)[r * d + c] = h;
            out[r * d + c] = h * gd[c] + bd[c];
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta}, [rows, d, xhat, rstd](Node& o) {
        Node& px = parent(o, 0);
        Node& pg = parent(o, 1);
        Node& pb = parent(o, 2);
        const auto inv_d = 1.0 / static_cast<double>(d);
        if (pg.requires_grad) {
            auto& g = pg.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < d; ++c) g[c] += o.grad[r * d + c] * (*xhat)[r * d + c];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < d; ++c) g[c] += o.grad[r * d + c];
        }
        if (px.requires_grad) {
            auto& g = px.ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = o.grad[r * d + c] * pg.data[c];
                    m1 += dh;
                    m2 += dh * (*xhat)[r * d + c];
                }
                m1 *= inv_d;
                m2 *= inv_d;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dh = o.grad[r * d + c] * pg.data[c];
                    g[r * d + c] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + c] * m2);
                }
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) mismatch("reshape", x.shape(), shape);
    std::vector<double> out(x.data().begin(), x.data().end());
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

namespace {

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Permutations keep a trailing run of axes in place; those form contiguous
// blocks. Returns the source offset of every output block and the block size.
std::pair<std::vector<std::size_t>, std::size_t> permute_blocks(const Shape& in_shape,
                                                                const std::vector<std::size_t>& axes) {
    const auto in_st = strides_of(in_shape);
    std::size_t keep = axes.size();
    while (keep > 0 && axes[keep - 1] == keep - 1) --keep;
    std::size_t block = 1;
    for (std::size_t i = keep; i < axes.size(); ++i) block *= in_shape[i];
    std::vector<std::size_t> dims(keep), strides(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        dims[i] = in_shape[axes[i]];
        strides[i] = in_st[axes[i]];
    }
    const std::size_t n = shape_numel(in_shape) / block;
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(keep, 0);
    std::size_t off = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
        src[flat] = off;
        for (std::size_t i = keep; i-- > 0;) {
            off += strides[i];
            if (++idx[i] < dims[i]) break;
            off -= strides[i] * dims[i];
            idx[i] = 0;
        }
    }
    return {std::move(src), block};
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    if (axes.size() != x.rank()) {
        throw ShapeError("permute: axes count " + std::to_string(axes.size()) + " does not match shape " +
                         shape_str(x.shape()));
    }
    std::vector<bool> seen(axes.size(), false);
    for (auto a : axes) {
        if (a >= axes.size() || seen[a]) throw ShapeError("permute: invalid axes for shape " + shape_str(x.shape()));
        seen[a] = true;
    }
    Shape out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.dim(axes[i]);
    auto [offsets, block] = permute_blocks(x.shape(), axes);
    auto src = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t b = 0; b < src->size(); ++b) std::copy_n(xd.data() + (*src)[b], block, out.data() + b * block);
    return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [src, block = block](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t b = 0; b < src->size(); ++b) {
            double* dst = g.data() + (*src)[b];
            const double* gi = o.grad.data() + b * block;
            for (std::size_t j = 0; j < block; ++j) dst[j] += gi[j];
        }
    });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected 2-D tensor, got " + shape_str(x.shape()));
    return permute(x, {1, 0});
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for shape " + shape_str(x.shape()));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t full = x.dim(axis), len = end - begin;
    Shape shape = x.shape();
    shape[axis] = len;
    std::vector<double> out(outer * len * inner);
    const auto xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(xd.data() + (o * full + begin) * inner, len * inner, out.data() + o * len * inner);
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [outer, inner, full, begin, len](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t r = 0; r < outer; ++r)
            for (std::size_t j = 0; j < len * inner; ++j) g[(r * full + begin) * inner + j] += o.grad[r * len * inner + j];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range for shape " + shape_str(ref));
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != ref.size()) mismatch("concat", ref, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != ref[i]) mismatch("concat", ref, s);
        total += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
    for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
    Shape shape = ref;
    shape[axis] = total;
    std::vector<double> out(outer * total * inner);
    std::vector<std::size_t> offsets, lens;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.dim(axis);
        offsets.push_back(off);
        lens.push_back(len);
        const auto pd = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pd.data() + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
        off += len;
    }
    return Tensor::make_result(std::move(shape), std::move(out), parts, [outer, inner, total, offsets, lens](Node& o) {
        for (std::size_t k = 0; k < o.parents.size(); ++k) {
            Node& p = *o.parents[k];
            if (!p.requires_grad) continue;
            auto& g = p.ensure_grad();
            const std::size_t len = lens[k];
            for (std::size_t r = 0; r < outer; ++r)
                for (std::size_t j = 0; j < len * inner; ++j)
                    g[r * len * inner + j] += o.grad[(r * total + offsets[k]) * inner + j];
        }
    });
}

Tensor broadcast_to(const Tensor& x, Shape shape) {
    const Shape& in = x.shape();
    if (in.size() > shape.size()) mismatch("broadcast_to", in, shape);
    const std::size_t lead = shape.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i)
        if (in[i] != 1 && in[i] != shape[lead + i]) mismatch("broadcast_to", in, shape);
    const auto out_st = strides_of(shape);
    const auto in_st = strides_of(in);
    const std::size_t n = shape_numel(shape);
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t rem = flat, s = 0;
        for (std::size_t i = 0; i < shape.size(); ++i) {
            const std::size_t coord = rem / out_st[i];
            rem %= out_st[i];
            if (i >= lead && in[i - lead] != 1) s += coord * in_st[i - lead];
        }
        (*src)[flat] = s;
    }
    std::vector<double> out(n);
    const auto xd = x.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src)[i]];
    return Tensor::make_result(std::move(shape), std::move(out), {x}, [src](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*src)[i]] += o.grad[i];
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor::make_result({1}, {s}, {x}, [](Node& o) {
        auto& g = parent(o, 0).ensure_grad();
        for (auto& v : g) v += o.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor binary_cross_entropy(const Tensor& p, const Tensor& target) {
    if (p.shape() != target.shape()) mismatch("binary_cross_entropy", p.shape(), target.shape());
    const auto pd = p.data();
    const auto td = target.data();
    const std::size_t n = p.numel();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double t = td[i];
        if (!(t >= 0.0 && t <= 1.0)) {
            throw std::invalid_argument("binary_cross_entropy: target " + std::to_string(t) + " at index " +
                                        std::to_string(i) + " outside [0, 1]");
        }
        const double q = std::clamp(pd[i], kProbEps, 1.0 - kProbEps);
        total -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return Tensor::make_result({1}, {total * inv_n}, {p, target}, [inv_n](Node& o) {
        Node& pp = parent(o, 0);
        const Node& pt = parent(o, 1);
        if (!pp.requires_grad) return;
        auto& g = pp.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double raw = pp.data[i];
            if (raw < kProbEps || raw > 1.0 - kProbEps) continue;  // clamped: flat
            const double t = pt.data[i];
            g[i] += o.grad[0] * inv_n * (-t / raw + (1.0 - t) / (1.0 - raw));
        }
    });
}

}  // namespace mmpkd::nn
