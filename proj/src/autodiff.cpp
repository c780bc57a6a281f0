#include "gcl/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gcl/errors.hpp"
#include "gcl/rng.hpp"

namespace gcl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ContractError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                            to_string(b.shape()));
}

std::size_t rows_of(const Tensor& t) { return t.shape.empty() ? 1 : t.shape[0]; }
std::size_t cols_of(const Tensor& t) { return t.size() / std::max<std::size_t>(rows_of(t), 1); }

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

struct ConvGeometry {
    std::size_t channels, height, width, kernel, stride, pad, out_h, out_w;
};

ConvGeometry make_geometry(std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                           std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ContractError("conv: stride must be positive");
    if (h + 2 * pad < k || w + 2 * pad < k) throw ContractError("conv: kernel larger than padded input");
    return {c, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
}

// image [C,H,W] -> cols [C*k*k, out_h*out_w]
void im2col(const double* image, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.height) &&
                                            ix < static_cast<std::ptrdiff_t>(g.width);
                        row[oy * g.out_w + ox] =
                            inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                                           static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

// Adjoint of im2col: accumulates cols back into image [C,H,W].
void col2im(const double* cols, const ConvGeometry& g, double* image) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ky = 0; ky < g.kernel; ++ky)
            for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
                        image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                              static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
                    }
                }
            }
}

double similarity_of(std::span<const double> a, std::span<const double> b, Similarity kind,
                     double& norm_a, double& norm_b) {
    const double dot = ConstMapVec(a.data(), static_cast<Eigen::Index>(a.size()))
                           .dot(ConstMapVec(b.data(), static_cast<Eigen::Index>(b.size())));
    if (kind == Similarity::dot) return dot;
    norm_a = ConstMapVec(a.data(), static_cast<Eigen::Index>(a.size())).norm();
    norm_b = ConstMapVec(b.data(), static_cast<Eigen::Index>(b.size())).norm();
    if (norm_a == 0.0 || norm_b == 0.0)
        throw DegenerateEmbeddingError("cosine similarity of a zero-norm embedding");
    return dot / (norm_a * norm_b);
}

// Accumulates coeff * ds/da into ga and coeff * ds/db into gb.
void similarity_backward(std::span<const double> a, std::span<const double> b, Similarity kind,
                         double s, double norm_a, double norm_b, double coeff, double* ga, double* gb) {
    const std::size_t n = a.size();
    if (kind == Similarity::dot) {
        for (std::size_t k = 0; k < n; ++k) {
            if (ga) ga[k] += coeff * b[k];
            if (gb) gb[k] += coeff * a[k];
        }
        return;
    }
    const double inv_ab = 1.0 / (norm_a * norm_b);
    const double sa = s / (norm_a * norm_a);
    const double sb = s / (norm_b * norm_b);
    for (std::size_t k = 0; k < n; ++k) {
        if (ga) ga[k] += coeff * (b[k] * inv_ab - sa * a[k]);
        if (gb) gb[k] += coeff * (a[k] * inv_ab - sb * b[k]);
    }
}

} // namespace

const Tensor& Var::value() const { return tape_->value(id_); }

double Var::item() const {
    const auto& v = value();
    if (v.size() != 1) throw ContractError("item() on non-scalar of shape " + to_string(v.shape));
    return v[0];
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, true, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
    if (root.value().size() != 1) throw ContractError("backward() needs a scalar root");
    for (auto& n : nodes_) n.grad = Tensor();
    nodes_[root.id()].grad = Tensor(root.shape(), 1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
    }
}

Tensor Tape::grad(Var v) const {
    const auto& n = nodes_[v.id()];
    return n.grad.empty() ? Tensor(n.value.shape, 0.0) : n.grad;
}

Tensor& Tape::grad_slot(Var v) {
    auto& n = nodes_[v.id()];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape, 0.0);
    return n.grad;
}

namespace ops {

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    add_into(out, b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) add_into(t.grad_slot(a), g);
        if (t.requires_grad(b)) add_into(t.grad_slot(b), g);
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) add_into(t.grad_slot(a), g);
        if (t.requires_grad(b)) {
            auto& gb = t.grad_slot(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) {
            auto& ga = t.grad_slot(a);
            const auto& bv = b.value();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_slot(b);
            const auto& av = a.value();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.data) v *= factor;
    return a.tape().record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
}

Var reshape(Var a, Shape shape) {
    if (numel(shape) != a.value().size())
        throw ContractError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
    Tensor out(std::move(shape), a.value().data);
    return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        add_into(t.grad_slot(a), g);
    });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        const auto& av = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] > 0.0) ga[i] += g[i];
    });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Tensor y = out;
    return a.tape().record(std::move(out), {a}, [a, y = std::move(y)](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

Var dropout(Var a, double p, std::uint64_t seed, bool training) {
    if (!training || p <= 0.0) return a;
    if (p >= 1.0) throw ContractError("dropout probability must be < 1");
    Rng rng(seed);
    Tensor mask(a.shape());
    const double keep_scale = 1.0 / (1.0 - p);
    for (auto& m : mask.data) m = rng.bernoulli(p) ? 0.0 : keep_scale;
    return mul(a, a.tape().constant(std::move(mask)));
}

Var linear(Var x, Var weight, Var bias) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[1] || bias.value().size() != wv.shape[0])
        throw ContractError("linear: incompatible shapes x" + to_string(xv.shape) + " W" + to_string(wv.shape) +
                            " b" + to_string(bias.shape()));
    const auto batch = static_cast<Eigen::Index>(xv.shape[0]);
    const auto in = static_cast<Eigen::Index>(wv.shape[1]);
    const auto outn = static_cast<Eigen::Index>(wv.shape[0]);
    Tensor out({xv.shape[0], wv.shape[0]});
    MapMat y(out.data.data(), batch, outn);
    y.noalias() = ConstMapMat(xv.data.data(), batch, in) * ConstMapMat(wv.data.data(), outn, in).transpose();
    y.rowwise() += ConstMapVec(bias.value().data.data(), outn).transpose();
    return x.tape().record(std::move(out), {x, weight, bias},
                           [x, weight, bias, batch, in, outn](Tape& t, const Tensor& g) {
                               ConstMapMat gy(g.data.data(), batch, outn);
                               if (t.requires_grad(x)) {
                                   MapMat gx(t.grad_slot(x).data.data(), batch, in);
                                   gx.noalias() += gy * ConstMapMat(weight.value().data.data(), outn, in);
                               }
                               if (t.requires_grad(weight)) {
                                   MapMat gw(t.grad_slot(weight).data.data(), outn, in);
                                   gw.noalias() += gy.transpose() * ConstMapMat(x.value().data.data(), batch, in);
                               }
                               if (t.requires_grad(bias)) {
                                   MapVec gb(t.grad_slot(bias).data.data(), outn);
                                   gb += gy.colwise().sum().transpose();
                               }
                           });
}

Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.shape[1] != xv.shape[1] || wv.shape[2] != wv.shape[3] ||
        bias.value().size() != wv.shape[0])
        throw ContractError("conv2d: incompatible shapes x" + to_string(xv.shape) + " W" + to_string(wv.shape));
    const std::size_t batch = xv.shape[0];
    const auto g = make_geometry(xv.shape[1], xv.shape[2], xv.shape[3], wv.shape[2], stride, pad);
    const std::size_t out_c = wv.shape[0];
    const std::size_t patch = g.channels * g.kernel * g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t in_stride = g.channels * g.height * g.width;

    Tensor out({batch, out_c, g.out_h, g.out_w});
    std::vector<double> cols(patch * plane);
    ConstMapMat wmat(wv.data.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(patch));
    ConstMapVec bvec(bias.value().data.data(), static_cast<Eigen::Index>(out_c));
    for (std::size_t b = 0; b < batch; ++b) {
        im2col(xv.data.data() + b * in_stride, g, cols.data());
        MapMat y(out.data.data() + b * out_c * plane, static_cast<Eigen::Index>(out_c),
                 static_cast<Eigen::Index>(plane));
        y.noalias() = wmat * ConstMapMat(cols.data(), static_cast<Eigen::Index>(patch),
                                         static_cast<Eigen::Index>(plane));
        y.colwise() += bvec;
    }
    return x.tape().record(
        std::move(out), {x, weight, bias},
        [x, weight, bias, g, batch, out_c, patch, plane, in_stride](Tape& t, const Tensor& gy) {
            const auto P = static_cast<Eigen::Index>(patch);
            const auto Q = static_cast<Eigen::Index>(plane);
            const auto O = static_cast<Eigen::Index>(out_c);
            std::vector<double> cols(patch * plane);
            std::vector<double> gcols(patch * plane);
            ConstMapMat wmat(weight.value().data.data(), O, P);
            for (std::size_t b = 0; b < batch; ++b) {
                ConstMapMat gyb(gy.data.data() + b * out_c * plane, O, Q);
                if (t.requires_grad(weight)) {
                    im2col(x.value().data.data() + b * in_stride, g, cols.data());
                    MapMat gw(t.grad_slot(weight).data.data(), O, P);
                    gw.noalias() += gyb * ConstMapMat(cols.data(), P, Q).transpose();
                }
                if (t.requires_grad(bias)) {
                    MapVec gb(t.grad_slot(bias).data.data(), O);
                    gb += gyb.rowwise().sum();
                }
                if (t.requires_grad(x)) {
                    MapMat gc(gcols.data(), P, Q);
                    gc.noalias() = wmat.transpose() * gyb;
                    col2im(gcols.data(), g, t.grad_slot(x).data.data() + b * in_stride);
                }
            }
        });
}

Var conv_transpose2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad, std::size_t out_h,
                     std::size_t out_w) {
    const auto& xv = x.value();
    const auto& wv = weight.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.shape[0] != xv.shape[1] || wv.shape[2] != wv.shape[3] ||
        bias.value().size() != wv.shape[1])
        throw ContractError("conv_transpose2d: incompatible shapes x" + to_string(xv.shape) + " W" +
                            to_string(wv.shape));
    const std::size_t batch = xv.shape[0];
    const std::size_t in_c = wv.shape[0];
    const std::size_t out_c = wv.shape[1];
    // Geometry of the equivalent forward convolution from the output image.
    const auto g = make_geometry(out_c, out_h, out_w, wv.shape[2], stride, pad);
    if (g.out_h != xv.shape[2] || g.out_w != xv.shape[3])
        throw ContractError("conv_transpose2d: output size " + std::to_string(out_h) + "x" +
                            std::to_string(out_w) + " inconsistent with input " + to_string(xv.shape));
    const std::size_t patch = out_c * g.kernel * g.kernel;
    const std::size_t plane = g.out_h * g.out_w;
    const std::size_t out_stride = out_c * out_h * out_w;
    const auto P = static_cast<Eigen::Index>(patch);
    const auto Q = static_cast<Eigen::Index>(plane);
    const auto I = static_cast<Eigen::Index>(in_c);

    Tensor out({batch, out_c, out_h, out_w});
    std::vector<double> cols(patch * plane);
    ConstMapMat wmat(wv.data.data(), I, P);
    for (std::size_t b = 0; b < batch; ++b) {
        MapMat c(cols.data(), P, Q);
        c.noalias() = wmat.transpose() * ConstMapMat(xv.data.data() + b * in_c * plane, I, Q);
        double* y = out.data.data() + b * out_stride;
        col2im(cols.data(), g, y);
        for (std::size_t oc = 0; oc < out_c; ++oc)
            for (std::size_t k = 0; k < out_h * out_w; ++k) y[oc * out_h * out_w + k] += bias.value()[oc];
    }
    return x.tape().record(
        std::move(out), {x, weight, bias},
        [x, weight, bias, g, batch, in_c, out_c, plane, patch, out_stride, P, Q, I](Tape& t, const Tensor& gy) {
            std::vector<double> gcols(patch * plane);
            ConstMapMat wmat(weight.value().data.data(), I, P);
            const std::size_t spatial = g.height * g.width;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gyb = gy.data.data() + b * out_stride;
                if (t.requires_grad(bias)) {
                    auto& gb = t.grad_slot(bias);
                    for (std::size_t oc = 0; oc < out_c; ++oc) {
                        double acc = 0.0;
                        for (std::size_t k = 0; k < spatial; ++k) acc += gyb[oc * spatial + k];
                        gb[oc] += acc;
                    }
                }
                if (!t.requires_grad(x) && !t.requires_grad(weight)) continue;
                im2col(gyb, g, gcols.data());
                ConstMapMat gc(gcols.data(), P, Q);
                if (t.requires_grad(x)) {
                    MapMat gx(t.grad_slot(x).data.data() + b * in_c * plane, I, Q);
                    gx.noalias() += wmat * gc;
                }
                if (t.requires_grad(weight)) {
                    MapMat gw(t.grad_slot(weight).data.data(), I, P);
                    gw.noalias() += ConstMapMat(x.value().data.data() + b * in_c * plane, I, Q) * gc.transpose();
                }
            }
        });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const auto& av = a.value();
    const std::size_t rows = rows_of(av);
    if (begin > end || end > rows) throw ContractError("slice_rows: range out of bounds");
    const std::size_t width = cols_of(av);
    Shape shape = av.shape;
    shape[0] = end - begin;
    Tensor out(std::move(shape),
               std::vector<double>(av.data.begin() + static_cast<std::ptrdiff_t>(begin * width),
                                   av.data.begin() + static_cast<std::ptrdiff_t>(end * width)));
    return a.tape().record(std::move(out), {a}, [a, begin, width](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * width + i] += g[i];
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Tape& tape = parts.front().tape();
    Shape shape = parts.front().shape();
    const std::size_t width = cols_of(parts.front().value());
    std::size_t rows = 0;
    std::vector<double> data;
    for (const auto& p : parts) {
        if (cols_of(p.value()) != width) throw ContractError("concat_rows: row width mismatch");
        rows += rows_of(p.value());
        data.insert(data.end(), p.value().data.begin(), p.value().data.end());
    }
    shape[0] = rows;
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape.record(Tensor(std::move(shape), std::move(data)), parts, [inputs](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (const auto& p : inputs) {
            const std::size_t n = p.value().size();
            if (t.requires_grad(p)) {
                auto& gp = t.grad_slot(p);
                for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
            }
            offset += n;
        }
    });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
    const auto& tv = table.value();
    const std::size_t rows = rows_of(tv);
    const std::size_t width = cols_of(tv);
    Tensor out({indices.size(), width});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows) throw ContractError("gather_rows: index out of range");
        std::copy_n(tv.data.begin() + static_cast<std::ptrdiff_t>(indices[i] * width), width,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return table.tape().record(std::move(out), {table}, [table, idx, width](Tape& t, const Tensor& g) {
        auto& gt = t.grad_slot(table);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t k = 0; k < width; ++k) gt[idx[i] * width + k] += g[i * width + k];
    });
}

Var mean_rows(Var a) {
    const auto& av = a.value();
    const std::size_t rows = rows_of(av);
    const std::size_t width = cols_of(av);
    if (rows == 0) throw ContractError("mean_rows: empty input");
    Tensor out({1, width});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t k = 0; k < width; ++k) out[k] += av[r * width + k];
    for (auto& v : out.data) v /= static_cast<double>(rows);
    return a.tape().record(std::move(out), {a}, [a, rows, width](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        const double inv = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < width; ++k) ga[r * width + k] += g[k] * inv;
    });
}

Var sum(Var a) {
    double acc = 0.0;
    for (double v : a.value().data) acc += v;
    return a.tape().record(Tensor({1}, {acc}), {a}, [a](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        for (auto& v : ga.data) v += g[0];
    });
}

Var mean_squared_error(Var a, Var b) {
    require_same_shape(a, b, "mean_squared_error");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.empty()) throw ContractError("mean_squared_error: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        acc += d * d;
    }
    const double n = static_cast<double>(av.size());
    return a.tape().record(Tensor({1}, {acc / n}), {a, b}, [a, b, n](Tape& t, const Tensor& g) {
        const auto& av = a.value();
        const auto& bv = b.value();
        const double c = 2.0 * g[0] / n;
        if (t.requires_grad(a)) {
            auto& ga = t.grad_slot(a);
            for (std::size_t i = 0; i < av.size(); ++i) ga[i] += c * (av[i] - bv[i]);
        }
        if (t.requires_grad(b)) {
            auto& gb = t.grad_slot(b);
            for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= c * (av[i] - bv[i]);
        }
    });
}

Var l1_row_mean(Var a) {
    const auto& av = a.value();
    const std::size_t rows = rows_of(av);
    if (rows == 0) throw ContractError("l1_row_mean: empty input");
    double acc = 0.0;
    for (double v : av.data) acc += std::abs(v);
    const double n = static_cast<double>(rows);
    return a.tape().record(Tensor({1}, {acc / n}), {a}, [a, n](Tape& t, const Tensor& g) {
        auto& ga = t.grad_slot(a);
        const auto& av = a.value();
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
            ga[i] += g[0] * s / n;
        }
    });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
    const auto& lv = logits.value();
    if (lv.rank() != 2 || lv.shape[0] != labels.size() || labels.empty())
        throw ContractError("softmax_cross_entropy: logits " + to_string(lv.shape) + " vs " +
                            std::to_string(labels.size()) + " labels");
    const std::size_t rows = lv.shape[0];
    const std::size_t classes = lv.shape[1];
    Tensor probs(lv.shape);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (labels[r] >= classes) throw ContractError("softmax_cross_entropy: label out of range");
        const double* z = lv.data.data() + r * classes;
        const double zmax = *std::max_element(z, z + classes);
        double denom = 0.0;
        for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - zmax);
        for (std::size_t c = 0; c < classes; ++c) probs[r * classes + c] = std::exp(z[c] - zmax) / denom;
        loss += std::log(denom) + zmax - z[labels[r]];
    }
    const double n = static_cast<double>(rows);
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    return logits.tape().record(Tensor({1}, {loss / n}), {logits},
                                [logits, probs, lab, classes, n](Tape& t, const Tensor& g) {
                                    auto& gl = t.grad_slot(logits);
                                    for (std::size_t r = 0; r < lab.size(); ++r)
                                        for (std::size_t c = 0; c < classes; ++c) {
                                            const double target = c == lab[r] ? 1.0 : 0.0;
                                            gl[r * classes + c] += g[0] * (probs[r * classes + c] - target) / n;
                                        }
                                });
}

Var info_nce(Var anchors, Var positives, Var negatives, std::size_t per_anchor_pos, std::size_t per_anchor_neg,
             double tau, Similarity similarity) {
    if (!(tau > 0.0)) throw ConfigError("contrastive temperature must be > 0");
    if (per_anchor_pos == 0 || per_anchor_neg == 0)
        throw ContractError("contrastive loss needs at least one positive and one negative");
    const auto& av = anchors.value();
    const auto& pv = positives.value();
    const auto& nv = negatives.value();
    const std::size_t batch = rows_of(av);
    const std::size_t dim = cols_of(av);
    if (rows_of(pv) != batch * per_anchor_pos || rows_of(nv) != batch * per_anchor_neg || cols_of(pv) != dim ||
        cols_of(nv) != dim || batch == 0)
        throw ContractError("info_nce: inconsistent anchor/positive/negative shapes");

    struct Cache {
        std::vector<double> s_pos, s_neg, norm_anchor, norm_pos, norm_neg;
    } cache;
    cache.s_pos.resize(batch * per_anchor_pos);
    cache.s_neg.resize(batch * per_anchor_neg);
    cache.norm_anchor.assign(batch, 1.0);
    cache.norm_pos.assign(batch * per_anchor_pos, 1.0);
    cache.norm_neg.assign(batch * per_anchor_neg, 1.0);

    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        for (std::size_t m = 0; m < per_anchor_neg; ++m) {
            const std::size_t r = i * per_anchor_neg + m;
            cache.s_neg[r] = similarity_of(av.row(i), nv.row(r), similarity, cache.norm_anchor[i], cache.norm_neg[r]);
        }
        for (std::size_t p = 0; p < per_anchor_pos; ++p) {
            const std::size_t r = i * per_anchor_pos + p;
            cache.s_pos[r] = similarity_of(av.row(i), pv.row(r), similarity, cache.norm_anchor[i], cache.norm_pos[r]);
            const double z0 = cache.s_pos[r] / tau;
            double zmax = z0;
            for (std::size_t m = 0; m < per_anchor_neg; ++m)
                zmax = std::max(zmax, cache.s_neg[i * per_anchor_neg + m] / tau);
            double denom = std::exp(z0 - zmax);
            for (std::size_t m = 0; m < per_anchor_neg; ++m)
                denom += std::exp(cache.s_neg[i * per_anchor_neg + m] / tau - zmax);
            loss += std::log(denom) + zmax - z0;
        }
    }
    const double count = static_cast<double>(batch * per_anchor_pos);
    return anchors.tape().record(
        Tensor({1}, {loss / count}), {anchors, positives, negatives},
        [anchors, positives, negatives, per_anchor_pos, per_anchor_neg, tau, similarity, cache, batch, dim,
         count](Tape& t, const Tensor& g) {
            const auto& av = anchors.value();
            const auto& pv = positives.value();
            const auto& nv = negatives.value();
            double* ga = t.requires_grad(anchors) ? t.grad_slot(anchors).data.data() : nullptr;
            double* gp = t.requires_grad(positives) ? t.grad_slot(positives).data.data() : nullptr;
            double* gn = t.requires_grad(negatives) ? t.grad_slot(negatives).data.data() : nullptr;
            std::vector<double> weight_neg(per_anchor_neg);
            for (std::size_t i = 0; i < batch; ++i) {
                std::fill(weight_neg.begin(), weight_neg.end(), 0.0);
                for (std::size_t p = 0; p < per_anchor_pos; ++p) {
                    const std::size_t r = i * per_anchor_pos + p;
                    const double z0 = cache.s_pos[r] / tau;
                    double zmax = z0;
                    for (std::size_t m = 0; m < per_anchor_neg; ++m)
                        zmax = std::max(zmax, cache.s_neg[i * per_anchor_neg + m] / tau);
                    double denom = std::exp(z0 - zmax);
                    for (std::size_t m = 0; m < per_anchor_neg; ++m)
                        denom += std::exp(cache.s_neg[i * per_anchor_neg + m] / tau - zmax);
                    const double p0 = std::exp(z0 - zmax) / denom;
                    // d loss / d s+ = (p0 - 1) / tau
                    const double coeff = g[0] / count * (p0 - 1.0) / tau;
                    similarity_backward(av.row(i), pv.row(r), similarity, cache.s_pos[r], cache.norm_anchor[i],
                                        cache.norm_pos[r], coeff, ga ? ga + i * dim : nullptr,
                                        gp ? gp + r * dim : nullptr);
                    for (std::size_t m = 0; m < per_anchor_neg; ++m)
                        weight_neg[m] += std::exp(cache.s_neg[i * per_anchor_neg + m] / tau - zmax) / denom;
                }
                for (std::size_t m = 0; m < per_anchor_neg; ++m) {
                    const std::size_t r = i * per_anchor_neg + m;
                    const double coeff = g[0] / count * weight_neg[m] / tau;
                    similarity_backward(av.row(i), nv.row(r), similarity, cache.s_neg[r], cache.norm_anchor[i],
                                        cache.norm_neg[r], coeff, ga ? ga + i * dim : nullptr,
                                        gn ? gn + r * dim : nullptr);
                }
            }
        });
}

Var same_class_pair_mse(Var a, std::span<const std::size_t> labels) {
    const auto& av = a.value();
    const std::size_t rows = rows_of(av);
    const std::size_t dim = cols_of(av);
    if (labels.size() != rows) throw ContractError("same_class_pair_mse: label count mismatch");
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = i + 1; j < rows; ++j)
            if (labels[i] == labels[j]) pairs.emplace_back(i, j);
    double acc = 0.0;
    for (auto [i, j] : pairs)
        for (std::size_t k = 0; k < dim; ++k) {
            const double d = av[i * dim + k] - av[j * dim + k];
            acc += d * d;
        }
    const double denom = static_cast<double>(pairs.size() * dim);
    const double value = pairs.empty() ? 0.0 : acc / denom;
    return a.tape().record(Tensor({1}, {value}), {a}, [a, pairs, dim, denom](Tape& t, const Tensor& g) {
        if (pairs.empty()) return;
        auto& ga = t.grad_slot(a);
        const auto& av = a.value();
        const double c = 2.0 * g[0] / denom;
        for (auto [i, j] : pairs)
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = av[i * dim + k] - av[j * dim + k];
                ga[i * dim + k] += c * d;
                ga[j * dim + k] -= c * d;
            }
    });
}

} // namespace ops
} // namespace gcl
