#ifndef TILEDEPTH_AUTOGRAD_HPP
#define TILEDEPTH_AUTOGRAD_HPP

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "tiledepth/tensor.hpp"

namespace tiledepth {

// Reverse-mode tape over Tensor<T>. Nodes are appended in topological
// order by construction; backward() walks the tape in reverse.
// A node whose inputs all have requires_grad=false records no backward
// closure, so frozen networks cost nothing in the backward pass.

using Var = int;

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

template <class T>
class Graph {
public:
    struct Node {
        Tensor<T> val;
        Tensor<T> grad;  // empty until touched
        bool needs = false;
        std::function<void()> back;  // may be empty
    };

    std::vector<Node> nodes;

    const Tensor<T>& val(Var i) const { return nodes[static_cast<size_t>(i)].val; }
    Tensor<T>& val(Var i) { return nodes[static_cast<size_t>(i)].val; }
    const Tensor<T>& grad(Var i) const { return nodes[static_cast<size_t>(i)].grad; }
    bool needs_grad(Var i) const { return nodes[static_cast<size_t>(i)].needs; }

    Var input(Tensor<T> t, bool requires_grad = false) {
        Node n;
        n.val = std::move(t);
        n.needs = requires_grad;
        nodes.push_back(std::move(n));
        return static_cast<Var>(nodes.size()) - 1;
    }

    Tensor<T>& ensure_grad(Var i) {
        Node& n = nodes[static_cast<size_t>(i)];
        if (n.grad.v.empty()) n.grad = Tensor<T>(n.val.shape);
        return n.grad;
    }

    void backward(Var loss) {
        check(val(loss).numel() == 1, "backward: loss must be scalar");
        ensure_grad(loss).v[0] = T(1);
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes[static_cast<size_t>(i)];
            if (n.needs && n.back && !n.grad.v.empty()) n.back();
        }
    }

    // ---- elementwise ----

    Var add(Var a, Var b) {
        check(val(a).same_shape(val(b)), "add: shape mismatch");
        Tensor<T> out = val(a);
        const Tensor<T>& vb = val(b);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += vb.v[i];
        Var o = input(std::move(out), needs_grad(a) || needs_grad(b));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, a, b]() {
                const Tensor<T>& g = grad(o);
                if (needs_grad(a)) {
                    Tensor<T>& ga = ensure_grad(a);
                    for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
                }
                if (needs_grad(b)) {
                    Tensor<T>& gb = ensure_grad(b);
                    for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
                }
            };
        }
        return o;
    }

    Var scale(Var x, T c) {
        Tensor<T> out = val(x);
        for (T& e : out.v) e *= c;
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x, c]() {
                const Tensor<T>& g = grad(o);
                Tensor<T>& gx = ensure_grad(x);
                for (size_t i = 0; i < g.v.size(); ++i) gx.v[i] += c * g.v[i];
            };
        }
        return o;
    }

    Var relu(Var x) {
        Tensor<T> out = val(x);
        for (T& e : out.v)
            if (e < T(0)) e = T(0);
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x]() {
                const Tensor<T>& g = grad(o);
                const Tensor<T>& vx = val(x);
                Tensor<T>& gx = ensure_grad(x);
                for (size_t i = 0; i < g.v.size(); ++i)
                    if (vx.v[i] > T(0)) gx.v[i] += g.v[i];
            };
        }
        return o;
    }

    // lo + (hi-lo)*sigmoid(x): output strictly inside (lo,hi)
    Var sigmoid_range(Var x, T lo, T hi) {
        Tensor<T> out = val(x);
        for (T& e : out.v) {
            T s = T(1) / (T(1) + std::exp(-e));
            e = lo + (hi - lo) * s;
        }
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x, lo, hi]() {
                const Tensor<T>& g = grad(o);
                const Tensor<T>& vo = val(o);
                Tensor<T>& gx = ensure_grad(x);
                for (size_t i = 0; i < g.v.size(); ++i) {
                    T s = (vo.v[i] - lo) / (hi - lo);
                    gx.v[i] += g.v[i] * (hi - lo) * s * (T(1) - s);
                }
            };
        }
        return o;
    }

    // ---- structure ops ----

    // concat along channel dim of [C,H,W] maps
    Var concat_ch(const std::vector<Var>& xs) {
        check(!xs.empty(), "concat_ch: empty input");
        int H = val(xs[0]).dim(1), W = val(xs[0]).dim(2);
        int C = 0;
        bool req = false;
        for (Var x : xs) {
            check(val(x).ndim() == 3 && val(x).dim(1) == H && val(x).dim(2) == W,
                  "concat_ch: spatial mismatch");
            C += val(x).dim(0);
            req = req || needs_grad(x);
        }
        Tensor<T> out({C, H, W});
        size_t off = 0;
        for (Var x : xs) {
            const Tensor<T>& vx = val(x);
            std::copy(vx.v.begin(), vx.v.end(), out.v.begin() + off);
            off += vx.v.size();
        }
        Var o = input(std::move(out), req);
        if (req) {
            std::vector<Var> xs_copy = xs;
            nodes.back().back = [this, o, xs_copy]() {
                const Tensor<T>& g = grad(o);
                size_t off2 = 0;
                for (Var x : xs_copy) {
                    size_t n = val(x).v.size();
                    if (needs_grad(x)) {
                        Tensor<T>& gx = ensure_grad(x);
                        for (size_t i = 0; i < n; ++i) gx.v[i] += g.v[off2 + i];
                    }
                    off2 += n;
                }
            };
        }
        return o;
    }

    // spatial crop of [C,H,W] (or [H,W]) at integer offsets
    Var crop(Var x, int y0, int x0, int h, int w) {
        const Tensor<T>& vx = val(x);
        bool is3 = vx.ndim() == 3;
        int C = is3 ? vx.dim(0) : 1;
        int H = is3 ? vx.dim(1) : vx.dim(0);
        int W = is3 ? vx.dim(2) : vx.dim(1);
        check(y0 >= 0 && x0 >= 0 && y0 + h <= H && x0 + w <= W, "crop: out of bounds");
        Tensor<T> out(is3 ? std::vector<int>{C, h, w} : std::vector<int>{h, w});
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y) {
                const T* src = vx.data() + (static_cast<size_t>(c) * H + y0 + y) * W + x0;
                T* dst = out.data() + (static_cast<size_t>(c) * h + y) * w;
                std::copy(src, src + w, dst);
            }
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x, y0, x0, h, w, C, H, W]() {
                const Tensor<T>& g = grad(o);
                Tensor<T>& gx = ensure_grad(x);
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < h; ++y) {
                        const T* src = g.data() + (static_cast<size_t>(c) * h + y) * w;
                        T* dst = gx.data() + (static_cast<size_t>(c) * H + y0 + y) * W + x0;
                        for (int i = 0; i < w; ++i) dst[i] += src[i];
                    }
            };
        }
        return o;
    }

    Var reshape(Var x, std::vector<int> shape) {
        Tensor<T> out = val(x);
        int64_t n = 1;
        for (int d : shape) n *= d;
        check(n == out.numel(), "reshape: numel mismatch");
        out.shape = std::move(shape);
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x]() {
                const Tensor<T>& g = grad(o);
                Tensor<T>& gx = ensure_grad(x);
                for (size_t i = 0; i < g.v.size(); ++i) gx.v[i] += g.v[i];
            };
        }
        return o;
    }

    // out[i] = x[idx[i]]; backward scatter-adds. idx entries must be valid.
    Var gather(Var x, std::vector<int> out_shape,
               std::shared_ptr<const std::vector<int64_t>> idx) {
        Tensor<T> out(out_shape);
        const Tensor<T>& vx = val(x);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = vx.v[static_cast<size_t>((*idx)[i])];
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x, idx]() {
                const Tensor<T>& g = grad(o);
                Tensor<T>& gx = ensure_grad(x);
                for (size_t i = 0; i < g.v.size(); ++i)
                    gx.v[static_cast<size_t>((*idx)[i])] += g.v[i];
            };
        }
        return o;
    }

    // ---- conv / linear ----

    // x:[Cin,H,W] w:[Cout,Cin,kh,kw] b:[Cout]; zero padding.
    Var conv2d(Var x, Var w, Var b, int stride, int pad) {
        const Tensor<T>& vx = val(x);
        const Tensor<T>& vw = val(w);
        check(vx.ndim() == 3 && vw.ndim() == 4, "conv2d: bad ranks");
        int Cin = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
        int Cout = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
        check(vw.dim(1) == Cin, "conv2d: channel mismatch");
        int Ho = (H + 2 * pad - kh) / stride + 1;
        int Wo = (W + 2 * pad - kw) / stride + 1;
        int K = Cin * kh * kw;

        auto col = std::make_shared<std::vector<T>>();
        im2col(vx, kh, kw, stride, pad, Ho, Wo, *col);
        Tensor<T> out({Cout, Ho, Wo});
        {
            ECMap<T> Wm(vw.data(), Cout, K);
            ECMap<T> Cm(col->data(), K, static_cast<Eigen::Index>(Ho) * Wo);
            EMap<T> Om(out.data(), Cout, static_cast<Eigen::Index>(Ho) * Wo);
            Om.noalias() = Wm * Cm;
            const Tensor<T>& vb = val(b);
            for (int c = 0; c < Cout; ++c) Om.row(c).array() += vb.v[static_cast<size_t>(c)];
        }
        bool req = needs_grad(x) || needs_grad(w) || needs_grad(b);
        Var o = input(std::move(out), req);
        if (req) {
            nodes.back().back = [this, o, x, w, b, col, stride, pad, Cin, H, W, Cout, kh, kw,
                                 Ho, Wo, K]() {
                const Tensor<T>& g = grad(o);
                ECMap<T> Gm(g.data(), Cout, static_cast<Eigen::Index>(Ho) * Wo);
                if (needs_grad(b)) {
                    Tensor<T>& gb = ensure_grad(b);
                    // explicit accumulation: vectorized reductions round in an
                    // address-dependent order, breaking run-to-run determinism
                    for (int c = 0; c < Cout; ++c) {
                        T s = 0;
                        const T* row = g.data() + static_cast<size_t>(c) * Ho * Wo;
                        for (int64_t i = 0; i < static_cast<int64_t>(Ho) * Wo; ++i)
                            s += row[i];
                        gb.v[static_cast<size_t>(c)] += s;
                    }
                }
                if (needs_grad(w)) {
                    ECMap<T> Cm(col->data(), K, static_cast<Eigen::Index>(Ho) * Wo);
                    Tensor<T>& gw = ensure_grad(w);
                    EMap<T> GW(gw.data(), Cout, K);
                    GW.noalias() += Gm * Cm.transpose();
                }
                if (needs_grad(x)) {
                    std::vector<T> dcol(static_cast<size_t>(K) * Ho * Wo);
                    EMap<T> DC(dcol.data(), K, static_cast<Eigen::Index>(Ho) * Wo);
                    ECMap<T> Wm(val(w).data(), Cout, K);
                    DC.noalias() = Wm.transpose() * Gm;
                    col2im_add(dcol, kh, kw, stride, pad, Ho, Wo, Cin, H, W, ensure_grad(x));
                }
            };
        }
        return o;
    }

    // x:[N,in] w:[in,out] b:[out]
    Var linear(Var x, Var w, Var b) {
        const Tensor<T>& vx = val(x);
        const Tensor<T>& vw = val(w);
        int N = vx.dim(0), In = vx.dim(1), Out = vw.dim(1);
        check(vw.dim(0) == In, "linear: dim mismatch");
        Tensor<T> out({N, Out});
        {
            ECMap<T> X(vx.data(), N, In);
            ECMap<T> Wm(vw.data(), In, Out);
            EMap<T> O(out.data(), N, Out);
            O.noalias() = X * Wm;
            const Tensor<T>& vb = val(b);
            for (int j = 0; j < Out; ++j) O.col(j).array() += vb.v[static_cast<size_t>(j)];
        }
        bool req = needs_grad(x) || needs_grad(w) || needs_grad(b);
        Var o = input(std::move(out), req);
        if (req) {
            nodes.back().back = [this, o, x, w, b, N, In, Out]() {
                const Tensor<T>& g = grad(o);
                ECMap<T> G(g.data(), N, Out);
                if (needs_grad(b)) {
                    Tensor<T>& gb = ensure_grad(b);
                    for (int i = 0; i < N; ++i) {
                        const T* row = g.data() + static_cast<size_t>(i) * Out;
                        for (int j = 0; j < Out; ++j) gb.v[static_cast<size_t>(j)] += row[j];
                    }
                }
                if (needs_grad(w)) {
                    ECMap<T> X(val(x).data(), N, In);
                    EMap<T> GW(ensure_grad(w).data(), In, Out);
                    GW.noalias() += X.transpose() * G;
                }
                if (needs_grad(x)) {
                    ECMap<T> Wm(val(w).data(), In, Out);
                    EMap<T> GX(ensure_grad(x).data(), N, In);
                    GX.noalias() += G * Wm.transpose();
                }
            };
        }
        return o;
    }

    // layer norm over last dim of [N,C]; gamma,beta:[C]
    Var layernorm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
        const Tensor<T>& vx = val(x);
        int N = vx.dim(0), C = vx.dim(1);
        Tensor<T> out({N, C});
        auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * 2);
        const Tensor<T>& vg = val(gamma);
        const Tensor<T>& vb = val(beta);
        for (int i = 0; i < N; ++i) {
            const T* row = vx.data() + static_cast<size_t>(i) * C;
            T mu = 0, var = 0;
            for (int j = 0; j < C; ++j) mu += row[j];
            mu /= T(C);
            for (int j = 0; j < C; ++j) var += (row[j] - mu) * (row[j] - mu);
            var /= T(C);
            T inv = T(1) / std::sqrt(var + eps);
            (*stats)[static_cast<size_t>(i) * 2] = mu;
            (*stats)[static_cast<size_t>(i) * 2 + 1] = inv;
            T* orow = out.data() + static_cast<size_t>(i) * C;
            for (int j = 0; j < C; ++j)
                orow[j] = (row[j] - mu) * inv * vg.v[static_cast<size_t>(j)] +
                          vb.v[static_cast<size_t>(j)];
        }
        bool req = needs_grad(x) || needs_grad(gamma) || needs_grad(beta);
        Var o = input(std::move(out), req);
        if (req) {
            nodes.back().back = [this, o, x, gamma, beta, N, C, stats]() {
                const Tensor<T>& g = grad(o);
                const Tensor<T>& vx2 = val(x);
                const Tensor<T>& vg = val(gamma);
                for (int i = 0; i < N; ++i) {
                    const T* row = vx2.data() + static_cast<size_t>(i) * C;
                    const T* grow = g.data() + static_cast<size_t>(i) * C;
                    T mu = (*stats)[static_cast<size_t>(i) * 2];
                    T inv = (*stats)[static_cast<size_t>(i) * 2 + 1];
                    if (needs_grad(gamma)) {
                        Tensor<T>& gg = ensure_grad(gamma);
                        for (int j = 0; j < C; ++j)
                            gg.v[static_cast<size_t>(j)] += grow[j] * (row[j] - mu) * inv;
                    }
                    if (needs_grad(beta)) {
                        Tensor<T>& gb = ensure_grad(beta);
                        for (int j = 0; j < C; ++j) gb.v[static_cast<size_t>(j)] += grow[j];
                    }
                    if (needs_grad(x)) {
                        // dxhat = g*gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                        T s1 = 0, s2 = 0;
                        for (int j = 0; j < C; ++j) {
                            T dxh = grow[j] * vg.v[static_cast<size_t>(j)];
                            T xh = (row[j] - mu) * inv;
                            s1 += dxh;
                            s2 += dxh * xh;
                        }
                        s1 /= T(C);
                        s2 /= T(C);
                        Tensor<T>& gx = ensure_grad(x);
                        T* gxrow = gx.data() + static_cast<size_t>(i) * C;
                        for (int j = 0; j < C; ++j) {
                            T dxh = grow[j] * vg.v[static_cast<size_t>(j)];
                            T xh = (row[j] - mu) * inv;
                            gxrow[j] += inv * (dxh - s1 - xh * s2);
                        }
                    }
                }
            };
        }
        return o;
    }

    // Multi-head self-attention within token windows.
    // qkv:[Ntok, 3C], tokens grouped per window (nw windows of tw tokens).
    Var window_attention(Var qkv, int nw, int tw, int heads) {
        const Tensor<T>& vq = val(qkv);
        int Ntok = vq.dim(0);
        int C = vq.dim(1) / 3;
        check(Ntok == nw * tw, "window_attention: token count mismatch");
        check(C % heads == 0, "window_attention: heads must divide channels");
        int dk = C / heads;
        T scale_f = T(1) / std::sqrt(T(dk));
        Tensor<T> out({Ntok, C});
        // store softmax probabilities for backward
        auto probs = std::make_shared<std::vector<T>>(
            static_cast<size_t>(nw) * heads * tw * tw);
        std::vector<T> att(static_cast<size_t>(tw) * tw);
        for (int w0 = 0; w0 < nw; ++w0) {
            const T* base = vq.data() + static_cast<size_t>(w0) * tw * 3 * C;
            T* obase = out.data() + static_cast<size_t>(w0) * tw * C;
            for (int h = 0; h < heads; ++h) {
                int qo = h * dk, ko = C + h * dk, vo = 2 * C + h * dk;
                // A = Q K^T * scale
                for (int i = 0; i < tw; ++i) {
                    const T* qi = base + static_cast<size_t>(i) * 3 * C + qo;
                    for (int j = 0; j < tw; ++j) {
                        const T* kj = base + static_cast<size_t>(j) * 3 * C + ko;
                        T s = 0;
                        for (int d = 0; d < dk; ++d) s += qi[d] * kj[d];
                        att[static_cast<size_t>(i) * tw + j] = s * scale_f;
                    }
                }
                // softmax rows
                T* P = probs->data() + (static_cast<size_t>(w0) * heads + h) * tw * tw;
                for (int i = 0; i < tw; ++i) {
                    T* arow = att.data() + static_cast<size_t>(i) * tw;
                    T mx = arow[0];
                    for (int j = 1; j < tw; ++j) mx = std::max(mx, arow[j]);
                    T sum = 0;
                    for (int j = 0; j < tw; ++j) {
                        T e = std::exp(arow[j] - mx);
                        P[static_cast<size_t>(i) * tw + j] = e;
                        sum += e;
                    }
                    T inv = T(1) / sum;
                    for (int j = 0; j < tw; ++j) P[static_cast<size_t>(i) * tw + j] *= inv;
                }
                // O = P V
                for (int i = 0; i < tw; ++i) {
                    T* orow = obase + static_cast<size_t>(i) * C + qo;
                    for (int d = 0; d < dk; ++d) orow[d] = 0;
                    for (int j = 0; j < tw; ++j) {
                        T p = P[static_cast<size_t>(i) * tw + j];
                        const T* vrow = base + static_cast<size_t>(j) * 3 * C + vo;
                        for (int d = 0; d < dk; ++d) orow[d] += p * vrow[d];
                    }
                }
            }
        }
        Var o = input(std::move(out), needs_grad(qkv));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, qkv, nw, tw, heads, C, dk, scale_f, probs]() {
                const Tensor<T>& g = grad(o);
                const Tensor<T>& vq2 = val(qkv);
                Tensor<T>& gq = ensure_grad(qkv);
                std::vector<T> dP(static_cast<size_t>(tw) * tw);
                std::vector<T> dA(static_cast<size_t>(tw) * tw);
                for (int w0 = 0; w0 < nw; ++w0) {
                    const T* base = vq2.data() + static_cast<size_t>(w0) * tw * 3 * C;
                    T* gbase = gq.data() + static_cast<size_t>(w0) * tw * 3 * C;
                    const T* obase = g.data() + static_cast<size_t>(w0) * tw * C;
                    for (int h = 0; h < heads; ++h) {
                        int qo = h * dk, ko = C + h * dk, vo = 2 * C + h * dk;
                        const T* P = probs->data() +
                                     (static_cast<size_t>(w0) * heads + h) * tw * tw;
                        // dV += P^T dO ; dP = dO V^T
                        for (int i = 0; i < tw; ++i) {
                            const T* go = obase + static_cast<size_t>(i) * C + qo;
                            for (int j = 0; j < tw; ++j) {
                                const T* vrow = base + static_cast<size_t>(j) * 3 * C + vo;
                                T* gv = gbase + static_cast<size_t>(j) * 3 * C + vo;
                                T p = P[static_cast<size_t>(i) * tw + j];
                                T s = 0;
                                for (int d = 0; d < dk; ++d) {
                                    gv[d] += p * go[d];
                                    s += go[d] * vrow[d];
                                }
                                dP[static_cast<size_t>(i) * tw + j] = s;
                            }
                        }
                        // dA = P o (dP - rowsum(dP o P))
                        for (int i = 0; i < tw; ++i) {
                            T dot = 0;
                            for (int j = 0; j < tw; ++j)
                                dot += dP[static_cast<size_t>(i) * tw + j] *
                                       P[static_cast<size_t>(i) * tw + j];
                            for (int j = 0; j < tw; ++j)
                                dA[static_cast<size_t>(i) * tw + j] =
                                    P[static_cast<size_t>(i) * tw + j] *
                                    (dP[static_cast<size_t>(i) * tw + j] - dot);
                        }
                        // dQ += dA K * scale ; dK += dA^T Q * scale
                        for (int i = 0; i < tw; ++i) {
                            T* gqrow = gbase + static_cast<size_t>(i) * 3 * C + qo;
                            const T* qrow = base + static_cast<size_t>(i) * 3 * C + qo;
                            for (int j = 0; j < tw; ++j) {
                                T a = dA[static_cast<size_t>(i) * tw + j] * scale_f;
                                const T* krow = base + static_cast<size_t>(j) * 3 * C + ko;
                                T* gkrow = gbase + static_cast<size_t>(j) * 3 * C + ko;
                                for (int d = 0; d < dk; ++d) {
                                    gqrow[d] += a * krow[d];
                                    gkrow[d] += a * qrow[d];
                                }
                            }
                        }
                    }
                }
            };
        }
        return o;
    }

    // 2x bilinear upsample of [C,H,W] (half-pixel centers, border-clamped)
    Var upsample2x(Var x) {
        const Tensor<T>& vx = val(x);
        int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
        int H2 = H * 2, W2 = W * 2;
        Tensor<T> out({C, H2, W2});
        auto sample_axis = [](int o, int n, int& i0, int& i1, T& w1) {
            T s = (T(o) + T(0.5)) / T(2) - T(0.5);
            T f = std::floor(s);
            i0 = static_cast<int>(f);
            w1 = s - f;
            i1 = i0 + 1;
            if (i0 < 0) i0 = 0;
            if (i1 > n - 1) i1 = n - 1;
            if (i0 > n - 1) i0 = n - 1;
        };
        for (int oy = 0; oy < H2; ++oy) {
            int y0, y1;
            T wy;
            sample_axis(oy, H, y0, y1, wy);
            for (int ox = 0; ox < W2; ++ox) {
                int x0, x1;
                T wx;
                sample_axis(ox, W, x0, x1, wx);
                for (int c = 0; c < C; ++c) {
                    T a = vx.at(c, y0, x0) * (1 - wx) + vx.at(c, y0, x1) * wx;
                    T b = vx.at(c, y1, x0) * (1 - wx) + vx.at(c, y1, x1) * wx;
                    out.at(c, oy, ox) = a * (1 - wy) + b * wy;
                }
            }
        }
        Var o = input(std::move(out), needs_grad(x));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, x, C, H, W, H2, W2, sample_axis]() {
                const Tensor<T>& g = grad(o);
                Tensor<T>& gx = ensure_grad(x);
                for (int oy = 0; oy < H2; ++oy) {
                    int y0, y1;
                    T wy;
                    sample_axis(oy, H, y0, y1, wy);
                    for (int ox = 0; ox < W2; ++ox) {
                        int x0, x1;
                        T wx;
                        sample_axis(ox, W, x0, x1, wx);
                        for (int c = 0; c < C; ++c) {
                            T go = g.at(c, oy, ox);
                            gx.at(c, y0, x0) += go * (1 - wy) * (1 - wx);
                            gx.at(c, y0, x1) += go * (1 - wy) * wx;
                            gx.at(c, y1, x0) += go * wy * (1 - wx);
                            gx.at(c, y1, x1) += go * wy * wx;
                        }
                    }
                }
            };
        }
        return o;
    }

    // Bilinear crop of the feature-map region corresponding to an
    // image-space rectangle. feat:[C,FH,FW] spans the full img_h x img_w.
    Var roi_sample(Var feat, int win_x0, int win_y0, int win_w, int win_h, int img_h,
                   int img_w, int out_h, int out_w) {
        check(win_w > 0 && win_h > 0, "roi_sample: degenerate window");
        const Tensor<T>& vf = val(feat);
        int C = vf.dim(0), FH = vf.dim(1), FW = vf.dim(2);
        Tensor<T> out({C, out_h, out_w});
        auto coords = [](T img_c, int img_n, int fn, int& i0, int& i1, T& w1) {
            T f = img_c / T(img_n) * T(fn) - T(0.5);
            T fl = std::floor(f);
            i0 = static_cast<int>(fl);
            w1 = f - fl;
            i1 = i0 + 1;
            if (i0 < 0) i0 = 0;
            if (i1 > fn - 1) i1 = fn - 1;
            if (i0 > fn - 1) i0 = fn - 1;
        };
        for (int oy = 0; oy < out_h; ++oy) {
            T iy = T(win_y0) + (T(oy) + T(0.5)) * T(win_h) / T(out_h);
            int y0, y1;
            T wy;
            coords(iy, img_h, FH, y0, y1, wy);
            for (int ox = 0; ox < out_w; ++ox) {
                T ix = T(win_x0) + (T(ox) + T(0.5)) * T(win_w) / T(out_w);
                int x0, x1;
                T wx;
                coords(ix, img_w, FW, x0, x1, wx);
                for (int c = 0; c < C; ++c) {
                    T a = vf.at(c, y0, x0) * (1 - wx) + vf.at(c, y0, x1) * wx;
                    T b = vf.at(c, y1, x0) * (1 - wx) + vf.at(c, y1, x1) * wx;
                    out.at(c, oy, ox) = a * (1 - wy) + b * wy;
                }
            }
        }
        Var o = input(std::move(out), needs_grad(feat));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, feat, win_x0, win_y0, win_w, win_h, img_h, img_w,
                                 out_h, out_w, C, FH, FW, coords]() {
                const Tensor<T>& g = grad(o);
                Tensor<T>& gf = ensure_grad(feat);
                for (int oy = 0; oy < out_h; ++oy) {
                    T iy = T(win_y0) + (T(oy) + T(0.5)) * T(win_h) / T(out_h);
                    int y0, y1;
                    T wy;
                    coords(iy, img_h, FH, y0, y1, wy);
                    for (int ox = 0; ox < out_w; ++ox) {
                        T ix = T(win_x0) + (T(ox) + T(0.5)) * T(win_w) / T(out_w);
                        int x0, x1;
                        T wx;
                        coords(ix, img_w, FW, x0, x1, wx);
                        for (int c = 0; c < C; ++c) {
                            T go = g.at(c, oy, ox);
                            gf.at(c, y0, x0) += go * (1 - wy) * (1 - wx);
                            gf.at(c, y0, x1) += go * (1 - wy) * wx;
                            gf.at(c, y1, x0) += go * wy * (1 - wx);
                            gf.at(c, y1, x1) += go * wy * wx;
                        }
                    }
                }
            };
        }
        return o;
    }

    // ---- scalar losses / reductions ----

    // mean over elements of (a-b)^2
    Var mse(Var a, Var b) {
        check(val(a).same_shape(val(b)), "mse: shape mismatch");
        const Tensor<T>& va = val(a);
        const Tensor<T>& vb = val(b);
        int64_t n = va.numel();
        double acc = 0;
        for (int64_t i = 0; i < n; ++i) {
            double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
            acc += d * d;
        }
        Tensor<T> out({1});
        out.v[0] = static_cast<T>(acc / static_cast<double>(n));
        Var o = input(std::move(out), needs_grad(a) || needs_grad(b));
        if (needs_grad(o)) {
            nodes.back().back = [this, o, a, b, n]() {
                T go = grad(o).v[0];
                const Tensor<T>& va2 = val(a);
                const Tensor<T>& vb2 = val(b);
                T c = go * T(2) / T(n);
                if (needs_grad(a)) {
                    Tensor<T>& ga = ensure_grad(a);
                    for (int64_t i = 0; i < n; ++i) ga[i] += c * (va2[i] - vb2[i]);
                }
                if (needs_grad(b)) {
                    Tensor<T>& gb = ensure_grad(b);
                    for (int64_t i = 0; i < n; ++i) gb[i] -= c * (va2[i] - vb2[i]);
                }
            };
        }
        return o;
    }

    // scale-invariant log loss: alpha*sqrt(mean(e^2) - lam*mean(e)^2),
    // e = log(pred)-log(gt) over mask-true pixels.
    Var silog(Var pred, const Tensor<T>& gt, const Tensor<uint8_t>& mask, T alpha, T lam) {
        const Tensor<T>& vp = val(pred);
        check(vp.numel() == gt.numel() && gt.numel() == mask.numel(),
              "silog: shape mismatch");
        int64_t n = vp.numel();
        double s1 = 0, s2 = 0;
        int64_t m = 0;
        for (int64_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            check(vp[i] > T(0) && gt[i] > T(0), "silog: non-positive depth");
            double e = std::log(static_cast<double>(vp[i])) -
                       std::log(static_cast<double>(gt[i]));
            s1 += e;
            s2 += e * e;
            ++m;
        }
        check(m > 0, "silog: empty mask");
        double m1 = s1 / static_cast<double>(m);
        double m2 = s2 / static_cast<double>(m);
        double arg = m2 - static_cast<double>(lam) * m1 * m1;
        if (arg < 0) arg = 0;
        Tensor<T> out({1});
        out.v[0] = static_cast<T>(alpha * std::sqrt(arg));
        Var o = input(std::move(out), needs_grad(pred));
        if (needs_grad(o)) {
            auto gt_copy = std::make_shared<Tensor<T>>(gt);
            auto mask_copy = std::make_shared<Tensor<uint8_t>>(mask);
            nodes.back().back = [this, o, pred, gt_copy, mask_copy, alpha, lam, m, m1, arg,
                                 n]() {
                T go = grad(o).v[0];
                const Tensor<T>& vp2 = val(pred);
                Tensor<T>& gp = ensure_grad(pred);
                double denom = std::sqrt(arg + 1e-12);
                double c = static_cast<double>(alpha) * static_cast<double>(go) /
                           (static_cast<double>(m) * denom);
                for (int64_t i = 0; i < n; ++i) {
                    if (!(*mask_copy)[i]) continue;
                    double e = std::log(static_cast<double>(vp2[i])) -
                               std::log(static_cast<double>((*gt_copy)[i]));
                    gp[i] += static_cast<T>(c * (e - static_cast<double>(lam) * m1) /
                                            static_cast<double>(vp2[i]));
                }
            };
        }
        return o;
    }

    // out = sum_k coeff[k]*scalars[k]
    Var weighted_sum(const std::vector<Var>& scalars, const std::vector<T>& coeff) {
        check(scalars.size() == coeff.size(), "weighted_sum: size mismatch");
        Tensor<T> out({1});
        bool req = false;
        for (size_t k = 0; k < scalars.size(); ++k) {
            out.v[0] += coeff[k] * val(scalars[k]).v[0];
            req = req || needs_grad(scalars[k]);
        }
        Var o = input(std::move(out), req);
        if (req) {
            auto ss = scalars;
            auto cc = coeff;
            nodes.back().back = [this, o, ss, cc]() {
                T go = grad(o).v[0];
                for (size_t k = 0; k < ss.size(); ++k)
                    if (needs_grad(ss[k])) ensure_grad(ss[k]).v[0] += cc[k] * go;
            };
        }
        return o;
    }

private:
    static void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int Ho,
                       int Wo, std::vector<T>& col) {
        int Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
        col.assign(static_cast<size_t>(Cin) * kh * kw * Ho * Wo, T(0));
        size_t row = 0;
        for (int c = 0; c < Cin; ++c)
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx, ++row) {
                    T* dst = col.data() + row * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride + dy - pad;
                        if (iy < 0 || iy >= H) {
                            dst += Wo;
                            continue;
                        }
                        const T* src = x.data() + (static_cast<size_t>(c) * H + iy) * W;
                        for (int ox = 0; ox < Wo; ++ox) {
                            int ix = ox * stride + dx - pad;
                            *dst++ = (ix >= 0 && ix < W) ? src[ix] : T(0);
                        }
                    }
                }
    }

    static void col2im_add(const std::vector<T>& col, int kh, int kw, int stride, int pad,
                           int Ho, int Wo, int Cin, int H, int W, Tensor<T>& gx) {
        size_t row = 0;
        for (int c = 0; c < Cin; ++c)
            for (int dy = 0; dy < kh; ++dy)
                for (int dx = 0; dx < kw; ++dx, ++row) {
                    const T* src = col.data() + row * Ho * Wo;
                    for (int oy = 0; oy < Ho; ++oy) {
                        int iy = oy * stride + dy - pad;
                        if (iy < 0 || iy >= H) {
                            src += Wo;
                            continue;
                        }
                        T* dst = gx.data() + (static_cast<size_t>(c) * H + iy) * W;
                        for (int ox = 0; ox < Wo; ++ox) {
                            int ix = ox * stride + dx - pad;
                            T v = *src++;
                            if (ix >= 0 && ix < W) dst[ix] += v;
                        }
                    }
                }
    }
};

}  // namespace tiledepth

#endif
