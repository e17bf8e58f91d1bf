#pragma once

// Scalar tanh network g: R -> R with layout 1 -> H -> H -> 1.
//
// The forward pass propagates Taylor jets (value and three input derivatives)
// through both hidden layers. The reverse pass maps a cotangent on (g, g', g'')
// back to the flat parameter vector. Depth is fixed, so the tape is just the
// per-layer activations and their jets.

#include <cstddef>
#include <span>
#include <vector>

#include "pwgf/common.hpp"

namespace pwgf {

/// Number of parameters of one 1 -> H -> H -> 1 network.
constexpr std::size_t net_param_count(std::size_t H) { return H * H + 4 * H + 1; }

/// Read-only view of a flat parameter block.
///
/// Flat layout: W1 (H), b1 (H), W2 (H x H, row-major, W2[i][j] maps h1_j to a2_i),
/// b2 (H), w3 (H), b3 (1).
struct NetView {
    std::size_t H = 0;
    const double* W1 = nullptr;
    const double* b1 = nullptr;
    const double* W2 = nullptr;
    const double* b2 = nullptr;
    const double* w3 = nullptr;
    double b3 = 0.0;

    static NetView from_flat(std::span<const double> flat, std::size_t H) {
        if (flat.size() != net_param_count(H))
            throw DomainError("network parameter block has length " + std::to_string(flat.size()) +
                              ", expected " + std::to_string(net_param_count(H)));
        NetView v;
        v.H = H;
        v.W1 = flat.data();
        v.b1 = v.W1 + H;
        v.W2 = v.b1 + H;
        v.b2 = v.W2 + H * H;
        v.w3 = v.b2 + H;
        v.b3 = v.w3[H];
        return v;
    }
};

/// Offsets of each field inside the flat block.
struct NetLayout {
    std::size_t H;
    std::size_t W1() const { return 0; }
    std::size_t b1() const { return H; }
    std::size_t W2() const { return 2 * H; }
    std::size_t b2() const { return 2 * H + H * H; }
    std::size_t w3() const { return 3 * H + H * H; }
    std::size_t b3() const { return 4 * H + H * H; }
    std::size_t size() const { return net_param_count(H); }
    bool is_bias(std::size_t k) const {
        return (k >= b1() && k < W2()) || (k >= b2() && k < w3()) || k == b3();
    }
};

/// Structured parameters of one network.
struct NetworkParams {
    std::size_t H = 0;
    std::vector<double> W1, b1, W2, b2, w3;
    double b3 = 0.0;

    static NetworkParams zeros(std::size_t H) {
        NetworkParams p;
        p.H = H;
        p.W1.assign(H, 0.0);
        p.b1.assign(H, 0.0);
        p.W2.assign(H * H, 0.0);
        p.b2.assign(H, 0.0);
        p.w3.assign(H, 0.0);
        return p;
    }

    /// Normal weights of standard deviation `scale`, all biases zero.
    static NetworkParams random(std::size_t H, Rng& rng, double scale = 0.01) {
        NetworkParams p = zeros(H);
        for (auto& x : p.W1) x = scale * rng.normal();
        for (auto& x : p.W2) x = scale * rng.normal();
        for (auto& x : p.w3) x = scale * rng.normal();
        return p;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(net_param_count(H));
        out.insert(out.end(), W1.begin(), W1.end());
        out.insert(out.end(), b1.begin(), b1.end());
        out.insert(out.end(), W2.begin(), W2.end());
        out.insert(out.end(), b2.begin(), b2.end());
        out.insert(out.end(), w3.begin(), w3.end());
        out.push_back(b3);
        return out;
    }

    static NetworkParams unflatten(std::span<const double> flat, std::size_t H) {
        const NetView v = NetView::from_flat(flat, H);
        NetworkParams p;
        p.H = H;
        p.W1.assign(v.W1, v.W1 + H);
        p.b1.assign(v.b1, v.b1 + H);
        p.W2.assign(v.W2, v.W2 + H * H);
        p.b2.assign(v.b2, v.b2 + H);
        p.w3.assign(v.w3, v.w3 + H);
        p.b3 = v.b3;
        return p;
    }

    NetView view() const {
        NetView v;
        v.H = H;
        v.W1 = W1.data();
        v.b1 = b1.data();
        v.W2 = W2.data();
        v.b2 = b2.data();
        v.w3 = w3.data();
        v.b3 = b3;
        return v;
    }
};

/// Forward activations of one evaluation. Buffers are reused across calls.
struct NetTape {
    std::size_t H = 0;
    double w = 0.0;
    // layer 1: slope a1' (= W1), tanh value and its a-derivatives
    std::vector<double> a1p, t1, s1, s2, s3;
    // hidden jets h, h', h''
    std::vector<double> h0, h1, h2;
    // layer 2 pre-activation jets a2', a2'', a2''' and tanh derivatives
    std::vector<double> a2p, a2pp, a2ppp, t2, e1, e2, e3;
    // output-layer input jets k, k', k''
    std::vector<double> k0, k1, k2;

    void resize(std::size_t h) {
        if (H == h) return;
        H = h;
        for (auto* v : {&a1p, &t1, &s1, &s2, &s3, &h0, &h1, &h2, &a2p, &a2pp, &a2ppp, &t2, &e1, &e2, &e3,
                        &k0, &k1, &k2})
            v->assign(h, 0.0);
    }
};

struct NetEval {
    double g = 0.0;
    double dg = 0.0;   // g'
    double d2g = 0.0;  // g''
    double d3g = 0.0;  // g''', needed for input-adjoints of g''
    NetTape tape;
};

/// Value-only forward pass (used by inversion and trial maps).
inline double net_value(const NetView& p, double w) {
    const std::size_t H = p.H;
    double h[64];
    std::vector<double> heap;
    double* hp = h;
    if (H > 64) {
        heap.resize(H);
        hp = heap.data();
    }
    for (std::size_t j = 0; j < H; ++j) hp[j] = odd_tanh(p.W1[j] * w + p.b1[j]);
    double g = p.b3;
    for (std::size_t i = 0; i < H; ++i) {
        const double* row = p.W2 + i * H;
        double a = p.b2[i];
        for (std::size_t j = 0; j < H; ++j) a += row[j] * hp[j];
        g += p.w3[i] * odd_tanh(a);
    }
    return g;
}

/// Evaluate g and its first three input derivatives, filling the tape.
inline void net_eval(const NetView& p, double w, NetEval& out) {
    const std::size_t H = p.H;
    NetTape& t = out.tape;
    t.resize(H);
    t.w = w;
    for (std::size_t j = 0; j < H; ++j) {
        const double ap = p.W1[j];
        const double th = odd_tanh(ap * w + p.b1[j]);
        const double d1 = 1.0 - th * th;
        const double d2 = -2.0 * th * d1;
        const double d3 = -2.0 * d1 * d1 + 4.0 * th * th * d1;
        t.a1p[j] = ap;
        t.t1[j] = th;
        t.s1[j] = d1;
        t.s2[j] = d2;
        t.s3[j] = d3;
        t.h0[j] = th;
        t.h1[j] = d1 * ap;
        t.h2[j] = d2 * ap * ap;
    }
    double g0 = p.b3, g1 = 0.0, g2 = 0.0, g3 = 0.0;
    for (std::size_t i = 0; i < H; ++i) {
        const double* row = p.W2 + i * H;
        double a0 = p.b2[i], a1 = 0.0, a2 = 0.0, a3 = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
            const double ap = t.a1p[j];
            a0 += row[j] * t.h0[j];
            a1 += row[j] * t.h1[j];
            a2 += row[j] * t.h2[j];
            a3 += row[j] * (t.s3[j] * ap * ap * ap);
        }
        const double th = odd_tanh(a0);
        const double e1 = 1.0 - th * th;
        const double e2 = -2.0 * th * e1;
        const double e3 = -2.0 * e1 * e1 + 4.0 * th * th * e1;
        t.a2p[i] = a1;
        t.a2pp[i] = a2;
        t.a2ppp[i] = a3;
        t.t2[i] = th;
        t.e1[i] = e1;
        t.e2[i] = e2;
        t.e3[i] = e3;
        t.k0[i] = th;
        t.k1[i] = e1 * a1;
        t.k2[i] = e2 * a1 * a1 + e1 * a2;
        const double k3 = e3 * a1 * a1 * a1 + 3.0 * e2 * a1 * a2 + e1 * a3;
        g0 += p.w3[i] * t.k0[i];
        g1 += p.w3[i] * t.k1[i];
        g2 += p.w3[i] * t.k2[i];
        g3 += p.w3[i] * k3;
    }
    out.g = g0;
    out.dg = g1;
    out.d2g = g2;
    out.d3g = g3;
}

inline NetEval net_eval(const NetView& p, double w) {
    NetEval e;
    net_eval(p, w, e);
    return e;
}

/// Accumulate d(cg*g + cg1*g' + cg2*g'')/dtheta into `grad` (flat layout).
inline void net_backprop_accumulate(const NetView& p, const NetTape& t, double cg, double cg1, double cg2,
                                    std::span<double> grad) {
    const std::size_t H = p.H;
    if (t.H != H || grad.size() != net_param_count(H))
        throw DomainError("net_backprop: tape/gradient size does not match network width " + std::to_string(H));
    const NetLayout lay{H};
    double* gW1 = grad.data() + lay.W1();
    double* gb1 = grad.data() + lay.b1();
    double* gW2 = grad.data() + lay.W2();
    double* gb2 = grad.data() + lay.b2();
    double* gw3 = grad.data() + lay.w3();
    grad[lay.b3()] += cg;

    double hb0[64], hb1[64], hb2[64];
    std::vector<double> heap;
    double *ph0 = hb0, *ph1 = hb1, *ph2 = hb2;
    if (H > 64) {
        heap.assign(3 * H, 0.0);
        ph0 = heap.data();
        ph1 = ph0 + H;
        ph2 = ph1 + H;
    } else {
        for (std::size_t j = 0; j < H; ++j) ph0[j] = ph1[j] = ph2[j] = 0.0;
    }

    for (std::size_t i = 0; i < H; ++i) {
        gw3[i] += cg * t.k0[i] + cg1 * t.k1[i] + cg2 * t.k2[i];
        const double kb0 = cg * p.w3[i];
        const double kb1 = cg1 * p.w3[i];
        const double kb2 = cg2 * p.w3[i];
        const double ap = t.a2p[i];
        const double app = t.a2pp[i];
        // k' = e1 a', k'' = e2 a'^2 + e1 a''
        const double abar2 = kb2 * t.e1[i];
        const double abar1 = kb2 * 2.0 * t.e2[i] * ap + kb1 * t.e1[i];
        const double e1bar = kb2 * app + kb1 * ap;
        const double e2bar = kb2 * ap * ap;
        const double abar0 = kb0 * t.e1[i] + e1bar * t.e2[i] + e2bar * t.e3[i];
        gb2[i] += abar0;
        double* row = gW2 + i * H;
        const double* wrow = p.W2 + i * H;
        for (std::size_t j = 0; j < H; ++j) {
            row[j] += abar0 * t.h0[j] + abar1 * t.h1[j] + abar2 * t.h2[j];
            ph0[j] += wrow[j] * abar0;
            ph1[j] += wrow[j] * abar1;
            ph2[j] += wrow[j] * abar2;
        }
    }
    for (std::size_t j = 0; j < H; ++j) {
        const double ap = t.a1p[j];
        // h' = s1 a', h'' = s2 a'^2 (a'' = 0 in the first layer)
        const double abar1 = ph2[j] * 2.0 * t.s2[j] * ap + ph1[j] * t.s1[j];
        const double s1bar = ph1[j] * ap;
        const double s2bar = ph2[j] * ap * ap;
        const double abar0 = ph0[j] * t.s1[j] + s1bar * t.s2[j] + s2bar * t.s3[j];
        gb1[j] += abar0;
        gW1[j] += abar0 * t.w + abar1;
    }
}

/// d(cg*g + cg1*g' + cg2*g'')/dtheta as a fresh flat vector.
inline std::vector<double> net_backprop(const NetView& p, const NetTape& t, double cg, double cg1, double cg2) {
    std::vector<double> grad(net_param_count(p.H), 0.0);
    net_backprop_accumulate(p, t, cg, cg1, cg2, grad);
    return grad;
}

}  // namespace pwgf
