#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pwgf/net.hpp"

using namespace pwgf;
using Catch::Approx;

namespace {

double rel_err(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

NetworkParams random_params(std::uint64_t seed, double scale, std::size_t H = 10, bool biases = false) {
    Rng rng(seed);
    NetworkParams p = NetworkParams::random(H, rng, scale);
    if (biases) {
        for (auto& b : p.b1) b = scale * rng.normal();
        for (auto& b : p.b2) b = scale * rng.normal();
        p.b3 = scale * rng.normal();
    }
    return p;
}

}  // namespace

TEST_CASE("parameter count and flat layout", "[net]") {
    for (std::size_t H : {1, 4, 10, 40}) CHECK(net_param_count(H) == H * H + 4 * H + 1);
    const NetworkParams p = random_params(3, 0.7, 6, true);
    const auto flat = p.flatten();
    REQUIRE(flat.size() == net_param_count(6));
    const NetworkParams q = NetworkParams::unflatten(flat, 6);
    CHECK(q.flatten() == flat);
    CHECK(q.W2 == p.W2);
    CHECK(q.b3 == p.b3);
}

TEST_CASE("zero parameters give a zero network", "[net]") {
    const NetworkParams p = NetworkParams::zeros(10);
    for (double w : {-3.0, 0.0, 0.4, 12.0}) {
        const NetEval e = net_eval(p.view(), w);
        CHECK(e.g == 0.0);
        CHECK(e.dg == 0.0);
        CHECK(e.d2g == 0.0);
    }
}

TEST_CASE("single tanh path has closed-form jets", "[net]") {
    // g(w) = b3 + w3 tanh(W2 tanh(W1 w + b1) + b2) through one unit
    NetworkParams p = NetworkParams::zeros(3);
    p.W1[0] = 1.3;
    p.b1[0] = 0.2;
    p.W2[0] = 0.8;
    p.b2[0] = -0.1;
    p.w3[0] = 1.7;
    p.b3 = 0.05;
    const double w = 0.0;
    const double t1 = std::tanh(0.2);
    const double expect = 0.05 + 1.7 * std::tanh(0.8 * t1 - 0.1);
    const NetEval e = net_eval(p.view(), w);
    CHECK(e.g == Approx(expect).epsilon(1e-15));
    const double h = 1e-4;
    const double fd = (net_value(p.view(), w + h) - net_value(p.view(), w - h)) / (2 * h);
    CHECK(rel_err(e.dg, fd) <= 1e-6);
}

TEST_CASE("input derivatives match finite differences", "[net]") {
    for (double scale : {0.01, 0.5, 1.5}) {
        const NetworkParams p = random_params(0, scale, 10, true);
        const auto v = p.view();
        for (double w : {-0.9, -0.2, 0.5, 1.0, 7.0}) {
            const NetEval e = net_eval(v, w);
            const double h = 1e-4;
            const NetEval ep = net_eval(v, w + h), em = net_eval(v, w - h);
            const double fd1 = (ep.g - em.g) / (2 * h);
            const double fd2 = (ep.g - 2 * e.g + em.g) / (h * h);
            const double fd2b = (ep.dg - em.dg) / (2 * h);
            const double fd3 = (ep.d2g - em.d2g) / (2 * h);
            INFO("scale " << scale << " w " << w);
            CHECK(std::fabs(e.dg - fd1) <= 1e-5 * std::max(std::fabs(fd1), 1e-6 * scale));
            CHECK(std::fabs(e.d2g - fd2b) <= 1e-5 * std::max(std::fabs(fd2b), 1e-6 * scale));
            CHECK(std::fabs(e.d3g - fd3) <= 1e-5 * std::max(std::fabs(fd3), 1e-4 * scale));
            if (scale >= 0.5) CHECK(std::fabs(e.d2g - fd2) <= 1e-4 * std::max(std::fabs(fd2), 1e-3));
        }
    }
}

TEST_CASE("second derivative at the documented point", "[net]") {
    const NetworkParams p = random_params(0, 0.01);
    const double w = 0.5, h = 1e-4;
    const NetEval e = net_eval(p.view(), w);
    const double fd = (net_eval(p.view(), w + h).dg - net_eval(p.view(), w - h).dg) / (2 * h);
    CHECK(rel_err(e.d2g, fd) <= 1e-5);
}

TEST_CASE("backprop with zero cotangents is zero", "[net]") {
    const NetworkParams p = random_params(1, 0.3);
    const NetEval e = net_eval(p.view(), 0.3);
    for (double g : net_backprop(p.view(), e.tape, 0.0, 0.0, 0.0)) CHECK(g == 0.0);
}

TEST_CASE("backprop at zero parameters hits only the output bias", "[net]") {
    const NetworkParams p = NetworkParams::zeros(5);
    const NetEval e = net_eval(p.view(), 0.7);
    const auto g = net_backprop(p.view(), e.tape, 1.0, 0.0, 0.0);
    const NetLayout lay{5};
    for (std::size_t k = 0; k < g.size(); ++k) CHECK(g[k] == (k == lay.b3() ? 1.0 : 0.0));
}

TEST_CASE("backprop matches finite-difference parameter derivatives", "[net]") {
    const NetworkParams p = random_params(0, 0.6, 6, true);
    const double w = 0.37;
    const double c0 = 1.0, c1 = 0.3, c2 = -0.2;
    const NetEval e = net_eval(p.view(), w);
    const auto grad = net_backprop(p.view(), e.tape, c0, c1, c2);
    auto objective = [&](const std::vector<double>& flat) {
        const NetEval q = net_eval(NetView::from_flat(flat, 6), w);
        return c0 * q.g + c1 * q.dg + c2 * q.d2g;
    };
    const auto base = p.flatten();
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::fabs(g));
    for (std::size_t k = 0; k < base.size(); ++k) {
        auto a = base, b = base;
        const double h = 1e-5;
        a[k] += h;
        b[k] -= h;
        const double fd = (objective(a) - objective(b)) / (2 * h);
        INFO("parameter " << k);
        CHECK(std::fabs(grad[k] - fd) <= 1e-5 * std::max(std::fabs(fd), 1e-3 * gmax));
    }
}

TEST_CASE("backprop is linear in the cotangents", "[net]") {
    const NetworkParams p = random_params(2, 0.8, 5, true);
    const NetEval e = net_eval(p.view(), -0.4);
    const auto a = net_backprop(p.view(), e.tape, 1.0, 0.0, 0.0);
    const auto b = net_backprop(p.view(), e.tape, 0.0, 1.0, 0.0);
    const auto c = net_backprop(p.view(), e.tape, 0.0, 0.0, 1.0);
    const auto mix = net_backprop(p.view(), e.tape, 2.0, -0.5, 3.0);
    for (std::size_t k = 0; k < mix.size(); ++k)
        CHECK(mix[k] == Approx(2.0 * a[k] - 0.5 * b[k] + 3.0 * c[k]).margin(1e-13));
}

TEST_CASE("backprop rejects a tape of the wrong width", "[net]") {
    const NetworkParams p = random_params(2, 0.8, 5);
    const NetworkParams q = random_params(2, 0.8, 4);
    const NetEval e = net_eval(q.view(), 0.1);
    CHECK_THROWS_AS(net_backprop(p.view(), e.tape, 1.0, 0.0, 0.0), DomainError);
}

TEST_CASE("zero biases make the network exactly odd", "[net]") {
    const NetworkParams p = random_params(4, 1.2);
    for (double w : {0.1, 0.77, 3.0, 15.5}) {
        const NetEval a = net_eval(p.view(), w), b = net_eval(p.view(), -w);
        CHECK(a.g == -b.g);
        CHECK(a.dg == b.dg);
        CHECK(a.d2g == -b.d2g);
        CHECK(net_value(p.view(), -w) == -net_value(p.view(), w));
    }
    CHECK(net_eval(p.view(), 0.0).g == 0.0);
}
