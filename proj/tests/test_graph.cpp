#include "cxrage/graph.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"

using cxrage::check_gradients;
using cxrage::finite_diff_gradient;
using cxrage::GradCheckReport;
using cxrage::Graph;
using cxrage::NodeId;
using cxrage::OpKind;
using cxrage::Shape;
using cxrage::Tensor;

namespace {

Tensor<double> randn(std::mt19937_64& rng, Shape shape, double stddev = 1.0) {
    std::normal_distribution<double> d(0.0, stddev);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = d(rng);
    return t;
}

std::string throws_message(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::invalid_argument& e) {
        return e.what();
    }
    return "";
}

// Reduces a node of any shape to a scalar through fixed (non-learned)
// weights so per-op gradient checks have a scalar root.
NodeId reduce_to_scalar(Graph<double>& g, NodeId y) {
    NodeId flat = y;
    if (g.value(y).rank() == 4) flat = g.global_avg_pool(y);
    const Tensor<double>& v = g.value(flat);
    const std::size_t n = v.shape[0], c = v.shape[1];
    Tensor<double> w({1, c});
    for (std::size_t i = 0; i < c; ++i) w[i] = 0.3 + 0.1 * static_cast<double>(i);
    NodeId fc = g.fully_connected(flat, g.input(w), g.input(Tensor<double>({1})));
    Tensor<double> target({n, 1});
    for (std::size_t i = 0; i < n; ++i) target[i] = 0.25 * static_cast<double>(i) - 0.4;
    return g.mse_loss(fc, g.input(std::move(target)));
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::full({1, 1, 3, 3}, 1.0));
    NodeId k = g.input(Tensor<double>::full({1, 1, 3, 3}, 1.0));
    NodeId b = g.input(Tensor<double>({1}));
    NodeId y = g.conv2d(x, k, b, 1, 0);
    CHECK(g.value(y).shape == Shape{1, 1, 1, 1});
    CHECK(g.value(y)[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d identity 1x1 kernel selects channel 0") {
    std::mt19937_64 rng(11);
    Graph<double> g;
    Tensor<double> xv = randn(rng, {2, 3, 4, 4});
    NodeId x = g.input(xv);
    Tensor<double> kv({1, 3, 1, 1});
    kv[0] = 1.0;
    NodeId y = g.conv2d(x, g.input(kv), g.input(Tensor<double>({1})), 1, 0);
    CHECK(g.value(y).shape == Shape{2, 1, 4, 4});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t w = 0; w < 4; ++w)
                CHECK(g.value(y).at4(n, 0, h, w) == doctest::Approx(xv.at4(n, 0, h, w)));
}

TEST_CASE("conv2d same padding keeps spatial dims") {
    std::mt19937_64 rng(12);
    Graph<double> g;
    NodeId x = g.input(randn(rng, {1, 1, 4, 4}));
    NodeId y = g.conv2d(x, g.input(randn(rng, {1, 1, 3, 3})), g.input(Tensor<double>({1})), 1, 1);
    CHECK(g.value(y).shape == Shape{1, 1, 4, 4});
}

TEST_CASE("conv2d bias is added per output channel") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>::full({1, 1, 2, 2}, 0.0));
    NodeId y = g.conv2d(x, g.input(Tensor<double>::full({2, 1, 1, 1}, 1.0)),
                        g.input(Tensor<double>({2}, {0.5, -1.5})), 1, 0);
    CHECK(g.value(y).at4(0, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(g.value(y).at4(0, 1, 1, 1) == doctest::Approx(-1.5));
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes named") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>({1, 2, 5, 5}));
    NodeId k = g.input(Tensor<double>({1, 3, 3, 3}));
    NodeId b = g.input(Tensor<double>({1}));
    const std::string msg = throws_message([&] { g.conv2d(x, k, b, 1, 0); });
    CHECK(msg.find("1x2x5x5") != std::string::npos);
    CHECK(msg.find("1x3x3x3") != std::string::npos);

    NodeId k2 = g.input(Tensor<double>({1, 2, 7, 7}));
    CHECK_THROWS_AS(g.conv2d(x, k2, b, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(g.conv2d(x, k2, b, 0, 3), std::invalid_argument);
    NodeId b2 = g.input(Tensor<double>({4}));
    CHECK_THROWS_AS(g.conv2d(x, g.input(Tensor<double>({1, 2, 3, 3})), b2, 1, 0),
                    std::invalid_argument);
}

TEST_CASE("conv2d stride divides output dims by floor rule") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>({1, 1, 7, 9}));
    NodeId y = g.conv2d(x, g.input(Tensor<double>({1, 1, 3, 3})), g.input(Tensor<double>({1})), 2, 1);
    // (7 + 2 - 3)/2 + 1 = 4, (9 + 2 - 3)/2 + 1 = 5
    CHECK(g.value(y).shape == Shape{1, 1, 4, 5});
}

TEST_CASE("relu clamps negatives only") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>({3}, {-1.0, 0.0, 2.0}));
    NodeId y = g.relu(x);
    CHECK(g.value(y).data == std::vector<double>{0.0, 0.0, 2.0});

    NodeId neg = g.relu(g.input(Tensor<double>::full({4}, -3.5)));
    for (double v : g.value(neg).data) CHECK(v == 0.0);
    Tensor<double> pos({3}, {0.1, 5.0, 42.0});
    NodeId same = g.relu(g.input(pos));
    CHECK(g.value(same).data == pos.data);
}

TEST_CASE("sigmoid midpoint and saturation") {
    Graph<double> g;
    NodeId y = g.sigmoid(g.input(Tensor<double>({1}, {0.0})));
    CHECK(g.value(y)[0] == doctest::Approx(0.5));

    NodeId hi = g.sigmoid(g.input(Tensor<double>({1}, {100.0})));
    CHECK(g.value(hi)[0] < 1.0);
    CHECK(g.value(hi)[0] > 1.0 - 1e-12);
}

TEST_CASE("sigmoid stays strictly inside (0,1) at extremes") {
    Graph<double> gd;
    NodeId yd = gd.sigmoid(gd.input(Tensor<double>({4}, {-1e300, -750.0, 750.0, 1e300})));
    for (double v : gd.value(yd).data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    Graph<float> gf;
    NodeId yf = gf.sigmoid(gf.input(Tensor<float>({4}, {-1e30f, -100.0f, 100.0f, 1e30f})));
    for (float v : gf.value(yf).data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("sigmoid derivative at zero is 0.25 via backward") {
    Graph<double> g;
    NodeId w = g.input(Tensor<double>({1}, {0.0}), true);
    NodeId s = g.sigmoid(w);
    g.backward(s);
    CHECK(g.grad(w)[0] == doctest::Approx(0.25));
}

TEST_CASE("avg_pool2d means and shapes") {
    Graph<double> g;
    NodeId c = g.avg_pool2d(g.input(Tensor<double>::full({1, 2, 4, 4}, 3.25)), 2, 2);
    for (double v : g.value(c).data) CHECK(v == doctest::Approx(3.25));

    NodeId m = g.avg_pool2d(g.input(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4})), 2, 2);
    CHECK(g.value(m).shape == Shape{1, 1, 1, 1});
    CHECK(g.value(m)[0] == doctest::Approx(2.5));

    NodeId s = g.avg_pool2d(g.input(Tensor<double>({1, 1, 4, 4})), 2, 2);
    CHECK(g.value(s).shape == Shape{1, 1, 2, 2});

    CHECK_THROWS_AS(g.avg_pool2d(g.input(Tensor<double>({1, 1, 2, 2})), 3, 1),
                    std::invalid_argument);
}

TEST_CASE("global_avg_pool drops spatial dims") {
    Graph<double> g;
    NodeId c = g.global_avg_pool(g.input(Tensor<double>::full({2, 3, 5, 5}, -1.5)));
    CHECK(g.value(c).shape == Shape{2, 3});
    for (double v : g.value(c).data) CHECK(v == doctest::Approx(-1.5));

    NodeId m = g.global_avg_pool(g.input(Tensor<double>({1, 1, 1, 2}, {0.0, 2.0})));
    CHECK(g.value(m)[0] == doctest::Approx(1.0));
}

TEST_CASE("concat_channels order, counts and round-trip") {
    std::mt19937_64 rng(13);
    Graph<double> g;
    Tensor<double> av = randn(rng, {2, 3, 4, 4});
    Tensor<double> bv = randn(rng, {2, 5, 4, 4});
    NodeId a = g.input(av);
    NodeId b = g.input(bv);

    NodeId single = g.concat_channels({a});
    CHECK(g.value(single).data == av.data);

    NodeId y = g.concat_channels({a, b});
    CHECK(g.value(y).shape == Shape{2, 8, 4, 4});
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 4; ++w)
                    CHECK(g.value(y).at4(n, c, h, w) == av.at4(n, c, h, w));
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t h = 0; h < 4; ++h)
                for (std::size_t w = 0; w < 4; ++w)
                    CHECK(g.value(y).at4(n, 3 + c, h, w) == bv.at4(n, c, h, w));
    }

    NodeId bad = g.input(Tensor<double>({2, 1, 5, 4}));
    CHECK_THROWS_AS(g.concat_channels({a, bad}), std::invalid_argument);
    CHECK_THROWS_AS(g.concat_channels({}), std::invalid_argument);
}

TEST_CASE("fully_connected affine map") {
    Graph<double> g;
    Tensor<double> eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    Tensor<double> xv({2, 3}, {1, 2, 3, 4, 5, 6});
    NodeId same = g.fully_connected(g.input(xv), g.input(eye), g.input(Tensor<double>({3})));
    CHECK(g.value(same).data == xv.data);

    NodeId one = g.fully_connected(g.input(Tensor<double>({2, 3})),
                                   g.input(Tensor<double>({1, 3})), g.input(Tensor<double>({1})));
    CHECK(g.value(one).shape == Shape{2, 1});

    NodeId v = g.fully_connected(g.input(Tensor<double>({1, 2}, {1, 2})),
                                 g.input(Tensor<double>({1, 2}, {3, 4})),
                                 g.input(Tensor<double>({1}, {5})));
    CHECK(g.value(v)[0] == doctest::Approx(16.0));

    CHECK_THROWS_AS(g.fully_connected(g.input(Tensor<double>({2, 3})),
                                      g.input(Tensor<double>({1, 4})),
                                      g.input(Tensor<double>({1}))),
                    std::invalid_argument);
}

TEST_CASE("mse_loss values and empty batch rejection") {
    Graph<double> g;
    NodeId same = g.mse_loss(g.input(Tensor<double>({2, 1}, {0.3, 0.7})),
                             g.input(Tensor<double>({2, 1}, {0.3, 0.7})));
    CHECK(g.value(same)[0] == doctest::Approx(0.0));

    NodeId unit = g.mse_loss(g.input(Tensor<double>({2, 1})),
                             g.input(Tensor<double>::full({2, 1}, 1.0)));
    CHECK(g.value(unit)[0] == doctest::Approx(1.0));

    NodeId sq = g.mse_loss(g.input(Tensor<double>({1, 1}, {0.2})),
                           g.input(Tensor<double>({1, 1}, {0.5})));
    CHECK(g.value(sq)[0] == doctest::Approx(0.09));

    CHECK_THROWS_AS(g.mse_loss(g.input(Tensor<double>({0, 1})), g.input(Tensor<double>({0, 1}))),
                    std::invalid_argument);
    CHECK_THROWS_AS(g.mse_loss(g.input(Tensor<double>({2, 1})), g.input(Tensor<double>({3, 1}))),
                    std::invalid_argument);
}

TEST_CASE("r2 objective is ss_res over ss_tot") {
    Graph<double> g;
    NodeId y = g.r2_objective_loss(g.input(Tensor<double>({3, 1}, {0.2, 0.4, 0.9})),
                                   g.input(Tensor<double>({3, 1}, {0.0, 0.5, 1.0})));
    // ss_res = 0.04 + 0.01 + 0.01, ss_tot = 0.25 + 0 + 0.25
    CHECK(g.value(y)[0] == doctest::Approx(0.12));

    CHECK_THROWS_AS(g.r2_objective_loss(g.input(Tensor<double>({3, 1})),
                                        g.input(Tensor<double>::full({3, 1}, 0.4))),
                    std::invalid_argument);
    CHECK_THROWS_AS(g.r2_objective_loss(g.input(Tensor<double>({1, 1})),
                                        g.input(Tensor<double>({1, 1}))),
                    std::invalid_argument);
}

TEST_CASE("backward leaves unused parameters at zero and rejects non-scalar roots") {
    std::mt19937_64 rng(14);
    Graph<double> g;
    NodeId used = g.input(randn(rng, {2, 1}), true);
    NodeId unused = g.input(randn(rng, {3, 3}), true);
    NodeId loss = g.mse_loss(used, g.input(Tensor<double>({2, 1})));
    g.backward(loss);
    CHECK(g.grad(unused).shape == Shape{3, 3});
    for (double v : g.grad(unused).data) CHECK(v == 0.0);
    CHECK(g.grad(used)[0] != 0.0);

    NodeId wide = g.input(Tensor<double>({2, 2}));
    CHECK_THROWS_AS(g.backward(wide), std::invalid_argument);
}

TEST_CASE("scaling the loss scales every gradient linearly") {
    const double alpha = 3.75;
    std::mt19937_64 rng(15);
    const Tensor<double> xv = randn(rng, {1, 2, 6, 6});
    const Tensor<double> kv = randn(rng, {3, 2, 3, 3}, 0.4);
    const Tensor<double> bv = randn(rng, {3}, 0.1);
    const Tensor<double> wv = randn(rng, {1, 3}, 0.5);
    const Tensor<double> cv = randn(rng, {1}, 0.5);
    const Tensor<double> tv = randn(rng, {1, 1});

    auto build = [&](Graph<double>& g, bool scaled, std::vector<NodeId>& leaves) {
        NodeId x = g.input(xv, true);
        NodeId k = g.input(kv, true);
        NodeId b = g.input(bv, true);
        NodeId w = g.input(wv, true);
        NodeId c = g.input(cv, true);
        leaves = {x, k, b, w, c};
        NodeId h = g.relu(g.conv2d(x, k, b, 1, 1));
        NodeId p = g.sigmoid(g.fully_connected(g.global_avg_pool(h), w, c));
        NodeId loss = g.mse_loss(p, g.input(tv));
        return scaled ? g.scale(loss, alpha) : loss;
    };

    Graph<double> base, scaled;
    std::vector<NodeId> bl, sl;
    base.backward(build(base, false, bl));
    scaled.backward(build(scaled, true, sl));
    for (std::size_t i = 0; i < bl.size(); ++i) {
        const auto& gb = base.grad(bl[i]).data;
        const auto& gs = scaled.grad(sl[i]).data;
        REQUIRE(gb.size() == gs.size());
        for (std::size_t j = 0; j < gb.size(); ++j) {
            const double want = alpha * gb[j];
            const double rel = std::abs(gs[j] - want) / std::max(1e-300, std::abs(want));
            CHECK(rel <= 1e-12);
        }
    }
}

TEST_CASE("finite_diff_gradient matches analytic derivatives") {
    const auto square = [](const Tensor<double>& t) { return t[0] * t[0]; };
    Tensor<double> at3({1}, {3.0});
    Tensor<double> fd = finite_diff_gradient<double>(square, at3, 1e-5);
    CHECK(std::abs(fd[0] - 6.0) <= 1e-8);

    const auto constant = [](const Tensor<double>&) { return 4.2; };
    Tensor<double> zeros = finite_diff_gradient<double>(constant, Tensor<double>({2, 3}), 1e-5);
    for (double v : zeros.data) CHECK(v == 0.0);

    const auto sum_sigmoid = [](const Tensor<double>& t) {
        double acc = 0;
        for (double v : t.data) acc += 1.0 / (1.0 + std::exp(-v));
        return acc;
    };
    Tensor<double> fd2 = finite_diff_gradient<double>(sum_sigmoid, Tensor<double>({4}), 1e-5);
    for (double v : fd2.data) CHECK(v == doctest::Approx(0.25).epsilon(1e-9));

    CHECK_THROWS_AS(finite_diff_gradient<double>(square, at3, 0.0), std::invalid_argument);
}

TEST_CASE("forward shape arithmetic holds for random shapes") {
    std::mt19937_64 rng(16);
    std::uniform_int_distribution<std::size_t> d2(1, 2), d3(1, 3), d4(1, 4), d8(1, 8);
    for (int it = 0; it < 110; ++it) {
        const std::size_t n = d2(rng), c = d3(rng);
        const std::size_t h = 3 + d8(rng), w = 3 + d8(rng);
        Graph<double> g;
        NodeId x = g.input(randn(rng, {n, c, h, w}));

        const std::size_t o = d4(rng);
        const std::size_t kh = d3(rng), kw = d3(rng);
        const std::size_t stride = d2(rng), pad = d2(rng) - 1;
        NodeId conv = g.conv2d(x, g.input(Tensor<double>({o, c, kh, kw})),
                               g.input(Tensor<double>({o})), stride, pad);
        CHECK(g.value(conv).shape ==
              Shape{n, o, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1});

        const std::size_t win = d3(rng), pstride = d2(rng);
        NodeId pool = g.avg_pool2d(x, win, pstride);
        CHECK(g.value(pool).shape ==
              Shape{n, c, (h - win) / pstride + 1, (w - win) / pstride + 1});

        CHECK(g.value(g.global_avg_pool(x)).shape == Shape{n, c});

        const std::size_t c2 = d4(rng);
        NodeId cat = g.concat_channels({x, g.input(Tensor<double>({n, c2, h, w}))});
        CHECK(g.value(cat).shape == Shape{n, c + c2, h, w});

        const std::size_t m = d4(rng);
        NodeId fc = g.fully_connected(g.global_avg_pool(x), g.input(Tensor<double>({m, c})),
                                      g.input(Tensor<double>({m})));
        CHECK(g.value(fc).shape == Shape{n, m});

        CHECK(g.value(g.relu(x)).shape == g.value(x).shape);
        CHECK(g.value(g.sigmoid(x)).shape == g.value(x).shape);
        CHECK(g.value(g.scale(x, 2.0)).shape == g.value(x).shape);
    }
}

TEST_CASE("per-op gradients match finite differences") {
    std::mt19937_64 rng(17);
    const double eps = 1e-5;

    const auto run = [&](const std::vector<Tensor<double>>& pts,
                         const std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>& b) {
        const GradCheckReport r = check_gradients<double>(pts, b, eps);
        CHECK(r.max_rel_error <= 1e-6);
    };

    SUBCASE("conv2d stride 1 pad 1") {
        run({randn(rng, {2, 2, 5, 5}), randn(rng, {3, 2, 3, 3}, 0.5), randn(rng, {3}, 0.3)},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                return reduce_to_scalar(g, g.conv2d(v[0], v[1], v[2], 1, 1));
            });
    }
    SUBCASE("conv2d stride 2 pad 0 rectangular kernel") {
        run({randn(rng, {1, 3, 6, 7}), randn(rng, {2, 3, 3, 2}, 0.5), randn(rng, {2}, 0.3)},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                return reduce_to_scalar(g, g.conv2d(v[0], v[1], v[2], 2, 0));
            });
    }
    SUBCASE("conv2d 1x1") {
        run({randn(rng, {2, 4, 3, 3}), randn(rng, {2, 4, 1, 1}, 0.5), randn(rng, {2}, 0.3)},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                return reduce_to_scalar(g, g.conv2d(v[0], v[1], v[2], 1, 0));
            });
    }
    SUBCASE("avg_pool2d") {
        run({randn(rng, {2, 2, 5, 5})}, [](Graph<double>& g, const std::vector<NodeId>& v) {
            return reduce_to_scalar(g, g.avg_pool2d(v[0], 2, 2));
        });
    }
    SUBCASE("global_avg_pool") {
        run({randn(rng, {2, 3, 4, 4})}, [](Graph<double>& g, const std::vector<NodeId>& v) {
            return reduce_to_scalar(g, g.global_avg_pool(v[0]));
        });
    }
    SUBCASE("concat_channels") {
        run({randn(rng, {2, 2, 3, 3}), randn(rng, {2, 3, 3, 3})},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                return reduce_to_scalar(g, g.concat_channels({v[0], v[1]}));
            });
    }
    SUBCASE("fully_connected") {
        run({randn(rng, {3, 4}), randn(rng, {2, 4}, 0.5), randn(rng, {2}, 0.3)},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                Graph<double>& gg = g;
                NodeId y = gg.fully_connected(v[0], v[1], v[2]);
                Tensor<double> w({1, 2}, {0.7, -0.2});
                NodeId fc = gg.fully_connected(y, gg.input(w), gg.input(Tensor<double>({1})));
                return gg.mse_loss(fc, gg.input(Tensor<double>({3, 1})));
            });
    }
    SUBCASE("sigmoid and relu") {
        run({randn(rng, {4, 1})}, [](Graph<double>& g, const std::vector<NodeId>& v) {
            return g.mse_loss(g.sigmoid(v[0]), g.input(Tensor<double>({4, 1})));
        });
        run({Tensor<double>({4, 1}, {-1.3, 0.8, 2.2, -0.4})},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                return g.mse_loss(g.relu(v[0]), g.input(Tensor<double>::full({4, 1}, 0.5)));
            });
    }
    SUBCASE("mse and r2 losses including target gradients") {
        run({randn(rng, {5, 1}), randn(rng, {5, 1})},
            [](Graph<double>& g, const std::vector<NodeId>& v) { return g.mse_loss(v[0], v[1]); });
        run({randn(rng, {5, 1}), randn(rng, {5, 1})},
            [](Graph<double>& g, const std::vector<NodeId>& v) {
                return g.r2_objective_loss(v[0], v[1]);
            });
    }
    SUBCASE("scale") {
        run({randn(rng, {3, 1})}, [](Graph<double>& g, const std::vector<NodeId>& v) {
            return g.mse_loss(g.scale(v[0], -1.7), g.input(Tensor<double>({3, 1})));
        });
    }
}

TEST_CASE("random conv-pool-fc networks pass the gradient check") {
    for (int net = 0; net < 5; ++net) {
        std::mt19937_64 rng(100 + net);
        std::uniform_int_distribution<std::size_t> cd(1, 3), od(2, 4), hd(5, 8);
        const std::size_t n = 1 + net % 2, c = cd(rng), o1 = od(rng), o2 = od(rng);
        const std::size_t h = hd(rng), w = hd(rng);
        const std::size_t stride = 1 + net % 2, pad = net % 2;
        const bool pool = net % 3 != 0;

        std::vector<Tensor<double>> pts;
        pts.push_back(randn(rng, {n, c, h, w}));
        pts.push_back(randn(rng, {o1, c, 3, 3}, 0.4));
        pts.push_back(randn(rng, {o1}, 0.2));
        pts.push_back(randn(rng, {o2, o1, 1, 1}, 0.4));
        pts.push_back(randn(rng, {o2}, 0.2));
        pts.push_back(randn(rng, {1, o2}, 0.5));
        pts.push_back(randn(rng, {1}, 0.2));
        pts.push_back(randn(rng, {n, 1}, 0.5));

        const auto build = [=](Graph<double>& g, const std::vector<NodeId>& v) {
            NodeId y = g.relu(g.conv2d(v[0], v[1], v[2], stride, pad));
            if (pool) y = g.avg_pool2d(y, 2, 2);
            y = g.relu(g.conv2d(y, v[3], v[4], 1, 0));
            NodeId p = g.sigmoid(g.fully_connected(g.global_avg_pool(y), v[5], v[6]));
            return g.mse_loss(p, v[7]);
        };
        std::size_t total = 0;
        for (const auto& p : pts) total += p.numel();
        REQUIRE(total <= 5000);

        const GradCheckReport r = check_gradients<double>(pts, build, 1e-5);
        INFO("net ", net, " max_rel_error ", r.max_rel_error);
        CHECK(r.max_rel_error <= 1e-4);
        CHECK(r.worst_parameter_index < total);
    }
}

TEST_CASE("graph bookkeeping accessors") {
    Graph<double> g;
    NodeId x = g.input(Tensor<double>({1, 1}, {2.0}), true);
    CHECK(g.size() == 1);
    CHECK(g.kind(x) == OpKind::Input);
    CHECK(g.requires_grad(x));
    NodeId y = g.sigmoid(x);
    CHECK(g.size() == 2);
    CHECK(g.kind(y) == OpKind::Sigmoid);
    CHECK(g.inputs_of(y) == std::vector<std::size_t>{x.index});
    // grad before backward reads as zeros of the value shape
    CHECK(g.grad(y).shape == Shape{1, 1});
    CHECK(g.grad(y)[0] == 0.0);
}
