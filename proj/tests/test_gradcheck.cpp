// Analytic gradients of every graph primitive checked against central
// finite differences at random points, 64-bit.

#include "nerfpose/diff/finite_diff.hpp"
#include "nerfpose/diff/graph.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <functional>

using namespace nerfpose;
using diff::Graph;
using diff::Tensor64;
using diff::Value;

namespace {

using Builder = std::function<Value<double>(Graph<double>&, Value<double>)>;

struct Domain {
  double lo = -1.0, hi = 1.0;
  double kink_shift = 0.0;  // push samples away from |x| = 0
};

void gradcheck(const char* what, std::vector<int64_t> shape, const Builder& build,
               Domain dom = {}, int trials = 10, double tol = 1e-4) {
  for (int t = 0; t < trials; ++t) {
    diff::Rng rng(0x9000 + 131 * t);
    Tensor64 point = testutil::random_tensor<double>(shape, rng, dom.lo, dom.hi);
    if (dom.kink_shift != 0.0)
      for (auto& v : point.data) v += v >= 0 ? dom.kink_shift : -dom.kink_shift;

    Graph<double> g;
    auto x = g.leaf(point, "x", /*requires_grad=*/true);
    auto out = build(g, x);
    auto w = g.constant(testutil::random_tensor<double>(g.value(out).shape, rng));
    auto loss = g.sum(g.mul(out, w));
    g.backward(loss);
    Tensor64 analytic = g.grad(x);

    auto f = [&](const Tensor64& p) {
      g.bind(x, p);
      g.replay();
      return g.value(loss)[0];
    };
    Tensor64 numeric = diff::finite_difference_gradient<double>(f, point, 1e-5);
    const double err = testutil::max_rel_err(analytic, numeric);
    INFO(what << " trial " << t << " max rel err " << err);
    CHECK(err < tol);
  }
}

Tensor64 rand_const(Graph<double>&, std::vector<int64_t> shape, uint64_t seed, double lo = -1.0,
                    double hi = 1.0) {
  diff::Rng rng(seed);
  return testutil::random_tensor<double>(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("gradcheck: elementwise binary ops in every broadcast mode") {
  for (auto op : {diff::Op::Add, diff::Op::Sub, diff::Op::Mul, diff::Op::Div}) {
    auto apply = [op](Graph<double>& g, Value<double> a, Value<double> b) {
      switch (op) {
        case diff::Op::Add: return g.add(a, b);
        case diff::Op::Sub: return g.sub(a, b);
        case diff::Op::Mul: return g.mul(a, b);
        default: return g.div(a, b);
      }
    };
    const char* name = diff::op_name(op);
    // lhs gradient, same shape / scalar / row / col broadcast of a constant rhs
    Domain pos{0.5, 1.5};  // keeps div away from zero
    gradcheck(name, {3, 4}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, x, g.constant(rand_const(g, {3, 4}, 1, 0.5, 1.5)));
    });
    gradcheck(name, {3, 4}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, x, g.constant(rand_const(g, {1}, 2, 0.5, 1.5)));
    });
    gradcheck(name, {3, 4}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, x, g.constant(rand_const(g, {1, 4}, 3, 0.5, 1.5)));
    });
    gradcheck(name, {3, 4}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, x, g.constant(rand_const(g, {3, 1}, 4, 0.5, 1.5)));
    });
    // rhs gradient under each broadcast mode
    gradcheck(name, {3, 4}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, g.constant(rand_const(g, {3, 4}, 5)), x);
    }, pos);
    gradcheck(name, {1}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, g.constant(rand_const(g, {3, 4}, 6)), x);
    }, pos);
    gradcheck(name, {1, 4}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, g.constant(rand_const(g, {3, 4}, 7)), x);
    }, pos);
    gradcheck(name, {3, 1}, [&](Graph<double>& g, Value<double> x) {
      return apply(g, g.constant(rand_const(g, {3, 4}, 8)), x);
    }, pos);
  }
}

TEST_CASE("gradcheck: unary ops") {
  gradcheck("neg", {2, 3}, [](Graph<double>& g, Value<double> x) { return g.neg(x); });
  gradcheck("scale", {2, 3}, [](Graph<double>& g, Value<double> x) { return g.scale(x, 2.5, -0.3); });
  gradcheck("relu", {4, 5}, [](Graph<double>& g, Value<double> x) { return g.relu(x); },
            Domain{-1, 1, 0.05});
  gradcheck("softplus", {4, 5}, [](Graph<double>& g, Value<double> x) { return g.softplus(x); },
            Domain{-3, 3});
  gradcheck("sigmoid", {4, 5}, [](Graph<double>& g, Value<double> x) { return g.sigmoid(x); },
            Domain{-3, 3});
  gradcheck("exp", {4, 5}, [](Graph<double>& g, Value<double> x) { return g.exp(x); });
  gradcheck("cos", {4, 5}, [](Graph<double>& g, Value<double> x) { return g.cos(x); },
            Domain{-3, 3});
  gradcheck("sqrt", {4, 5}, [](Graph<double>& g, Value<double> x) { return g.sqrt(x); },
            Domain{0.3, 2.0});
}

TEST_CASE("gradcheck: matmul and structural ops") {
  gradcheck("matmul lhs", {3, 4}, [](Graph<double>& g, Value<double> x) {
    return g.matmul(x, g.constant(rand_const(g, {4, 5}, 11)));
  });
  gradcheck("matmul rhs", {4, 5}, [](Graph<double>& g, Value<double> x) {
    return g.matmul(g.constant(rand_const(g, {3, 4}, 12)), x);
  });
  gradcheck("transpose", {3, 4}, [](Graph<double>& g, Value<double> x) { return g.transpose(x); });
  gradcheck("reshape", {3, 4}, [](Graph<double>& g, Value<double> x) {
    return g.reshape(x, {2, 6});
  });
  gradcheck("concat_cols", {3, 2}, [](Graph<double>& g, Value<double> x) {
    return g.concat_cols({g.constant(rand_const(g, {3, 3}, 13)), x});
  });
  gradcheck("concat_rows", {2, 4}, [](Graph<double>& g, Value<double> x) {
    return g.concat_rows({x, g.constant(rand_const(g, {3, 4}, 14))});
  });
  gradcheck("slice_cols", {3, 6}, [](Graph<double>& g, Value<double> x) {
    return g.slice_cols(x, 1, 4);
  });
  gradcheck("repeat_rows", {3, 4}, [](Graph<double>& g, Value<double> x) {
    return g.repeat_rows(x, 5);
  });
}

TEST_CASE("gradcheck: reductions") {
  gradcheck("sum", {3, 4}, [](Graph<double>& g, Value<double> x) { return g.sum(x); });
  gradcheck("mean", {3, 4}, [](Graph<double>& g, Value<double> x) { return g.mean(x); });
  gradcheck("row_sum", {3, 4}, [](Graph<double>& g, Value<double> x) { return g.row_sum(x); });
  gradcheck("col_sum", {3, 4}, [](Graph<double>& g, Value<double> x) { return g.col_sum(x); });
}

TEST_CASE("gradcheck: fused linear wrt every operand and activation") {
  for (auto act : {diff::Act::Identity, diff::Act::Relu, diff::Act::Softplus, diff::Act::Sigmoid}) {
    gradcheck("linear/x", {4, 3}, [act](Graph<double>& g, Value<double> x) {
      return g.linear(x, g.constant(rand_const(g, {3, 6}, 21)),
                      g.constant(rand_const(g, {1, 6}, 22)),
                      g.constant(rand_const(g, {1, 6}, 23)), act);
    });
    gradcheck("linear/w", {3, 6}, [act](Graph<double>& g, Value<double> x) {
      return g.linear(g.constant(rand_const(g, {4, 3}, 24)), x,
                      g.constant(rand_const(g, {1, 6}, 25)), act);
    });
    gradcheck("linear/bias", {1, 6}, [act](Graph<double>& g, Value<double> x) {
      return g.linear(g.constant(rand_const(g, {4, 3}, 26)),
                      g.constant(rand_const(g, {3, 6}, 27)), x, act);
    });
    gradcheck("linear/inject", {1, 6}, [act](Graph<double>& g, Value<double> x) {
      return g.linear(g.constant(rand_const(g, {4, 3}, 28)),
                      g.constant(rand_const(g, {3, 6}, 29)), Value<double>{}, x, act);
    });
  }
}

TEST_CASE("gradcheck: positional encoding, volume weights, cross product") {
  gradcheck("pos_enc", {5, 3}, [](Graph<double>& g, Value<double> x) {
    return g.positional_encode(x, 4);
  });
  gradcheck("volume_weights", {2, 6}, [](Graph<double>& g, Value<double> x) {
    return g.volume_weights(x);
  }, Domain{0.0, 2.0});
  gradcheck("cross3 lhs", {4, 3}, [](Graph<double>& g, Value<double> x) {
    return g.cross3(x, g.constant(rand_const(g, {4, 3}, 31)));
  });
  gradcheck("cross3 rhs", {4, 3}, [](Graph<double>& g, Value<double> x) {
    return g.cross3(g.constant(rand_const(g, {4, 3}, 32)), x);
  });
}

TEST_CASE("gradcheck: fused ray expansion and compositing") {
  gradcheck("ray_points/dir", {4, 3}, [](Graph<double>& g, Value<double> x) {
    return g.ray_points(x, g.constant(rand_const(g, {1, 3}, 51)),
                        g.constant(rand_const(g, {20, 1}, 52, 0.5, 2.0)), 5);
  });
  gradcheck("ray_points/center", {1, 3}, [](Graph<double>& g, Value<double> x) {
    return g.ray_points(g.constant(rand_const(g, {4, 3}, 53)), x,
                        g.constant(rand_const(g, {20, 1}, 54, 0.5, 2.0)), 5);
  });
  gradcheck("ray_points/t", {20, 1}, [](Graph<double>& g, Value<double> x) {
    return g.ray_points(g.constant(rand_const(g, {4, 3}, 55)),
                        g.constant(rand_const(g, {1, 3}, 56)), x, 5);
  });
  gradcheck("volume_blend/w", {3, 5}, [](Graph<double>& g, Value<double> x) {
    return g.volume_blend(x, g.constant(rand_const(g, {15, 3}, 57, 0.0, 1.0)),
                          g.constant(rand_const(g, {1, 3}, 58, 0.0, 1.0)));
  }, Domain{0.0, 0.2});
  gradcheck("volume_blend/rgb", {15, 3}, [](Graph<double>& g, Value<double> x) {
    return g.volume_blend(g.constant(rand_const(g, {3, 5}, 59, 0.0, 0.2)), x,
                          g.constant(rand_const(g, {1, 3}, 60, 0.0, 1.0)));
  }, Domain{0.0, 1.0});
  gradcheck("volume_blend/bg", {1, 3}, [](Graph<double>& g, Value<double> x) {
    return g.volume_blend(g.constant(rand_const(g, {3, 5}, 61, 0.0, 0.2)),
                          g.constant(rand_const(g, {15, 3}, 62, 0.0, 1.0)), x);
  }, Domain{0.0, 1.0});
}

TEST_CASE("gradcheck: conv2d and pooling") {
  for (auto act : {diff::Act::Identity, diff::Act::Relu}) {
    gradcheck("conv2d/x s1", {2, 5, 5}, [act](Graph<double>& g, Value<double> x) {
      return g.conv2d(x, g.constant(rand_const(g, {3, 18}, 41)),
                      g.constant(rand_const(g, {1, 3}, 42)), 3, 1, 1, act);
    }, Domain{-1, 1, 0.0}, 5);
    gradcheck("conv2d/x s2", {2, 6, 6}, [act](Graph<double>& g, Value<double> x) {
      return g.conv2d(x, g.constant(rand_const(g, {3, 18}, 43)),
                      g.constant(rand_const(g, {1, 3}, 44)), 3, 2, 1, act);
    }, Domain{-1, 1, 0.0}, 5);
    gradcheck("conv2d/w", {3, 18}, [act](Graph<double>& g, Value<double> x) {
      return g.conv2d(g.constant(rand_const(g, {2, 5, 5}, 45)), x,
                      g.constant(rand_const(g, {1, 3}, 46)), 3, 1, 1, act);
    }, Domain{-1, 1, 0.0}, 5);
    gradcheck("conv2d/bias", {1, 3}, [act](Graph<double>& g, Value<double> x) {
      return g.conv2d(g.constant(rand_const(g, {2, 5, 5}, 47)),
                      g.constant(rand_const(g, {3, 18}, 48)), x, 3, 1, 1, act);
    }, Domain{-1, 1, 0.0}, 5);
  }
  gradcheck("avg_pool2", {2, 4, 4}, [](Graph<double>& g, Value<double> x) {
    return g.avg_pool2(x);
  });
  gradcheck("global_avg_pool", {3, 4, 4}, [](Graph<double>& g, Value<double> x) {
    return g.global_avg_pool(x);
  });
}
