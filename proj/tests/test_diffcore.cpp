#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "mrl/gradcheck.hpp"
#include "mrl/optim.hpp"
#include "mrl/rng.hpp"
#include "mrl/tensor.hpp"

using mrl::ad::Tensor;
namespace ad = mrl::ad;

namespace {

Tensor<double> random_tensor(ad::Shape shape, mrl::Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor<double>::from(std::move(shape), std::move(v));
}

// Independent scalar Adam used as an oracle against the production optimizer.
struct ScalarAdam {
  double m = 0, v = 0;
  long t = 0;
  double update(double param, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return param - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  auto i2 = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {2, 3, 4, 5});
  auto r = ad::matmul(i2, m);
  for (std::size_t k = 0; k < 4; ++k) CHECK(r.value()[k] == doctest::Approx(m.value()[k]));

  auto a = Tensor<double>::from({1, 2}, {1, 2});
  auto b = Tensor<double>::from({2, 1}, {3, 4});
  auto c = ad::matmul(a, b);
  REQUIRE(c.shape() == ad::Shape{1, 1});
  CHECK(c.value()[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  try {
    ad::matmul(a, b);
    FAIL("expected shape error");
  } catch (const mrl::Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
    CHECK(e.kind() == mrl::ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("matmul gradients vs central differences, plain and broadcast-batched") {
  mrl::Rng rng(11);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng);
  auto r1 = mrl::check_gradients({a, b}, [&] { return ad::sum(ad::matmul(a, b)); });
  CHECK(r1.max_rel_err < 1e-7);

  auto batched = random_tensor({2, 3, 2, 4}, rng);
  auto shared = random_tensor({3, 4, 5}, rng);  // broadcasts over leading dim 2
  auto r2 = mrl::check_gradients({batched, shared}, [&] {
    auto prod = ad::matmul(batched, shared);
    return ad::sum(ad::mul(prod, prod));
  });
  CHECK(r2.max_rel_err < 1e-6);
}

TEST_CASE("softmax closed forms and stability") {
  auto z = Tensor<double>::from({2}, {0, 0});
  auto sz = ad::softmax(z, 0);
  CHECK(sz.value()[0] == doctest::Approx(0.5));
  CHECK(sz.value()[1] == doctest::Approx(0.5));

  auto x = Tensor<double>::from({2}, {std::log(2.0), 0.0});
  auto sx = ad::softmax(x, 0);
  CHECK(sx.value()[0] == doctest::Approx(2.0 / 3.0));
  CHECK(sx.value()[1] == doctest::Approx(1.0 / 3.0));

  auto big = Tensor<double>::from({2}, {1000.0, 0.0});
  auto sb = ad::softmax(big, 0);
  CHECK(std::isfinite(sb.value()[0]));
  CHECK(sb.value()[0] == doctest::Approx(1.0));
  CHECK(sb.value()[1] == doctest::Approx(0.0));

  auto bad = Tensor<double>::from({2}, {std::numeric_limits<double>::infinity(), 0.0});
  CHECK_THROWS_AS(ad::softmax(bad, 0), mrl::Error);
}

TEST_CASE("softmax rows sum to one for random finite input") {
  mrl::Rng rng(7);
  auto x = random_tensor({4, 6, 5}, rng, 3.0);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = ad::softmax(x, axis);
    // reduce along `axis` by brute force
    const auto& sh = s.shape();
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sh[i];
    for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        double acc = 0;
        for (std::size_t e = 0; e < sh[axis]; ++e) acc += s.value()[o * sh[axis] * inner + e * inner + in];
        CHECK(std::abs(acc - 1.0) < 1e-6);
      }
  }
}

TEST_CASE("layer_normalize closed forms") {
  auto g1 = Tensor<double>::from({3}, {1, 1, 1});
  auto b0 = Tensor<double>::from({3}, {0, 0, 0});
  auto cst = Tensor<double>::from({3}, {4, 4, 4});
  auto ln = ad::layer_normalize(cst, 0, g1, b0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ln.value()[i] == doctest::Approx(0.0));

  auto g2 = Tensor<double>::from({2}, {1, 1});
  auto z2 = Tensor<double>::from({2}, {0, 0});
  auto x = Tensor<double>::from({2}, {1, 3});
  auto n = ad::layer_normalize(x, 0, g2, z2);
  CHECK(n.value()[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(n.value()[1] == doctest::Approx(1.0).epsilon(1e-4));

  auto gz = Tensor<double>::from({2}, {0, 0});
  auto bc = Tensor<double>::from({2}, {2.5, 2.5});
  auto out = ad::layer_normalize(x, 0, gz, bc);
  CHECK(out.value()[0] == doctest::Approx(2.5));
  CHECK(out.value()[1] == doctest::Approx(2.5));
}

TEST_CASE("layer_normalize output is standardized along axis") {
  mrl::Rng rng(13);
  auto x = random_tensor({3, 7}, rng, 2.0);
  auto g = Tensor<double>::from({7}, std::vector<double>(7, 1.0));
  auto b = Tensor<double>::from({7}, std::vector<double>(7, 0.0));
  auto y = ad::layer_normalize(x, 1, g, b);
  for (std::size_t r = 0; r < 3; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 7; ++c) mean += y.value()[r * 7 + c];
    mean /= 7;
    for (std::size_t c = 0; c < 7; ++c) {
      const double d = y.value()[r * 7 + c] - mean;
      var += d * d;
    }
    var /= 7;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("backward linear and quadratic oracles") {
  auto x = Tensor<double>::from({3}, {5, -2, 0.25});
  x.set_requires_grad(true);
  x.zero_grad();
  auto loss = ad::sum(x);
  ad::backward(loss);
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0));

  auto q = Tensor<double>::from({2}, {1, 2});
  q.set_requires_grad(true);
  q.zero_grad();
  auto l2 = ad::sum(ad::mul(q, q));
  ad::backward(l2);
  CHECK(q.grad()[0] == doctest::Approx(2.0));
  CHECK(q.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = Tensor<double>::from({2}, {1, 2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(ad::backward(ad::mul(x, x)), mrl::Error);
}

TEST_CASE("backward accumulates additively: second pass doubles grads exactly") {
  mrl::Rng rng(3);
  auto x = random_tensor({2, 3}, rng);
  auto w = random_tensor({3, 3}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  x.zero_grad();
  w.zero_grad();
  auto make = [&] {
    auto h = ad::softmax(ad::matmul(x, w), -1);
    return ad::sum(ad::mul(h, h));
  };
  auto l1 = make();
  ad::backward(l1);
  std::vector<double> gx(x.grad().begin(), x.grad().end());
  std::vector<double> gw(w.grad().begin(), w.grad().end());
  auto l2 = make();
  ad::backward(l2);
  for (std::size_t i = 0; i < gx.size(); ++i) CHECK(x.grad()[i] == 2.0 * gx[i]);
  for (std::size_t i = 0; i < gw.size(); ++i) CHECK(w.grad()[i] == 2.0 * gw[i]);
}

TEST_CASE("reachable requires_grad tensors all receive grad buffers") {
  auto x = Tensor<double>::from({2}, {1, 2});
  x.set_requires_grad(true);
  auto mid = ad::scale(x, 3.0);
  auto loss = ad::sum(mid);
  ad::backward(loss);
  CHECK(mid.has_grad());
  CHECK(x.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(3.0));
}

TEST_CASE("elementwise broadcast forward and gradients") {
  auto a = Tensor<double>::from({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from({4, 1}, {10, 20, 30, 40});
  auto s = ad::add(a, b);
  REQUIRE(s.shape() == ad::Shape{2, 4, 3});
  CHECK(s.value()[0] == doctest::Approx(11.0));           // a[0,0,0]+b[0,0]
  CHECK(s.value()[3] == doctest::Approx(21.0));           // a[0,0,0]+b[1,0]
  CHECK(s.value()[12 + 2] == doctest::Approx(6 + 10.0));  // a[1,0,2]+b[0,0]

  mrl::Rng rng(5);
  auto u = random_tensor({2, 1, 3}, rng);
  auto v = random_tensor({4, 1}, rng);
  auto r = mrl::check_gradients({u, v}, [&] {
    auto m = ad::mul(ad::add(u, v), ad::sub(u, v));
    return ad::sum(ad::mul(m, m));
  });
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("scale, add_scalar, reshape, permute, concat, mean_over_axis forward oracles") {
  auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto sc = ad::scale(x, -2.0);
  CHECK(sc.value()[4] == doctest::Approx(-10.0));
  auto as = ad::add_scalar(x, 0.5);
  CHECK(as.value()[0] == doctest::Approx(1.5));

  auto rs = ad::reshape(x, {3, 2});
  REQUIRE(rs.shape() == ad::Shape{3, 2});
  CHECK(rs.value()[5] == doctest::Approx(6.0));

  auto pm = ad::permute(x, {1, 0});  // transpose -> (3,2)
  CHECK(pm.value()[0] == doctest::Approx(1.0));
  CHECK(pm.value()[1] == doctest::Approx(4.0));
  CHECK(pm.value()[2] == doctest::Approx(2.0));

  auto y = Tensor<double>::from({2, 2}, {7, 8, 9, 10});
  auto cc = ad::concat(x, y, 1);
  REQUIRE(cc.shape() == ad::Shape{2, 5});
  std::vector<double> expect = {1, 2, 3, 7, 8, 4, 5, 6, 9, 10};
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(cc.value()[i] == doctest::Approx(expect[i]));

  auto mn = ad::mean_over_axis(x, 0, false);
  REQUIRE(mn.shape() == ad::Shape{3});
  CHECK(mn.value()[0] == doctest::Approx(2.5));
  CHECK(mn.value()[2] == doctest::Approx(4.5));
  auto mk = ad::mean_over_axis(x, 1, true);
  REQUIRE(mk.shape() == ad::Shape{2, 1});
  CHECK(mk.value()[1] == doctest::Approx(5.0));
}

TEST_CASE("composed graph exercising every primitive matches finite differences") {
  mrl::Rng rng(17);
  auto x = random_tensor({3, 4, 5}, rng);
  auto w = random_tensor({5, 6}, rng, 0.5);
  auto gain = random_tensor({6}, rng, 0.2);
  auto bias = random_tensor({6}, rng, 0.2);
  auto shift = random_tensor({6}, rng);
  auto build = [&] {
    auto h = ad::add(ad::matmul(x, w), shift);        // (3,4,6)
    auto attn = ad::softmax(ad::scale(h, 0.7), -1);   // (3,4,6)
    auto ln = ad::layer_normalize(h, -1, gain, bias); // (3,4,6)
    auto m = ad::mul(attn, ad::add_scalar(ln, 0.1));
    auto p = ad::permute(m, {1, 0, 2});               // (4,3,6)
    auto r = ad::reshape(p, {12, 6});
    auto cc = ad::concat(r, r, 1);                    // (12,12)
    auto pooled = ad::mean_over_axis(cc, 0, false);   // (12)
    auto quad = ad::mul(pooled, pooled);
    return ad::add(ad::sum(quad), ad::scale(ad::sum(ad::sub(m, attn)), 0.25));
  };
  // 60 + 30 + 6 + 6 + 6 = 108 coordinates here; other gradcheck cases in this
  // suite push the sampled total past 200.
  auto res = mrl::check_gradients({x, w, gain, bias, shift}, build);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("linear graph gradcheck is exact to 1e-10") {
  mrl::Rng rng(19);
  auto x = random_tensor({4, 4}, rng);
  auto r = mrl::check_gradients({x}, [&] { return ad::sum(ad::scale(x, 1.75)); });
  CHECK(r.max_rel_err < 1e-10);
}

TEST_CASE("adam first step magnitude and zero-grad identity") {
  mrl::ParamGroup<double> pg;
  pg.add("p", Tensor<double>::from({1}, {1.0}));
  pg.zero_grads();
  pg.at("p").grad()[0] = 0.5;
  mrl::Adam<double> opt;
  opt.step(pg, 1e-3);
  // first bias-corrected step moves by ~lr regardless of grad magnitude
  CHECK(pg.at("p").value()[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  CHECK(opt.step_count() == 1);

  mrl::ParamGroup<double> pg2;
  pg2.add("q", Tensor<double>::from({3}, {1, 2, 3}));
  pg2.zero_grads();
  mrl::Adam<double> opt2;
  opt2.step(pg2, 1e-3);
  CHECK(pg2.at("q").value()[0] == 1.0);
  CHECK(pg2.at("q").value()[1] == 2.0);
  CHECK(pg2.at("q").value()[2] == 3.0);
}

TEST_CASE("adam matches independent scalar oracle over successive steps") {
  mrl::ParamGroup<double> pg;
  pg.add("w", Tensor<double>::from({1}, {0.8}));
  mrl::Adam<double> opt;
  ScalarAdam oracle;
  double ref = 0.8;
  const double grads[] = {0.3, 0.3, -0.1, 0.05};
  for (const double g : grads) {
    pg.zero_grads();
    pg.at("w").grad()[0] = g;
    opt.step(pg, 2e-3);
    ref = oracle.update(ref, g, 2e-3);
    CHECK(std::abs(pg.at("w").value()[0] - ref) < 1e-12);
  }
}

TEST_CASE("adam reports the parameter missing a gradient") {
  mrl::ParamGroup<double> pg;
  pg.add("alpha", Tensor<double>::from({2}, {1, 2}));
  mrl::Adam<double> opt;
  try {
    opt.step(pg, 1e-3);
    FAIL("expected missing-grad error");
  } catch (const mrl::Error& e) {
    CHECK(e.kind() == mrl::ErrorKind::MissingGrad);
    CHECK(std::string(e.what()).find("alpha") != std::string::npos);
  }
}

TEST_CASE("param group rejects duplicate names and counts parameters") {
  mrl::ParamGroup<float> pg;
  pg.add("a", Tensor<float>::zeros({2, 3}));
  pg.add("b", Tensor<float>::zeros({4}));
  CHECK(pg.total_params() == 10);
  CHECK_THROWS_AS(pg.add("a", Tensor<float>::zeros({1})), mrl::Error);
}

TEST_CASE("cosine schedule endpoints, midpoint, monotonicity, clamping") {
  mrl::CosineSchedule s{5e-4, 0.0, 1000};
  CHECK(s.lr_at(0) == doctest::Approx(5e-4));
  CHECK(s.lr_at(1000) == doctest::Approx(0.0));
  CHECK(s.lr_at(500) == doctest::Approx(2.5e-4));
  double prev = s.lr_at(0);
  for (long t = 1; t <= 1000; ++t) {
    const double cur = s.lr_at(t);
    CHECK(cur <= prev + 1e-18);
    prev = cur;
  }
  CHECK(s.lr_at(1200) == doctest::Approx(0.0));  // clamped, warns on stderr
  CHECK(s.lr_at(-5) == doctest::Approx(5e-4));
}

TEST_CASE("no-grad guard suppresses graph recording") {
  auto x = Tensor<double>::from({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor<double> y;
  {
    ad::NoGradGuard ng;
    y = ad::mul(x, x);
  }
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("grad clipping rescales to the requested norm") {
  mrl::ParamGroup<double> pg;
  pg.add("w", Tensor<double>::from({2}, {0, 0}));
  pg.zero_grads();
  pg.at("w").grad()[0] = 3.0;
  pg.at("w").grad()[1] = 4.0;
  const double pre = mrl::clip_grad_norm(pg, 1.0);
  CHECK(pre == doctest::Approx(5.0));
  const double post = std::hypot(pg.at("w").grad()[0], pg.at("w").grad()[1]);
  CHECK(post == doctest::Approx(1.0).epsilon(1e-9));
}
