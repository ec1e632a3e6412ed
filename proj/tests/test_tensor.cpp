#include <doctest.h>

#include <cmath>
#include <random>

#include "error.hpp"
#include "grad_check.hpp"
#include "ops.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "support.hpp"

using namespace despeckler;
using testing::random_tensor;

namespace {

oracle::Vec vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

// Reduces an arbitrary output to a scalar with fixed random weights so that
// every output coordinate contributes a distinct gradient.
Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed = 99) {
  return sum(mul(y, random_tensor<double>(y.shape(), seed)));
}

// Keeps values away from the kinks of relu/abs so central differences are valid.
Tensor<double> away_from_zero(Shape shape, std::uint64_t seed) {
  Tensor<double> t = random_tensor<double>(shape, seed);
  for (double& v : t.mutable_data()) v = v < 0 ? v - 0.1 : v + 0.1;
  return t;
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_SUITE("tensor-core") {

TEST_CASE("elementwise forward values") {
  Tensor<double> a({2, 2}, {1, -2, 3, -4});
  Tensor<double> b({2, 2}, {0.5, 0.5, 2, 2});
  CHECK(vec(add(a, b)) == oracle::Vec{1.5, -1.5, 5, -2});
  CHECK(vec(sub(a, b)) == oracle::Vec{0.5, -2.5, 1, -6});
  CHECK(vec(mul(a, b)) == oracle::Vec{0.5, -1, 6, -8});
  CHECK(vec(scale(a, 2.0)) == oracle::Vec{2, -4, 6, -8});
  CHECK(sum(a).item() == -2.0);
  CHECK(vec(relu(a)) == oracle::Vec{1, 0, 3, 0});
  CHECK(vec(abs(a)) == oracle::Vec{1, 2, 3, 4});
  const auto g = vec(gelu(a));
  for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(oracle::gelu(a.data()[i])).epsilon(1e-14));
}

TEST_CASE("shape mismatch is reported with both shapes") {
  Tensor<double> a({2, 3}), b({3, 2});
  try {
    add(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, Tensor<double>({2, 2})), Error);
}

TEST_CASE("matmul, transpose and linear match loops") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = random_tensor<double>({3, 4}, seed), b = random_tensor<double>({4, 5}, seed + 100);
    auto c = vec(matmul(a, b));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.at({i, k}) * b.at({k, j});
        CHECK(c[i * 5 + j] == doctest::Approx(acc).epsilon(1e-12));
      }
    auto t = transpose(a);
    CHECK(t.shape() == Shape{4, 3});
    CHECK(t.at({2, 1}) == a.at({1, 2}));
    auto w = random_tensor<double>({6, 4}, seed + 7), bias = random_tensor<double>({6}, seed + 8);
    auto y = vec(linear(a, w, bias));
    auto ref = oracle::linear(vec(a), 3, 4, vec(w), vec(bias), 6);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
  auto a = random_tensor<double>({4, 7}, 3, -5, 5);
  auto s = softmax(a, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double z = 0, total = 0;
    for (std::size_t c = 0; c < 7; ++c) z += std::exp(a.at({r, c}));
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(s.at({r, c}) == doctest::Approx(std::exp(a.at({r, c})) / z).epsilon(1e-12));
      total += s.at({r, c});
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Large logits must not overflow.
  Tensor<double> big({1, 2}, {1000.0, 1000.0});
  CHECK(softmax(big, 1).at({0, 0}) == doctest::Approx(0.5));
  a.mutable_data()[9] = NAN;
  try {
    softmax(a, 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("9") != std::string::npos);
  }
}

TEST_CASE("layer norm matches the direct formula") {
  auto x = random_tensor<double>({5, 8}, 11, -3, 3);
  auto g = random_tensor<double>({8}, 12), o = random_tensor<double>({8}, 13);
  auto y = vec(layer_norm(x, g, o));
  auto ref = oracle::layer_norm(vec(x), 5, 8, vec(g), vec(o));
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv2d matches the nested-loop oracle") {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t groups = 1 + rng() % 2;
    const std::size_t cin = groups * (1 + rng() % 3), cout = groups * (1 + rng() % 3);
    const std::size_t k = 1 + 2 * (rng() % 2), stride = 1 + rng() % 2, pad = rng() % 2;
    const std::size_t h = 5 + rng() % 4, w = 5 + rng() % 4;
    auto in = random_tensor<double>({cin, h, w}, seed);
    auto wt = random_tensor<double>({cout, cin / groups, k, k}, seed + 1000);
    auto b = random_tensor<double>({cout}, seed + 2000);
    auto y = conv2d(in, wt, b, Conv2dOptions{stride, pad, groups});
    const oracle::ConvShape cs{cin, h, w, cout, k, stride, pad, groups};
    const auto bv = vec(b);
    const auto ref = oracle::conv2d(vec(in), vec(wt), &bv, cs);
    REQUIRE(y.shape() == Shape{cout, cs.out_h(), cs.out_w()});
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(y.data()[i] - ref[i]) < 1e-12);
    }
  }
}

TEST_CASE("conv2d without bias and with bad shapes") {
  auto in = random_tensor<double>({2, 4, 4}, 1);
  auto wt = random_tensor<double>({3, 2, 3, 3}, 2);
  auto y = conv2d(in, wt, Tensor<double>(), Conv2dOptions{1, 1, 1});
  const auto ref = oracle::conv2d(vec(in), vec(wt), nullptr, {2, 4, 4, 3, 3, 1, 1, 1});
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.data()[i] - ref[i]) < 1e-12);
  CHECK_THROWS_AS(conv2d(in, random_tensor<double>({3, 3, 3, 3}, 2), Tensor<double>(), {}), Error);
  CHECK_THROWS_AS(conv2d(in, wt, Tensor<double>(), Conv2dOptions{1, 0, 2}), Error);
}

TEST_CASE("upsample, reshape and token layout") {
  Tensor<double> a({1, 2, 2}, {1, 2, 3, 4});
  CHECK(vec(upsample_nearest2x(a)) ==
        oracle::Vec{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  CHECK_THROWS_AS(reshape(a, Shape{3}), Error);
  auto map = random_tensor<double>({3, 2, 4}, 4);
  auto tokens = map_to_tokens(map);
  CHECK(tokens.shape() == Shape{8, 3});
  CHECK(vec(tokens) == oracle::map_to_tokens(vec(map), 8, 3));
  CHECK(vec(tokens_to_map(tokens, 2, 4)) == vec(map));
  CHECK_THROWS_AS(tokens_to_map(tokens, 3, 3), Error);
}

TEST_CASE("slice and concat columns are inverse") {
  auto a = random_tensor<double>({3, 6}, 8);
  auto parts = std::vector<Tensor<double>>{slice_cols(a, 0, 2), slice_cols(a, 2, 4)};
  CHECK(vec(concat_cols(parts)) == vec(a));
  CHECK_THROWS_AS(slice_cols(a, 4, 3), Error);
}

TEST_CASE("dropout: identity at rate 0, unbiased otherwise, reproducible") {
  auto a = random_tensor<double>({100, 100}, 1, 1, 2);
  Philox rng(3, 0);
  auto same = dropout(a, 0.0, rng);
  CHECK(vec(same) == vec(a));
  Tensor<double> ones({200, 200}, 1.0);
  Philox r1(5, 1), r2(5, 1);
  auto d1 = dropout(ones, 0.25, r1), d2 = dropout(ones, 0.25, r2);
  CHECK(vec(d1) == vec(d2));
  double mean = 0;
  for (double v : d1.data()) mean += v;
  mean /= d1.numel();
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
  CHECK_THROWS_AS(dropout(ones, 1.0, r1), Error);
}

TEST_CASE("backward: leaf accumulation, interior recompute, errors") {
  Tensor<double> x({3}, {1, 2, 3});
  x.set_requires_grad();
  auto y = sum(mul(x, x));
  y.backward();
  CHECK(vec(Tensor<double>({3}, std::vector<double>(x.grad().begin(), x.grad().end()))) ==
        oracle::Vec{2, 4, 6});
  y.backward();
  CHECK(x.grad()[2] == 12.0);  // leaf gradients accumulate
  x.zero_grad();
  CHECK(x.grad()[2] == 0.0);
  CHECK_THROWS_AS(mul(x, x).backward(), Error);           // not a scalar
  CHECK_THROWS_AS(sum(Tensor<double>({2})).backward(), Error);  // nothing requires grad
  {
    NoGradGuard guard;
    auto z = sum(mul(x, x));
    CHECK(z.is_leaf());
    CHECK_FALSE(z.requires_grad());
  }
  // A shared sub-expression receives gradient from both uses.
  x.zero_grad();
  auto s = mul(x, x);
  sum(add(s, s)).backward();
  CHECK(x.grad()[0] == 4.0);
}

TEST_CASE("float and double instantiations agree") {
  auto a = random_tensor<double>({4, 4}, 1);
  auto af = cast<float>(a);
  auto y = cast<double>(gelu(af));
  auto ref = gelu(a);
  for (std::size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-6));
}

TEST_CASE("gradient check: every op") {
  auto check = [](const char* name, const std::function<Tensor<double>(const Tensor<double>&)>& f,
                  const Tensor<double>& x) {
    const GradCheckReport r = grad_check(f, x);
    INFO(name << ": " << r.worst);
    CHECK(r.max_rel_error < kGradTol);
    CHECK(r.coordinates_checked == x.numel());
  };
  auto other = random_tensor<double>({3, 4}, 21);
  check("add", [&](const auto& x) { return weighted_sum(add(x, other)); }, random_tensor<double>({3, 4}, 1));
  check("sub", [&](const auto& x) { return weighted_sum(sub(other, x)); }, random_tensor<double>({3, 4}, 2));
  check("mul", [&](const auto& x) { return weighted_sum(mul(x, x)); }, random_tensor<double>({3, 4}, 3));
  check("scale", [](const auto& x) { return weighted_sum(scale(x, -2.5)); }, random_tensor<double>({3, 4}, 4));
  check("relu", [](const auto& x) { return weighted_sum(relu(x)); }, away_from_zero({3, 4}, 5));
  check("abs", [](const auto& x) { return weighted_sum(abs(x)); }, away_from_zero({3, 4}, 6));
  check("gelu", [](const auto& x) { return weighted_sum(gelu(x)); }, random_tensor<double>({3, 4}, 7, -3, 3));
  check("softmax", [](const auto& x) { return weighted_sum(softmax(x, 1)); }, random_tensor<double>({3, 4}, 8));
  check("reshape", [](const auto& x) { return weighted_sum(reshape(x, Shape{2, 6})); }, random_tensor<double>({3, 4}, 9));
  check("transpose", [](const auto& x) { return weighted_sum(transpose(x)); }, random_tensor<double>({3, 4}, 10));
  auto rhs = random_tensor<double>({4, 5}, 22);
  check("matmul/lhs", [&](const auto& x) { return weighted_sum(matmul(x, rhs)); }, random_tensor<double>({3, 4}, 11));
  check("matmul/rhs", [&](const auto& x) { return weighted_sum(matmul(other, x)); }, random_tensor<double>({4, 2}, 12));
  auto w = random_tensor<double>({5, 4}, 23), b = random_tensor<double>({5}, 24);
  check("linear/x", [&](const auto& x) { return weighted_sum(linear(x, w, b)); }, random_tensor<double>({3, 4}, 13));
  check("linear/w", [&](const auto& x) { return weighted_sum(linear(other, x, b)); }, random_tensor<double>({5, 4}, 14));
  check("linear/b", [&](const auto& x) { return weighted_sum(linear(other, w, x)); }, random_tensor<double>({5}, 15));
  check("slice/concat", [](const auto& x) {
    return weighted_sum(concat_cols(std::vector<Tensor<double>>{slice_cols(x, 2, 2), slice_cols(x, 0, 2)}));
  }, random_tensor<double>({3, 4}, 16));
  auto g = random_tensor<double>({4}, 25), o = random_tensor<double>({4}, 26);
  check("layer_norm/x", [&](const auto& x) { return weighted_sum(layer_norm(x, g, o)); }, random_tensor<double>({3, 4}, 17));
  check("layer_norm/gain", [&](const auto& x) { return weighted_sum(layer_norm(other, x, o)); }, random_tensor<double>({4}, 18));
  check("layer_norm/offset", [&](const auto& x) { return weighted_sum(layer_norm(other, g, x)); }, random_tensor<double>({4}, 19));
  check("upsample", [](const auto& x) { return weighted_sum(upsample_nearest2x(x)); }, random_tensor<double>({2, 3, 3}, 20));
  check("tokens_to_map", [](const auto& x) { return weighted_sum(tokens_to_map(x, 2, 2)); }, random_tensor<double>({4, 3}, 27));
  Philox rng(1, 1);
  // Fresh generator per evaluation keeps the mask fixed.
  check("dropout", [](const auto& x) {
    Philox r(7, 3);
    return weighted_sum(dropout(x, 0.3, r));
  }, random_tensor<double>({3, 4}, 28));
}

TEST_CASE("gradient check: conv2d inputs, weights and bias") {
  for (auto [stride, pad, groups] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 1, 2}, {2, 3, 1}}) {
    const std::size_t cin = 2, cout = 4, k = groups == 1 && pad == 3 ? 7 : 3;
    auto in = random_tensor<double>({cin, 8, 8}, 31);
    auto wt = random_tensor<double>({cout, cin / groups, k, k}, 32);
    auto b = random_tensor<double>({cout}, 33);
    const Conv2dOptions opts{static_cast<std::size_t>(stride), static_cast<std::size_t>(pad),
                             static_cast<std::size_t>(groups)};
    INFO("stride " << stride << " pad " << pad << " groups " << groups);
    CHECK(grad_check([&](const auto& x) { return weighted_sum(conv2d(x, wt, b, opts)); }, in).max_rel_error < kGradTol);
    CHECK(grad_check([&](const auto& x) { return weighted_sum(conv2d(in, x, b, opts)); }, wt).max_rel_error < kGradTol);
    CHECK(grad_check([&](const auto& x) { return weighted_sum(conv2d(in, wt, x, opts)); }, b).max_rel_error < kGradTol);
  }
}

TEST_CASE("grad_check rejects a nondeterministic function") {
  auto x = random_tensor<double>({4}, 1);
  std::uint64_t calls = 0;
  CHECK_THROWS_AS(grad_check([&](const auto& t) {
    Philox r(calls++, 0);
    return sum(dropout(t, 0.5, r));
  }, x), Error);
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(0.0, 0.0) == 0.0);
}

}  // TEST_SUITE
