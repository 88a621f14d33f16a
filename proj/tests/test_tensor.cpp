#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "pretext/rng.hpp"
#include "pretext/tensor.hpp"

using namespace pretext;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad, float lo = -1.0f,
                     float hi = 1.0f) {
  std::vector<float> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : data) x = static_cast<float>(rng.uniform(lo, hi));
  return make_tensor(std::move(shape), std::move(data), requires_grad);
}

// Random positive weights turn any tensor-valued op into a scalar loss with
// dense, nontrivial gradients. The mean keeps the loss O(1) so float32
// finite differences stay above their noise floor.
Tensor weighted_sum(const Tensor& t, Rng& rng) {
  std::vector<float> w(static_cast<size_t>(t.numel()));
  for (auto& x : w) x = static_cast<float>(rng.uniform(0.25, 1.0));
  return reduce_mean(mul(t, make_tensor(t.shape(), std::move(w))));
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

// ---- matmul ----

TEST_CASE("matmul matches the worked 2x2 example") {
  auto a = make_tensor({2, 2}, {1, 2, 3, 4});
  auto b = make_tensor({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  CHECK(c.data() == std::vector<float>{19, 22, 43, 50});
}

TEST_CASE("matmul agrees with the naive oracle") {
  Rng rng(11);
  auto a = random_tensor(rng, {7, 5}, false);
  auto b = random_tensor(rng, {5, 9}, false);
  auto c = matmul(a, b);
  auto ref = oracle::naive_matmul(a.data(), 7, 5, b.data(), 9);
  for (size_t i = 0; i < ref.size(); ++i) {
    CHECK(c.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = make_tensor({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul gradients pass finite differences") {
  Rng rng(21);
  auto a = random_tensor(rng, {4, 3}, true);
  auto b = random_tensor(rng, {3, 5}, true);
  Rng wr(22);
  auto rep = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(22);
        return weighted_sum(matmul(in[0], in[1]), local);
      },
      {a, b});
  CHECK_MESSAGE(rep.ok, rep.worst);
}

// ---- elementwise ----

TEST_CASE("binary elementwise values and broadcast scalar") {
  auto a = make_tensor({2, 2}, {1, 2, 3, 4});
  auto b = make_tensor({2, 2}, {4, 3, 2, 1});
  CHECK(add(a, b).data() == std::vector<float>{5, 5, 5, 5});
  CHECK(sub(a, b).data() == std::vector<float>{-3, -1, 1, 3});
  CHECK(mul(a, b).data() == std::vector<float>{4, 6, 6, 4});
  CHECK(divide(a, b).data() == std::vector<float>{0.25f, 2.0f / 3.0f, 1.5f, 4});
  auto s = scalar(2.0f);
  CHECK(add(a, s).data() == std::vector<float>{3, 4, 5, 6});
  CHECK(mul(a, s).data() == std::vector<float>{2, 4, 6, 8});
  CHECK_THROWS_AS(add(a, make_tensor({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("division by zero raises DomainError") {
  auto a = make_tensor({2}, {1, 2});
  auto b = make_tensor({2}, {1, 0});
  CHECK_THROWS_AS(divide(a, b), DomainError);
  CHECK_THROWS_AS(divide(a, scalar(0.0f)), DomainError);
}

TEST_CASE("unary elementwise domains") {
  CHECK_THROWS_AS(vlog(make_tensor({2}, {1.0f, 0.0f})), DomainError);
  CHECK_THROWS_AS(vlog(make_tensor({1}, {-1.0f})), DomainError);
  CHECK_THROWS_AS(vsqrt(make_tensor({1}, {-0.5f})), DomainError);
  CHECK_THROWS_AS(vpow(make_tensor({1}, {-2.0f}), 0.5f), DomainError);
  CHECK(vpow(make_tensor({1}, {-2.0f}), 2.0f).item() == 4.0f);
  CHECK(vlog_eps(make_tensor({1}, {0.0f}), 1e-5f).item() ==
        doctest::Approx(std::log(1e-5f)));
  CHECK_THROWS_AS(vlog_eps(make_tensor({1}, {-0.1f}), 1e-5f), DomainError);
  CHECK(vsqrt_eps(make_tensor({1}, {0.0f}), 1e-4f).item() == doctest::Approx(0.01));
}

TEST_CASE("non-finite op output raises NumericError immediately") {
  CHECK_THROWS_AS(vexp(make_tensor({1}, {200.0f})), NumericError);
  // overflow through multiplication
  auto big = make_tensor({1}, {3e38f});
  CHECK_THROWS_AS(mul(big, big), NumericError);
  // and raw construction from non-finite data
  CHECK_THROWS_AS(make_tensor({1}, {std::numeric_limits<float>::infinity()}), NumericError);
}

TEST_CASE("elementwise gradients pass finite differences") {
  Rng rng(31);
  auto check_unary = [&](auto fn, float lo, float hi) {
    auto x = random_tensor(rng, {3, 4}, true, lo, hi);
    auto rep = oracle::grad_check(
        [&](std::vector<Tensor>& in) {
          Rng local(77);
          return weighted_sum(fn(in[0]), local);
        },
        {x});
    CHECK_MESSAGE(rep.ok, rep.worst);
  };
  check_unary([](const Tensor& t) { return vexp(t); }, -1.0f, 1.0f);
  check_unary([](const Tensor& t) { return vlog(t); }, 0.5f, 2.0f);
  check_unary([](const Tensor& t) { return relu(t); }, 0.1f, 1.0f);    // away from the kink
  check_unary([](const Tensor& t) { return relu(t); }, -1.0f, -0.1f);  // fully clipped side
  check_unary([](const Tensor& t) { return vsqrt(t); }, 0.5f, 2.0f);
  check_unary([](const Tensor& t) { return vpow(t, 3.0f); }, 0.3f, 1.5f);
  check_unary([](const Tensor& t) { return square(t); }, -1.0f, 1.0f);
  check_unary([](const Tensor& t) { return scale(t, -2.5f); }, -1.0f, 1.0f);
  check_unary([](const Tensor& t) { return vlog_eps(t, 1e-2f); }, 0.0f, 1.0f);
  check_unary([](const Tensor& t) { return vsqrt_eps(t, 1e-2f); }, 0.0f, 1.0f);

  auto a = random_tensor(rng, {3, 4}, true);
  auto b = random_tensor(rng, {3, 4}, true, 0.5f, 2.0f);
  for (auto kind : {EwKind::add, EwKind::sub, EwKind::mul, EwKind::div}) {
    auto rep = oracle::grad_check(
        [&, kind](std::vector<Tensor>& in) {
          Rng local(78);
          return weighted_sum(elementwise(kind, in[0], in[1]), local);
        },
        {a, b});
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
  // scalar b broadcast path
  auto sc = make_tensor({1}, {1.7f}, true);
  auto rep = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(79);
        return weighted_sum(mul(in[0], in[1]), local);
      },
      {a, sc});
  CHECK_MESSAGE(rep.ok, rep.worst);
}

// ---- reductions ----

TEST_CASE("reduce values over all and per axis") {
  auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reduce_sum(a).item() == 21.0f);
  CHECK(reduce_mean(a).item() == doctest::Approx(3.5));
  CHECK(reduce_max(a).item() == 6.0f);
  auto s0 = reduce(ReduceKind::sum, a, 0);
  CHECK(s0.shape() == Shape{1, 3});
  CHECK(s0.data() == std::vector<float>{5, 7, 9});
  auto s1 = reduce(ReduceKind::sum, a, 1);
  CHECK(s1.shape() == Shape{2, 1});
  CHECK(s1.data() == std::vector<float>{6, 15});
  auto m0 = reduce(ReduceKind::mean, a, 0);
  CHECK(m0.data() == std::vector<float>{2.5f, 3.5f, 4.5f});
  auto x1 = reduce(ReduceKind::max, a, 1);
  CHECK(x1.data() == std::vector<float>{3, 6});
  CHECK_THROWS_AS(reduce(ReduceKind::sum, a, 2), ValueError);
}

TEST_CASE("reduce max ties send the gradient to the first occurrence") {
  auto a = make_tensor({4}, {2, 5, 5, 1}, true);
  auto m = reduce_max(a);
  backward(m);
  CHECK(a.grad() == std::vector<float>{0, 1, 0, 0});
}

TEST_CASE("reduce gradients pass finite differences") {
  Rng rng(41);
  // spread values so the max argument is stable under the FD step
  std::vector<float> vals = {0.1f, 0.9f, -0.4f, 0.5f, -0.8f, 0.3f};
  auto a = make_tensor({2, 3}, vals, true);
  for (auto kind : {ReduceKind::sum, ReduceKind::mean, ReduceKind::max}) {
    for (std::optional<int> axis : {std::optional<int>{}, std::optional<int>{0}, std::optional<int>{1}}) {
      auto rep = oracle::grad_check(
          [&, kind, axis](std::vector<Tensor>& in) {
            Rng local(42);
            return weighted_sum(reduce(kind, in[0], axis), local);
          },
          {a});
      CHECK_MESSAGE(rep.ok, rep.worst);
    }
  }
}

// ---- layout ----

TEST_CASE("transpose, reshape, concat_rows, select_entries values") {
  auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = transpose(a);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.data() == std::vector<float>{1, 4, 2, 5, 3, 6});

  auto r = reshape(a, {3, 2});
  CHECK(r.data() == a.data());
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);

  auto b = make_tensor({1, 3}, {7, 8, 9});
  auto cat = concat_rows(a, b);
  CHECK(cat.shape() == Shape{3, 3});
  CHECK(cat.data() == std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK_THROWS_AS(concat_rows(a, make_tensor({1, 2}, {1, 2})), ShapeError);

  auto sel = select_entries(a, {0, 1}, {2, 0});
  CHECK(sel.shape() == Shape{2, 1});
  CHECK(sel.data() == std::vector<float>{3, 4});
  CHECK_THROWS_AS(select_entries(a, {0}, {3}), ValueError);
  CHECK_THROWS_AS(select_entries(a, {2}, {0}), ValueError);
}

TEST_CASE("select_entries backward scatter-adds duplicates") {
  auto a = make_tensor({2, 2}, {1, 2, 3, 4}, true);
  auto sel = select_entries(a, {0, 0, 1}, {1, 1, 0});
  backward(reduce_sum(sel));
  CHECK(a.grad() == std::vector<float>{0, 2, 1, 0});
}

TEST_CASE("layout gradients pass finite differences") {
  Rng rng(51);
  auto a = random_tensor(rng, {3, 4}, true);
  auto b = random_tensor(rng, {2, 4}, true);
  auto rep1 = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(52);
        return weighted_sum(transpose(in[0]), local);
      },
      {a});
  CHECK_MESSAGE(rep1.ok, rep1.worst);
  auto rep2 = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(53);
        return weighted_sum(reshape(in[0], {4, 3}), local);
      },
      {a});
  CHECK_MESSAGE(rep2.ok, rep2.worst);
  auto rep3 = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(54);
        return weighted_sum(concat_rows(in[0], in[1]), local);
      },
      {a, b});
  CHECK_MESSAGE(rep3.ok, rep3.worst);
  auto rep4 = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(55);
        return weighted_sum(select_entries(in[0], {0, 2, 2}, {1, 3, 3}), local);
      },
      {a});
  CHECK_MESSAGE(rep4.ok, rep4.worst);
}

// ---- row-structured ops ----

TEST_CASE("softmax family forward properties") {
  Rng rng(61);
  auto a = random_tensor(rng, {5, 7}, false, -3.0f, 3.0f);
  auto sm = softmax_rows(a);
  auto lsm = log_softmax_rows(a);
  auto lse = logsumexp_rows(a);
  for (int64_t i = 0; i < 5; ++i) {
    double row_sum = 0.0;
    for (int64_t j = 0; j < 7; ++j) {
      const float p = sm.data()[static_cast<size_t>(i * 7 + j)];
      CHECK(p >= 0.0f);
      row_sum += p;
      CHECK(lsm.data()[static_cast<size_t>(i * 7 + j)] ==
            doctest::Approx(std::log(p)).epsilon(1e-4));
      // log_softmax = x - logsumexp
      CHECK(lsm.data()[static_cast<size_t>(i * 7 + j)] ==
            doctest::Approx(a.data()[static_cast<size_t>(i * 7 + j)] -
                            lse.data()[static_cast<size_t>(i)])
                .epsilon(1e-5));
    }
    CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  // shifting a row by a constant leaves softmax unchanged
  auto shifted = add(a, scalar(100.0f));
  auto sm2 = softmax_rows(shifted);
  for (size_t i = 0; i < sm.data().size(); ++i) {
    CHECK(sm2.data()[i] == doctest::Approx(sm.data()[i]).epsilon(1e-5));
  }
}

TEST_CASE("softmax family gradients pass finite differences") {
  Rng rng(62);
  auto a = random_tensor(rng, {3, 5}, true, -2.0f, 2.0f);
  for (int which = 0; which < 3; ++which) {
    auto rep = oracle::grad_check(
        [&, which](std::vector<Tensor>& in) {
          Rng local(63);
          Tensor y = which == 0   ? softmax_rows(in[0])
                     : which == 1 ? log_softmax_rows(in[0])
                                  : logsumexp_rows(in[0]);
          return weighted_sum(y, local);
        },
        {a});
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
}

TEST_CASE("normalize_rows produces unit rows and rejects zero rows") {
  Rng rng(64);
  auto a = random_tensor(rng, {4, 6}, false, -2.0f, 2.0f);
  auto y = normalize_rows(a);
  for (int64_t i = 0; i < 4; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < 6; ++j) {
      ss += static_cast<double>(y.data()[static_cast<size_t>(i * 6 + j)]) *
            y.data()[static_cast<size_t>(i * 6 + j)];
    }
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-6));
  }
  auto z = make_tensor({2, 3}, {1, 2, 3, 0, 0, 0});
  CHECK_THROWS_AS(normalize_rows(z), DomainError);
}

TEST_CASE("normalize_rows gradient passes finite differences") {
  Rng rng(65);
  auto a = random_tensor(rng, {3, 4}, true, 0.5f, 2.0f);
  auto rep = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(66);
        return weighted_sum(normalize_rows(in[0]), local);
      },
      {a});
  CHECK_MESSAGE(rep.ok, rep.worst);
}

TEST_CASE("bce_with_logits value matches a double reference and grads check out") {
  Rng rng(71);
  auto x = random_tensor(rng, {4, 3}, true, -4.0f, 4.0f);
  std::vector<float> tdata(12);
  for (auto& t : tdata) t = rng.uniform() < 0.5 ? 0.0f : 1.0f;
  auto t = make_tensor({4, 3}, tdata);
  double ref = 0.0;
  for (size_t i = 0; i < 12; ++i) {
    const double xi = x.data()[i], ti = tdata[i];
    ref += std::max(xi, 0.0) - xi * ti + std::log1p(std::exp(-std::abs(xi)));
  }
  ref /= 12.0;
  CHECK(bce_with_logits(x, t).item() == doctest::Approx(ref).epsilon(1e-5));

  // extreme logits stay finite
  auto xe = make_tensor({2}, {80.0f, -80.0f});
  auto te = make_tensor({2}, {1.0f, 0.0f});
  CHECK(bce_with_logits(xe, te).item() == doctest::Approx(0.0).epsilon(1e-6));

  CHECK_THROWS_AS(bce_with_logits(x, make_tensor({4, 3}, std::vector<float>(12, 1.5f))),
                  ValueError);

  auto rep = oracle::grad_check(
      [&](std::vector<Tensor>& in) { return bce_with_logits(in[0], t); }, {x});
  CHECK_MESSAGE(rep.ok, rep.worst);
}

TEST_CASE("attn_pool matches the loop oracle and grads check out") {
  Rng rng(81);
  const int64_t B = 3, T = 4, H = 5;
  auto frames = random_tensor(rng, {B * T, H}, true);
  auto weights = random_tensor(rng, {B, T}, true, 0.0f, 1.0f);
  auto out = attn_pool(frames, weights);
  REQUIRE(out.shape() == Shape{B, H});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t h = 0; h < H; ++h) {
      double acc = 0.0;
      for (int64_t t = 0; t < T; ++t) {
        acc += static_cast<double>(weights.data()[static_cast<size_t>(b * T + t)]) *
               frames.data()[static_cast<size_t>((b * T + t) * H + h)];
      }
      CHECK(out.data()[static_cast<size_t>(b * H + h)] == doctest::Approx(acc).epsilon(1e-5));
    }
  }
  CHECK_THROWS_AS(attn_pool(random_tensor(rng, {B * T + 1, H}, false), weights), ShapeError);

  auto rep = oracle::grad_check(
      [&](std::vector<Tensor>& in) {
        Rng local(82);
        return weighted_sum(attn_pool(in[0], in[1]), local);
      },
      {frames, weights});
  CHECK_MESSAGE(rep.ok, rep.worst);
}

TEST_CASE("rowvec broadcasts: values, domains, gradients") {
  auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  auto v = make_tensor({1, 3}, {1, 10, 100});
  CHECK(add_rowvec(a, v).data() == std::vector<float>{2, 12, 103, 5, 15, 106});
  CHECK(sub_rowvec(a, v).data() == std::vector<float>{0, -8, -97, 3, -5, -94});
  CHECK(mul_rowvec(a, v).data() == std::vector<float>{1, 20, 300, 4, 50, 600});
  CHECK(div_rowvec(a, v).data() == std::vector<float>{1, 0.2f, 0.03f, 4, 0.5f, 0.06f});
  CHECK_THROWS_AS(div_rowvec(a, make_tensor({1, 3}, {1, 0, 1})), DomainError);
  CHECK_THROWS_AS(add_rowvec(a, make_tensor({1, 2}, {1, 2})), ShapeError);

  Rng rng(91);
  auto ar = random_tensor(rng, {4, 3}, true);
  auto vr = random_tensor(rng, {1, 3}, true, 0.5f, 2.0f);
  using Fn = Tensor (*)(const Tensor&, const Tensor&);
  for (Fn fn : {static_cast<Fn>(add_rowvec), static_cast<Fn>(sub_rowvec),
                static_cast<Fn>(mul_rowvec), static_cast<Fn>(div_rowvec)}) {
    auto rep = oracle::grad_check(
        [&, fn](std::vector<Tensor>& in) {
          Rng local(92);
          return weighted_sum(fn(in[0], in[1]), local);
        },
        {ar, vr});
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
}

// ---- batch norm ----

TEST_CASE("batch_norm worked example and moment properties") {
  auto bn = make_batch_norm(1, "bn");
  bn.gamma.data()[0] = 3.0f;
  bn.beta.data()[0] = 1.0f;
  auto x = make_tensor({2, 1}, {0.0f, 2.0f});
  auto y = batch_norm(x, bn, /*training=*/true);
  CHECK(y.data()[0] == doctest::Approx(-1.999985).epsilon(1e-5));
  CHECK(y.data()[1] == doctest::Approx(3.999985).epsilon(1e-5));
  // running stats moved one momentum step from (0, 1) toward (1, 1)
  CHECK(bn.running_mean.data()[0] == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(bn.running_var.data()[0] == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0).epsilon(1e-6));
}

TEST_CASE("batch_norm normalizes each column in training mode") {
  Rng rng(101);
  auto bn = make_batch_norm(4, "bn");
  auto x = random_tensor(rng, {16, 4}, false, -3.0f, 5.0f);
  auto y = batch_norm(x, bn, true);
  for (int64_t j = 0; j < 4; ++j) {
    double m = 0.0, s2 = 0.0;
    for (int64_t i = 0; i < 16; ++i) m += y.data()[static_cast<size_t>(i * 4 + j)];
    m /= 16;
    for (int64_t i = 0; i < 16; ++i) {
      const double d = y.data()[static_cast<size_t>(i * 4 + j)] - m;
      s2 += d * d;
    }
    s2 /= 16;
    CHECK(m == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(std::abs(m) < 1e-4);
    CHECK(s2 == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batch_norm update_running flag and eval mode") {
  Rng rng(102);
  auto bn = make_batch_norm(2, "bn");
  auto x = random_tensor(rng, {8, 2}, false, 1.0f, 3.0f);
  auto rm_before = bn.running_mean.data();
  auto rv_before = bn.running_var.data();
  (void)batch_norm(x, bn, true, /*update_running=*/false);
  CHECK(bn.running_mean.data() == rm_before);
  CHECK(bn.running_var.data() == rv_before);
  (void)batch_norm(x, bn, true, /*update_running=*/true);
  CHECK(bn.running_mean.data() != rm_before);

  // eval mode applies the running stats elementwise: with gamma=1, beta=0,
  // y = (x - rm) / sqrt(rv + eps)
  auto y = batch_norm(x, bn, false);
  const float rm = bn.running_mean.data()[0];
  const float rv = bn.running_var.data()[0];
  const float expect = (x.data()[0] - rm) / std::sqrt(rv + 1e-5f);
  CHECK(y.data()[0] == doctest::Approx(expect).epsilon(1e-5));

  CHECK_THROWS_AS(batch_norm(random_tensor(rng, {1, 2}, false), bn, true), ValueError);
}

TEST_CASE("batch_norm gradients pass finite differences in both modes") {
  Rng rng(103);
  auto x = random_tensor(rng, {6, 3}, true, -2.0f, 2.0f);
  auto bn = make_batch_norm(3, "bn");
  // perturb gamma/beta so gradients are generic
  for (auto& g : bn.gamma.data()) g = static_cast<float>(rng.uniform(0.5, 1.5));
  for (auto& b : bn.beta.data()) b = static_cast<float>(rng.uniform(-0.5, 0.5));
  for (bool training : {true, false}) {
    auto rep = oracle::grad_check(
        [&, training](std::vector<Tensor>& in) {
          Rng local(104);
          BatchNormParams p;
          p.gamma = in[1];
          p.beta = in[2];
          p.running_mean = bn.running_mean;
          p.running_var = bn.running_var;
          return weighted_sum(batch_norm(in[0], p, training, /*update_running=*/false), local);
        },
        {x, bn.gamma, bn.beta});
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
}

// ---- autodiff driver ----

TEST_CASE("fan-out accumulates gradient additively") {
  auto x = make_tensor({1}, {3.0f}, true);
  auto y = add(mul(x, x), mul(x, x));  // y = 2x^2, dy/dx = 4x = 12
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("backward rejects non-scalar and grad-free losses") {
  auto x = make_tensor({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
  auto c = make_tensor({1}, {1.0f}, false);
  CHECK_THROWS_AS(backward(c), ValueError);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  auto x = make_tensor({1}, {2.0f}, true);
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  zero_grad({x});
  CHECK(x.grad()[0] == 0.0f);
}

TEST_CASE("ops without grad-requiring inputs record no graph") {
  auto a = make_tensor({2, 2}, {1, 2, 3, 4}, false);
  auto b = make_tensor({2, 2}, {5, 6, 7, 8}, false);
  auto c = matmul(a, b);
  CHECK_FALSE(c.requires_grad());
  CHECK(c.node()->parents.empty());
  CHECK_FALSE(static_cast<bool>(c.node()->backward_fn));
}

TEST_CASE("deep chain releases memory with the loss handle") {
  // builds a long chain; nothing to assert beyond it not blowing up, the
  // shared_ptr cascade is exercised by leak checkers and the graph walk
  auto x = make_tensor({8}, std::vector<float>(8, 0.5f), true);
  Tensor y = x;
  for (int i = 0; i < 200; ++i) y = add(mul(y, scalar(0.999f)), scalar(0.001f));
  backward(reduce_sum(y));
  CHECK(x.grad().size() == 8);
}

TEST_SUITE_END();
