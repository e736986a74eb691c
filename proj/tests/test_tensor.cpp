#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctgv/ops.hpp"
#include "ctgv/rng.hpp"
#include "ctgv/tensor.hpp"
#include "ctgv/thread_pool.hpp"

using namespace ctgv;

namespace {

// Naive reference product, kept deliberately separate from the library path.
std::vector<double> naive_matmul(const std::vector<double>& a,
                                 const std::vector<double>& b, int64_t m,
                                 int64_t k, int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("matmul identity and projector") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor proj({2, 2}, {1, 0, 0, 0});
  CHECK(matmul(eye, a).values() == std::vector<double>{1, 2, 3, 4});
  Tensor x({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(proj, x).values() == std::vector<double>{5, 6, 0, 0});
}

TEST_CASE("matmul matches naive loops, plain and batched") {
  Rng rng(11);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({4, 5}, rng);
  auto ref = naive_matmul(a.values(), b.values(), 3, 4, 5);
  CHECK(max_abs_diff(matmul(a, b).values(), ref) < 1e-12);

  Tensor ba = randn({2, 3, 4}, rng);
  Tensor bb = randn({2, 4, 5}, rng);
  Tensor out = matmul(ba, bb);
  CHECK(out.shape() == Shape{2, 3, 5});
  for (int l = 0; l < 2; ++l) {
    std::vector<double> sa(ba.values().begin() + l * 12, ba.values().begin() + (l + 1) * 12);
    std::vector<double> sb(bb.values().begin() + l * 20, bb.values().begin() + (l + 1) * 20);
    auto sref = naive_matmul(sa, sb, 3, 4, 5);
    std::vector<double> so(out.values().begin() + l * 15, out.values().begin() + (l + 1) * 15);
    CHECK(max_abs_diff(so, sref) < 1e-12);
  }
}

TEST_CASE("matmul_nt equals matmul against the transposed operand") {
  Rng rng(12);
  Tensor a = randn({2, 3, 4}, rng);
  Tensor b = randn({2, 5, 4}, rng);
  Tensor bt = permute(b, {0, 2, 1});
  CHECK(max_abs_diff(matmul_nt(a, b).values(), matmul(a, bt).values()) < 1e-12);
}

TEST_CASE("matmul shape errors name both shapes") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({2, 2}, {1, 2, 3, 4});
  std::string msg;
  try {
    matmul(a, b);
  } catch (const std::runtime_error& e) {
    msg = e.what();
  }
  CHECK(msg.find("[2,3]") != std::string::npos);
  CHECK(msg.find("[2,2]") != std::string::npos);
}

TEST_CASE("softmax uniform, dominance, stability") {
  Tensor z({3}, {0, 0, 0});
  Tensor zu = softmax(z, 0);
  for (double v : zu.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Tensor big({3}, {1000, 0, 0});
  auto y = softmax(big, 0).values();
  CHECK(std::abs(y[0] - 1.0) < 1e-12);
  CHECK(std::abs(y[1]) < 1e-12);
  CHECK(std::abs(y[2]) < 1e-12);
  for (double v : y) CHECK(std::isfinite(v));
}

TEST_CASE("softmax slices sum to 1 within 1e-12 for inputs in [-1e4, 1e4]") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(key_of({fnv1a("softmax-sums"), seed}));
    int64_t d0 = 1 + static_cast<int64_t>(rng.below(4));
    int64_t d1 = 1 + static_cast<int64_t>(rng.below(6));
    int64_t d2 = 1 + static_cast<int64_t>(rng.below(5));
    Shape shape{d0, d1, d2};
    std::vector<double> vals(static_cast<size_t>(numel_of(shape)));
    for (double& v : vals) v = (rng.uniform() * 2 - 1) * 1e4;
    Tensor x(shape, vals);
    int axis = static_cast<int>(rng.below(3));
    Tensor y = softmax(x, axis);

    int64_t len = shape[static_cast<size_t>(axis)];
    int64_t inner = 1;
    for (int d = axis + 1; d < 3; ++d) inner *= shape[static_cast<size_t>(d)];
    int64_t slices = numel_of(shape) / len;
    for (int64_t s = 0; s < slices; ++s) {
      int64_t o = s / inner, in = s % inner;
      double total = 0.0;
      for (int64_t t = 0; t < len; ++t) {
        double v = y.values()[static_cast<size_t>(o * len * inner + t * inner + in)];
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("reshape is row-major and zero-copy") {
  Tensor x({6}, {0, 1, 2, 3, 4, 5});
  Tensor y = reshape(x, {2, 3});
  CHECK(y.values()[1 * 3 + 1] == 4);
  CHECK(y.data_ptr().get() == x.data_ptr().get());
  Tensor back = reshape(y, {6});
  CHECK(back.values() == x.values());
}

TEST_CASE("permute round trip is bit exact") {
  Rng rng(21);
  Tensor x = randn({2, 3, 4}, rng);
  Tensor y = permute(x, {2, 0, 1});
  CHECK(y.shape() == Shape{4, 2, 3});
  Tensor back = permute(y, {1, 2, 0});
  CHECK(back.values() == x.values());
}

TEST_CASE("frame-pixel reindex puts (frame 1, pixel 2, ch 0) at (2, 1, 0)") {
  int64_t f = 2, h = 2, w = 2, c = 3;
  std::vector<double> vals(static_cast<size_t>(f * h * w * c));
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<double>(i);
  Tensor x({f, h, w, c}, vals);
  Tensor y = permute(reshape(x, {f, h * w, c}), {1, 0, 2});
  CHECK(y.shape() == Shape{4, 2, 3});
  double want = vals[static_cast<size_t>(((1 * h + 1) * w + 0) * c + 0)];
  CHECK(y.values()[static_cast<size_t>((2 * f + 1) * c + 0)] == want);
}

TEST_CASE("linear identity and bias-only cases") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor zero_b({3}, {0, 0, 0});
  CHECK(linear(x, eye, zero_b).values() == x.values());

  Tensor zero_w = Tensor::zeros({3, 3});
  Tensor cb({3}, {7, 8, 9});
  CHECK(linear(x, zero_w, cb).values() == std::vector<double>{7, 8, 9, 7, 8, 9});
  CHECK(linear(x, eye, Tensor()).values() == x.values());
}

TEST_CASE("backward: sum gives ones, half square norm gives x") {
  Rng rng(31);
  Tensor x = randn({2, 3}, rng);
  x.requires_grad_();

  ComputeTape tape;
  {
    TapeScope scope(&tape);
    tape.backward(sum(x));
  }
  CHECK(x.grad() == std::vector<double>(6, 1.0));

  x.zero_grad();
  ComputeTape tape2;
  {
    TapeScope scope(&tape2);
    tape2.backward(scale(sum(mul(x, x)), 0.5));
  }
  CHECK(max_abs_diff(x.grad(), x.values()) < 1e-15);
}

TEST_CASE("backward accumulates across calls until zero_grad") {
  Tensor x({2}, {3, -1});
  x.requires_grad_();
  ComputeTape tape;
  {
    TapeScope scope(&tape);
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
  }
  CHECK(x.grad() == std::vector<double>{12, -4});
  x.zero_grad();
  CHECK(x.grad().empty());
}

TEST_CASE("backward errors on non-scalar root; detached leaf keeps zero grad") {
  Tensor x({2}, {1, 2});
  x.requires_grad_();
  Tensor y({2}, {5, 5});
  ComputeTape tape;
  Tensor loss;
  {
    TapeScope scope(&tape);
    Tensor two = mul(x, y);  // y untracked
    loss = sum(two);
    CHECK_THROWS_AS(tape.backward(two), std::runtime_error);
  }
  tape.backward(loss);
  CHECK(x.grad() == std::vector<double>{5, 5});
  CHECK_FALSE(y.tracked());
}

TEST_CASE("embed_rows gathers and scatter-accumulates duplicates") {
  Tensor table({3, 2}, {0, 1, 10, 11, 20, 21});
  table.requires_grad_();
  ComputeTape tape;
  {
    TapeScope scope(&tape);
    Tensor e = embed_rows(table, {2, 0, 2});
    CHECK(e.values() == std::vector<double>{20, 21, 0, 1, 20, 21});
    tape.backward(sum(e));
  }
  CHECK(table.grad() == std::vector<double>{1, 1, 0, 0, 2, 2});
}

TEST_CASE("tile_axis repeats and its backward sums the copies") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  x.requires_grad_();
  ComputeTape tape;
  {
    TapeScope scope(&tape);
    Tensor t = tile_axis(x, 1, 3);
    CHECK(t.shape() == Shape{2, 3, 2});
    CHECK(t.values() == std::vector<double>{1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4});
    tape.backward(sum(mul(t, t)));
  }
  CHECK(x.grad() == std::vector<double>{6, 12, 18, 24});
}

TEST_CASE("stack and concat helpers") {
  Tensor a({2}, {1, 2});
  Tensor b({2}, {3, 4});
  Tensor s = stack_leading({a, b});
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.values() == std::vector<double>{1, 2, 3, 4});

  Tensor u({2, 2}, {1, 2, 3, 4});
  Tensor v({2, 1}, {9, 8});
  Tensor c = concat_last({u, v});
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.values() == std::vector<double>{1, 2, 9, 3, 4, 8});
}

TEST_CASE("pinned finite-difference checks stay under 1e-6") {
  Rng rng(41);
  Tensor a = randn({3, 4}, rng);
  Tensor b = randn({4, 2}, rng);
  Tensor w = randn({3, 2}, rng);
  double err = grad_check(
      [&](const std::vector<Tensor>& in) {
        return sum(mul(matmul(in[0], in[1]), w));
      },
      {a, b});
  CHECK(err < 1e-6);

  Tensor v = randn({5}, rng);
  Tensor pick = randn({5}, rng);
  err = grad_check(
      [&](const std::vector<Tensor>& in) {
        return sum(mul(softmax(in[0], 0), pick));
      },
      {v});
  CHECK(err < 1e-6);

  Tensor x = randn({4, 3}, rng);
  Tensor lw = randn({3, 2}, rng);
  Tensor lb = randn({2}, rng);
  Tensor pick42 = randn({4, 2}, rng);
  err = grad_check(
      [&](const std::vector<Tensor>& in) {
        return sum(mul(linear(in[0], in[1], in[2]), pick42));
      },
      {x, lw, lb});
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check of a constant function is exactly zero") {
  Tensor x({3}, {1, 2, 3});
  double err = grad_check(
      [](const std::vector<Tensor>&) { return Tensor::scalar(4.0); }, {x});
  CHECK(err == 0.0);
}

TEST_CASE("every primitive passes grad_check on randomized shapes") {
  // Property suite: one composite per primitive per seed, all < 1e-4.
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(key_of({fnv1a("op-grad-suite"), seed}));
    int64_t m = 1 + static_cast<int64_t>(rng.below(3));
    int64_t k = 1 + static_cast<int64_t>(rng.below(3));
    int64_t n = 1 + static_cast<int64_t>(rng.below(3));
    int64_t L = 1 + static_cast<int64_t>(rng.below(2));
    Tensor a = randn({L, m, k}, rng);
    Tensor b = randn({L, k, n}, rng);
    Tensor bt = randn({L, n, k}, rng);
    Tensor pick_mn = randn({L, m, n}, rng);
    Tensor pick_mk = randn({L, m, k}, rng);

    auto weighted = [&](Tensor t, const Tensor& p) { return sum(mul(t, p)); };

    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(matmul(in[0], in[1]), pick_mn);
          }, {a, b}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(matmul_nt(in[0], in[1]), pick_mn);
          }, {a, bt}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(add(in[0], in[1]), pick_mk);
          }, {a, scale(a, 0.3)}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(sub(in[0], in[1]), pick_mk);
          }, {a, scale(a, 0.3)}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(mul(in[0], in[1]), pick_mk);
          }, {a, scale(a, -1.1)}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(scale(in[0], 1.7), pick_mk);
          }, {a}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(silu(in[0]), pick_mk);
          }, {a}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(softmax(in[0], 2), pick_mk);
          }, {a}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(permute(in[0], {2, 0, 1}),
                            permute(pick_mk.detach(), {2, 0, 1}));
          }, {a}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(reshape(in[0], {m, L * k}),
                            reshape(pick_mk.detach(), {m, L * k}));
          }, {a}) < 1e-4);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return mean(mul(in[0], in[0]));
          }, {a}) < 1e-4);

    Tensor table = randn({4, k}, rng);
    std::vector<int64_t> ids = {static_cast<int64_t>(rng.below(4)),
                                static_cast<int64_t>(rng.below(4)),
                                static_cast<int64_t>(rng.below(4))};
    Tensor pick_rows = randn({3, k}, rng);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(embed_rows(in[0], ids), pick_rows);
          }, {table}) < 1e-4);

    Tensor pick_tile = randn({m, 2, k}, rng);
    Tensor small = randn({m, k}, rng);
    CHECK(grad_check([&](const std::vector<Tensor>& in) {
            return weighted(tile_axis(in[0], 1, 2), pick_tile);
          }, {small}) < 1e-4);
  }
}

TEST_CASE("composite attention-style graph passes grad_check at 1e-4") {
  Rng rng(51);
  Tensor x = randn({2, 3, 4}, rng);
  Tensor wq = randn({4, 4}, rng, 0.5);
  Tensor wk = randn({4, 4}, rng, 0.5);
  Tensor wv = randn({4, 4}, rng, 0.5);
  Tensor pick = randn({2, 3, 4}, rng);
  double err = grad_check(
      [&](const std::vector<Tensor>& in) {
        Tensor q = linear(in[0], in[1], Tensor());
        Tensor kk = linear(in[0], in[2], Tensor());
        Tensor v = linear(in[0], in[3], Tensor());
        Tensor attn = softmax(scale(matmul_nt(q, kk), 0.5), 2);
        return sum(mul(matmul(attn, v), pick));
      },
      {x, wq, wk, wv});
  CHECK(err < 1e-4);
}

TEST_CASE("forward is a pure function and thread count never changes bits") {
  Rng rng(61);
  Tensor a = randn({4, 33, 17}, rng);
  Tensor b = randn({4, 17, 29}, rng);
  Tensor once = matmul(a, b);
  Tensor twice = matmul(a, b);
  CHECK(once.values() == twice.values());

  set_threads(4);
  Tensor threaded = matmul(a, b);
  Tensor soft4 = softmax(once, 2);
  set_threads(1);
  Tensor soft1 = softmax(once, 2);
  CHECK(threaded.values() == once.values());
  CHECK(soft4.values() == soft1.values());
}
