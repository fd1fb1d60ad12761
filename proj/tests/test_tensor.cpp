#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fusegrid/errors.hpp"
#include "fusegrid/ops.hpp"
#include "fusegrid/rng.hpp"
#include "fusegrid/tensor.hpp"
#include "testutil.hpp"

using namespace fusegrid;
using fusegrid::test::gradcheck;
using fusegrid::test::randu;

TEST_CASE("tensor factories and storage sharing") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.rank() == 2);
  CHECK(z.size() == 6);
  for (float v : z.data()) CHECK(v == 0.0f);

  Tensor f = Tensor::full({4}, 2.5f);
  for (float v : f.data()) CHECK(v == 2.5f);

  Tensor s = Tensor::scalar(-1.0f);
  CHECK(s.rank() == 0);
  CHECK(s.item() == -1.0f);

  // Copies are handles to the same storage.
  Tensor a = Tensor::from_data({2}, {1.0f, 2.0f});
  Tensor b = a;
  b.data()[0] = 9.0f;
  CHECK(a.data()[0] == 9.0f);
}

TEST_CASE("conv3d with zero input reproduces the bias everywhere") {
  Rng rng(derive_seed(7, 0));
  Tensor input = Tensor::zeros({2, 3, 4, 4, 4});
  Tensor weight = randu({5, 3, 3, 3, 3}, rng);
  Tensor bias = Tensor::from_data({5}, {0.1f, -0.2f, 0.3f, -0.4f, 0.5f});
  Tensor out = ops::conv3d(input, weight, bias);
  REQUIRE(out.shape() == std::vector<int>{2, 5, 4, 4, 4});
  auto d = out.data();
  const int vol = 4 * 4 * 4;
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 5; ++c)
      for (int v = 0; v < vol; ++v)
        CHECK(d[(n * 5 + c) * vol + v] == doctest::Approx(bias.data()[c]).epsilon(1e-6));
}

TEST_CASE("conv3d all-ones kernel counts the padded neighborhood") {
  // Ones input, ones 3x3x3 kernel, zero bias: each output voxel equals the
  // number of in-bounds neighbors, so 27 in the interior and 8 at a corner.
  Tensor input = Tensor::full({1, 1, 4, 4, 4}, 1.0f);
  Tensor weight = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
  Tensor bias = Tensor::zeros({1});
  Tensor out = ops::conv3d(input, weight, bias);
  auto at = [&](int z, int y, int x) { return out.data()[(z * 4 + y) * 4 + x]; };
  CHECK(at(1, 1, 1) == doctest::Approx(27.0f));
  CHECK(at(0, 0, 0) == doctest::Approx(8.0f));
  CHECK(at(0, 0, 1) == doctest::Approx(12.0f));
  CHECK(at(0, 1, 1) == doctest::Approx(18.0f));
  CHECK(at(3, 3, 3) == doctest::Approx(8.0f));
}

TEST_CASE("conv3d validates shapes") {
  Tensor input = Tensor::zeros({1, 2, 4, 4, 4});
  Tensor bad_kernel = Tensor::zeros({3, 2, 5, 5, 5});
  Tensor mismatched = Tensor::zeros({3, 4, 3, 3, 3});
  Tensor weight = Tensor::zeros({3, 2, 3, 3, 3});
  Tensor bad_bias = Tensor::zeros({4});
  CHECK_THROWS_AS(ops::conv3d(input, bad_kernel, Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(ops::conv3d(input, mismatched, Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(ops::conv3d(input, weight, bad_bias), ShapeError);
  CHECK_THROWS_AS(ops::conv3d(Tensor::zeros({2, 4, 4, 4}), weight, Tensor::zeros({3})),
                  ShapeError);
}

TEST_CASE("conv3d gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(derive_seed(11, seed));
    Tensor input = randu({2, 2, 3, 4, 3}, rng);
    Tensor weight = randu({3, 2, 3, 3, 3}, rng, -0.5f, 0.5f);
    Tensor bias = randu({3}, rng);
    auto apply = [&]() { return ops::conv3d(input, weight, bias); };
    auto rep = gradcheck(apply, {input, weight, bias}, rng);
    INFO("seed ", seed, " worst excess ", rep.max_err);
    CHECK(rep.ok);
  }
}

TEST_CASE("maxpool3d picks block maxima and halves every spatial dim") {
  std::vector<float> data(8);
  for (int i = 0; i < 8; ++i) data[i] = static_cast<float>(i + 1);
  Tensor input = Tensor::from_data({1, 1, 2, 2, 2}, std::move(data));
  Tensor out = ops::maxpool3d(input);
  REQUIRE(out.shape() == std::vector<int>{1, 1, 1, 1, 1});
  CHECK(out.data()[0] == 8.0f);

  Rng rng(derive_seed(13, 0));
  Tensor big = randu({1, 2, 4, 6, 4}, rng);
  Tensor pooled = ops::maxpool3d(big);
  CHECK(pooled.shape() == std::vector<int>{1, 2, 2, 3, 2});
}

TEST_CASE("maxpool3d odd spatial extent is rejected") {
  CHECK_THROWS_AS(ops::maxpool3d(Tensor::zeros({1, 1, 3, 4, 4})), ShapeError);
}

TEST_CASE("maxpool3d tie routes the gradient to the first maximal voxel") {
  Tensor input = Tensor::full({1, 1, 2, 2, 2}, 1.0f);
  input.set_requires_grad(true);
  Tensor loss = ops::sum(ops::maxpool3d(input));
  backward(loss);
  CHECK(input.grad()[0] == 1.0f);
  for (int i = 1; i < 8; ++i) CHECK(input.grad()[i] == 0.0f);
}

TEST_CASE("maxpool3d gradients match finite differences away from ties") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(derive_seed(17, seed));
    // Integer-spaced shuffled values keep every block maximum isolated by
    // more than the probe step, so the argmax never flips mid-check.
    std::vector<float> vals(2 * 4 * 4 * 4);
    for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(i) * 0.1f;
    std::shuffle(vals.begin(), vals.end(), rng);
    Tensor input = Tensor::from_data({1, 2, 4, 4, 4}, std::move(vals));
    auto apply = [&]() { return ops::maxpool3d(input); };
    auto rep = gradcheck(apply, {input}, rng);
    CHECK(rep.ok);
  }
}

TEST_CASE("avgpool3d averages blocks and spreads gradient evenly") {
  std::vector<float> data(8);
  for (int i = 0; i < 8; ++i) data[i] = static_cast<float>(i + 1);
  Tensor input = Tensor::from_data({1, 1, 2, 2, 2}, std::move(data));
  input.set_requires_grad(true);
  Tensor out = ops::avgpool3d(input);
  CHECK(out.data()[0] == doctest::Approx(4.5f));
  backward(ops::sum(out));
  for (int i = 0; i < 8; ++i) CHECK(input.grad()[i] == doctest::Approx(0.125f));
}

TEST_CASE("batchnorm3d normalizes each channel in training mode") {
  Rng rng(derive_seed(19, 0));
  Tensor input = randu({3, 2, 4, 4, 4}, rng, -3.0f, 5.0f);
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  ops::BatchNormState state(2);
  Tensor out = ops::batchnorm3d(input, gamma, beta, state, true);

  const int vol = 4 * 4 * 4;
  const int n = 3 * vol;
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < 3; ++b)
      for (int v = 0; v < vol; ++v) mean += out.data()[(b * 2 + c) * vol + v];
    mean /= n;
    for (int b = 0; b < 3; ++b)
      for (int v = 0; v < vol; ++v) {
        double d = out.data()[(b * 2 + c) * vol + v] - mean;
        var += d * d;
      }
    var /= n;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("batchnorm3d with zero gamma collapses to the shift") {
  Rng rng(derive_seed(19, 1));
  Tensor input = randu({2, 3, 2, 2, 2}, rng);
  Tensor gamma = Tensor::zeros({3});
  Tensor beta = Tensor::from_data({3}, {0.5f, -1.0f, 2.0f});
  ops::BatchNormState state(3);
  Tensor out = ops::batchnorm3d(input, gamma, beta, state, true);
  const int vol = 8;
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int v = 0; v < vol; ++v)
        CHECK(out.data()[(b * 3 + c) * vol + v] == doctest::Approx(beta.data()[c]));
}

TEST_CASE("batchnorm3d fresh state starts at mean zero variance one") {
  ops::BatchNormState state(4);
  REQUIRE(state.running_mean.size() == 4);
  REQUIRE(state.running_var.size() == 4);
  for (float m : state.running_mean) CHECK(m == 0.0f);
  for (float v : state.running_var) CHECK(v == 1.0f);
}

TEST_CASE("batchnorm3d running stats blend with momentum 0.9") {
  Rng rng(derive_seed(19, 2));
  Tensor input = randu({4, 1, 2, 2, 2}, rng, 1.0f, 3.0f);
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::zeros({1});

  const int n = 4 * 8;
  double mean = 0.0, var = 0.0;
  for (float v : input.data()) mean += v;
  mean /= n;
  for (float v : input.data()) var += (v - mean) * (v - mean);
  const double var_unbiased = var / (n - 1);

  ops::BatchNormState state(1);
  ops::batchnorm3d(input, gamma, beta, state, true);
  CHECK(state.running_mean[0] == doctest::Approx(0.1 * mean).epsilon(1e-5));
  CHECK(state.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * var_unbiased).epsilon(1e-5));

  // Evaluation mode must use the stored statistics, not the batch.
  Tensor probe = Tensor::full({1, 1, 2, 2, 2}, 2.0f);
  Tensor out = ops::batchnorm3d(probe, gamma, beta, state, false);
  const float expect =
      static_cast<float>((2.0 - state.running_mean[0]) /
                         std::sqrt(static_cast<double>(state.running_var[0]) + 1e-5));
  for (float v : out.data()) CHECK(v == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("batchnorm3d training mode needs at least two samples per channel") {
  Tensor input = Tensor::zeros({1, 2, 1, 1, 1});
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  ops::BatchNormState state(2);
  CHECK_THROWS_AS(ops::batchnorm3d(input, gamma, beta, state, true), ValidationError);
  CHECK_NOTHROW(ops::batchnorm3d(input, gamma, beta, state, false));
}

TEST_CASE("batchnorm3d gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(derive_seed(23, seed));
    Tensor input = randu({3, 2, 2, 3, 2}, rng, -2.0f, 2.0f);
    Tensor gamma = randu({2}, rng, 0.5f, 1.5f);
    Tensor beta = randu({2}, rng);
    ops::BatchNormState base(2);
    auto apply = [&]() {
      ops::BatchNormState scratch = base;
      return ops::batchnorm3d(input, gamma, beta, scratch, true);
    };
    auto rep = gradcheck(apply, {input, gamma, beta}, rng);
    INFO("seed ", seed, " worst excess ", rep.max_err);
    CHECK(rep.ok);
  }
}

TEST_CASE("relu clamps negatives and passes positives through") {
  Tensor x = Tensor::from_data({5}, {-2.0f, -0.5f, 0.0f, 0.5f, 2.0f});
  Tensor y = ops::relu(x);
  CHECK(y.data()[0] == 0.0f);
  CHECK(y.data()[1] == 0.0f);
  CHECK(y.data()[2] == 0.0f);
  CHECK(y.data()[3] == 0.5f);
  CHECK(y.data()[4] == 2.0f);

  x.set_requires_grad(true);
  backward(ops::sum(ops::relu(x)));
  CHECK(x.grad()[0] == 0.0f);
  CHECK(x.grad()[3] == 1.0f);
  CHECK(x.grad()[4] == 1.0f);
}

TEST_CASE("sigmoid stays strictly inside (0,1) across extreme inputs") {
  std::vector<float> vals;
  for (float v = -100.0f; v <= 100.0f; v += 2.5f) vals.push_back(v);
  const int n = static_cast<int>(vals.size());
  Tensor x = Tensor::from_data({n}, std::move(vals));
  Tensor y = ops::sigmoid(x);
  for (int i = 0; i < n; ++i) {
    CHECK(y.data()[i] > 0.0f);
    CHECK(y.data()[i] < 1.0f);
  }
  Tensor mid = ops::sigmoid(Tensor::scalar(0.0f));
  CHECK(mid.item() == doctest::Approx(0.5f));
}

TEST_CASE("sigmoid gradients match finite differences") {
  Rng rng(derive_seed(29, 0));
  Tensor x = randu({2, 7}, rng, -3.0f, 3.0f);
  auto rep = gradcheck([&]() { return ops::sigmoid(x); }, {x}, rng);
  CHECK(rep.ok);
}

TEST_CASE("fully_connected computes x @ W^T + b") {
  Tensor x = Tensor::from_data({2, 3}, {1.0f, 2.0f, 3.0f, -1.0f, 0.0f, 1.0f});
  Tensor w = Tensor::from_data({2, 3}, {1.0f, 0.0f, -1.0f, 0.5f, 0.5f, 0.5f});
  Tensor b = Tensor::from_data({2}, {0.25f, -0.25f});
  Tensor y = ops::fully_connected(x, w, b);
  REQUIRE(y.shape() == std::vector<int>{2, 2});
  CHECK(y.data()[0] == doctest::Approx(1.0f - 3.0f + 0.25f));
  CHECK(y.data()[1] == doctest::Approx(3.0f - 0.25f));
  CHECK(y.data()[2] == doctest::Approx(-1.0f - 1.0f + 0.25f));
  CHECK(y.data()[3] == doctest::Approx(0.0f - 0.25f));
  CHECK_THROWS_AS(ops::fully_connected(x, Tensor::zeros({2, 4}), b), ShapeError);
}

TEST_CASE("fully_connected gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng rng(derive_seed(31, seed));
    Tensor x = randu({3, 5}, rng);
    Tensor w = randu({4, 5}, rng, -0.5f, 0.5f);
    Tensor b = randu({4}, rng);
    auto rep = gradcheck([&]() { return ops::fully_connected(x, w, b); }, {x, w, b}, rng);
    CHECK(rep.ok);
  }
}

TEST_CASE("add and mul are elementwise and reject shape mismatches") {
  Tensor a = Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor b = Tensor::from_data({2, 2}, {0.5f, -1.0f, 2.0f, 0.0f});
  Tensor s = ops::add(a, b);
  Tensor p = ops::mul(a, b);
  CHECK(s.data()[0] == 1.5f);
  CHECK(s.data()[3] == 4.0f);
  CHECK(p.data()[1] == -2.0f);
  CHECK(p.data()[3] == 0.0f);
  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(ops::mul(a, Tensor::zeros({4})), ShapeError);

  Rng rng(derive_seed(37, 0));
  Tensor x = randu({3, 4}, rng);
  Tensor y = randu({3, 4}, rng);
  auto rep = gradcheck([&]() { return ops::mul(ops::add(x, y), y); }, {x, y}, rng);
  CHECK(rep.ok);
}

TEST_CASE("concat_channels stacks along dim 1 and splits gradients back") {
  Rng rng(derive_seed(41, 0));
  Tensor a = randu({2, 2, 2, 2, 2}, rng);
  Tensor b = randu({2, 3, 2, 2, 2}, rng);
  Tensor cat = ops::concat_channels(a, b);
  REQUIRE(cat.shape() == std::vector<int>{2, 5, 2, 2, 2});

  // Each input block must appear bit-identically in the output.
  const int vol = 8;
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 2; ++c)
      for (int v = 0; v < vol; ++v)
        CHECK(cat.data()[(n * 5 + c) * vol + v] == a.data()[(n * 2 + c) * vol + v]);
    for (int c = 0; c < 3; ++c)
      for (int v = 0; v < vol; ++v)
        CHECK(cat.data()[(n * 5 + 2 + c) * vol + v] == b.data()[(n * 3 + c) * vol + v]);
  }

  auto rep = gradcheck([&]() { return ops::concat_channels(a, b); }, {a, b}, rng);
  CHECK(rep.ok);
  CHECK_THROWS_AS(ops::concat_channels(a, Tensor::zeros({2, 3, 2, 2, 3})), ShapeError);
}

TEST_CASE("flatten reshapes to [batch, rest] and sum reduces everything") {
  Rng rng(derive_seed(43, 0));
  Tensor x = randu({2, 3, 2, 2, 2}, rng);
  Tensor flat = ops::flatten(x);
  REQUIRE(flat.shape() == std::vector<int>{2, 24});
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(flat.data()[i] == x.data()[i]);

  double manual = 0.0;
  for (float v : x.data()) manual += v;
  Tensor total = ops::sum(x);
  CHECK(total.item() == doctest::Approx(manual).epsilon(1e-6));

  x.set_requires_grad(true);
  backward(ops::sum(ops::flatten(x)));
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == 1.0f);
}

TEST_CASE("backward accumulates across reuse and leaves disconnected grads at zero") {
  Tensor x = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f});
  Tensor unused = Tensor::from_data({3}, {5.0f, 5.0f, 5.0f});
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  unused.ensure_grad();

  // x appears twice in the graph, so its gradient doubles.
  backward(ops::sum(ops::add(x, x)));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0f);
  for (int i = 0; i < 3; ++i) CHECK(unused.grad()[i] == 0.0f);

  // Leaf gradients accumulate across sweeps until zero_grad.
  backward(ops::sum(x));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 3.0f);
  x.zero_grad();
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 0.0f);
}

TEST_CASE("backward requires a scalar loss") {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f});
  x.set_requires_grad(true);
  Tensor y = ops::relu(x);
  CHECK_THROWS_AS(backward(y), ValidationError);
}

TEST_CASE("no-grad mode records no graph") {
  Tensor x = Tensor::from_data({2}, {1.0f, -1.0f});
  x.set_requires_grad(true);
  NoGradGuard guard;
  Tensor y = ops::relu(x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.impl()->node == nullptr);
}

TEST_CASE("stacked conv chain gradients match finite differences") {
  Rng rng(derive_seed(47, 0));
  Tensor input = randu({2, 1, 2, 4, 4}, rng);
  Tensor w1 = randu({2, 1, 3, 3, 3}, rng, -0.4f, 0.4f);
  Tensor b1 = randu({2}, rng, -0.2f, 0.2f);
  Tensor gamma = randu({2}, rng, 0.8f, 1.2f);
  Tensor beta = randu({2}, rng, -0.2f, 0.2f);
  Tensor w2 = randu({3, 2 * 1 * 2 * 2}, rng, -0.3f, 0.3f);
  Tensor b2 = randu({3}, rng, -0.2f, 0.2f);
  ops::BatchNormState base(2);
  auto apply = [&]() {
    ops::BatchNormState scratch = base;
    Tensor h = ops::conv3d(input, w1, b1);
    h = ops::batchnorm3d(h, gamma, beta, scratch, true);
    h = ops::relu(h);
    h = ops::maxpool3d(h);
    return ops::fully_connected(ops::flatten(h), w2, b2);
  };
  auto rep = gradcheck(apply, {input, w1, b1, gamma, beta, w2, b2}, rng);
  INFO("worst excess ", rep.max_err, " leaf ", rep.worst_leaf, " elem ", rep.worst_elem,
       " a=", rep.worst_analytic, " fd=", rep.worst_fd, " tol=", rep.worst_tol);
  CHECK(rep.ok);
}
