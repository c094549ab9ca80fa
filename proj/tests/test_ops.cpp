/*
 * Copyright 2026 the cafcn authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <omp.h>

#include <cmath>
#include <cstring>

#include "cafcn/ops.hpp"
#include "cafcn/rng.hpp"
#include "doctest.h"
#include "grad_check.hpp"

using cafcn::Rng;
using cafcn::Tape;
using cafcn::Tensor;
using cafcn::testutil::fill_uniform;
using cafcn::testutil::GradCheck;

namespace {

Tensor<double> empty_bias() { return Tensor<double>(); }

// Fractional offsets well away from integers so finite differences never
// cross a bilinear cell boundary.
void fill_offsets(Tensor<double>& off, Rng& rng) {
  for (auto& v : off.data) {
    const double base = std::floor(rng.uniform(-1.5, 1.5));
    v = base + rng.uniform(0.15, 0.85);
  }
}

}  // namespace

TEST_CASE("conv2d matches a hand-worked example") {
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({1, 3, 3});
  const double xv[9] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::memcpy(x.p(), xv, sizeof xv);
  Tensor<double>& w = tape.make_nograd({1, 1, 2, 2});
  w.data = {1, 0, 0, 1};
  Tensor<double>& b = tape.make_nograd({1});
  b.data = {0.5};
  Tensor<double>& y = cafcn::conv2d(tape, x, w, b);
  REQUIRE(y.shape == std::vector<int>({1, 2, 2}));
  CHECK(y.data[0] == doctest::Approx(6.5));
  CHECK(y.data[1] == doctest::Approx(8.5));
  CHECK(y.data[2] == doctest::Approx(12.5));
  CHECK(y.data[3] == doctest::Approx(14.5));
}

TEST_CASE("conv2d with centre-only kernel and pad 1 is identity") {
  Rng rng = Rng::stream(7, {"conv-id"});
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({3, 5, 9});
  fill_uniform(x, rng, -2.0, 2.0);
  Tensor<double>& w = tape.make_nograd({3, 3, 3, 3});
  for (int co = 0; co < 3; ++co) w.at(co, co, 1, 1) = 1.0;
  Tensor<double> b = empty_bias();
  Tensor<double>& y = cafcn::conv2d(tape, x, w, b, 1, 1, 1);
  REQUIRE(y.same_shape(x));
  for (std::size_t i = 0; i < x.data.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d stride 2 computes block sums") {
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({1, 4, 4});
  for (int i = 0; i < 16; ++i) x.data[static_cast<std::size_t>(i)] = i + 1;
  Tensor<double>& w = tape.make_nograd({1, 1, 2, 2});
  w.data = {1, 1, 1, 1};
  Tensor<double> b = empty_bias();
  Tensor<double>& y = cafcn::conv2d(tape, x, w, b, 2);
  REQUIRE(y.shape == std::vector<int>({1, 2, 2}));
  CHECK(y.data[0] == doctest::Approx(1 + 2 + 5 + 6));
  CHECK(y.data[1] == doctest::Approx(3 + 4 + 7 + 8));
  CHECK(y.data[2] == doctest::Approx(9 + 10 + 13 + 14));
  CHECK(y.data[3] == doctest::Approx(11 + 12 + 15 + 16));
}

TEST_CASE("conv2d asymmetric padding supports wide kernels") {
  // A 3x1 kernel (3 wide, 1 tall) with pad (0,1) keeps the map size.
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({1, 2, 3});
  x.data = {1, 2, 3, 4, 5, 6};
  Tensor<double>& w = tape.make_nograd({1, 1, 1, 3});
  w.data = {1, 1, 1};
  Tensor<double> b = empty_bias();
  Tensor<double>& y = cafcn::conv2d(tape, x, w, b, 1, 0, 1);
  REQUIRE(y.shape == std::vector<int>({1, 2, 3}));
  CHECK(y.data[0] == doctest::Approx(3));   // 0+1+2
  CHECK(y.data[1] == doctest::Approx(6));   // 1+2+3
  CHECK(y.data[2] == doctest::Approx(5));   // 2+3+0
  CHECK(y.data[4] == doctest::Approx(15));  // 4+5+6
}

TEST_CASE("conv2d output is invariant to the OpenMP thread count") {
  Rng rng = Rng::stream(11, {"conv-threads"});
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({8, 24, 40});
  fill_uniform(x, rng, -1.0, 1.0);
  Tensor<double>& w = tape.make_nograd({16, 8, 3, 3});
  fill_uniform(w, rng, -0.5, 0.5);
  Tensor<double>& b = tape.make_nograd({16});
  fill_uniform(b, rng, -0.5, 0.5);

  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  Tensor<double>& y1 = cafcn::conv2d(tape, x, w, b, 1, 1, 1);
  omp_set_num_threads(4);
  Tensor<double>& y4 = cafcn::conv2d(tape, x, w, b, 1, 1, 1);
  omp_set_num_threads(saved);

  REQUIRE(y1.numel() == y4.numel());
  CHECK(std::memcmp(y1.p(), y4.p(), sizeof(double) * static_cast<std::size_t>(y1.numel())) == 0);
}

TEST_CASE("conv2d gradients match finite differences") {
  const struct {
    int cin, h, w, cout, kh, kw, stride, ph, pw;
  } cases[] = {
      {1, 4, 4, 1, 3, 3, 1, 1, 1}, {2, 5, 6, 3, 3, 3, 1, 1, 1}, {3, 4, 5, 2, 1, 1, 1, 0, 0},
      {2, 3, 7, 2, 1, 3, 1, 0, 1}, {1, 6, 6, 2, 2, 2, 2, 0, 0}, {2, 6, 4, 1, 3, 3, 2, 1, 1},
      {4, 3, 3, 4, 3, 3, 1, 1, 1},
  };
  int idx = 0;
  for (const auto& c : cases) {
    for (int rep = 0; rep < 3; ++rep, ++idx) {
      Rng rng = Rng::stream(100, {"conv-grad", idx});
      Tensor<double> x({c.cin, c.h, c.w});
      Tensor<double> w({c.cout, c.cin, c.kh, c.kw});
      Tensor<double> b({c.cout});
      fill_uniform(x, rng, -1.0, 1.0);
      fill_uniform(w, rng, -1.0, 1.0);
      fill_uniform(b, rng, -1.0, 1.0);
      const double err = GradCheck::max_rel_error(
          {&x, &w, &b},
          [&](Tape<double>& t) -> Tensor<double>& {
            return cafcn::conv2d(t, x, w, b, c.stride, c.ph, c.pw);
          },
          rng);
      INFO("case ", idx);
      CHECK(err <= 1e-4);
    }
  }
}

TEST_CASE("relu forward and gradient") {
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({1, 1, 4});
  x.data = {-2.0, -0.5, 0.5, 3.0};
  Tensor<double>& y = cafcn::relu(tape, x);
  CHECK(y.data == std::vector<double>({0.0, 0.0, 0.5, 3.0}));

  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(101, {"relu-grad", rep});
    Tensor<double> xr({2, 3, 5});
    fill_uniform(xr, rng, -1.0, 1.0, /*avoid_zero=*/true);
    const double err = GradCheck::max_rel_error(
        {&xr}, [&](Tape<double>& t) -> Tensor<double>& { return cafcn::relu(t, xr); }, rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("maxpool2x2 picks window maxima and routes gradients to them") {
  Tape<double> tape(true);
  Tensor<double>& x = tape.make({1, 2, 4});
  x.data = {1, 2, 5, 6, 4, 3, 8, 7};
  Tensor<double>& y = cafcn::maxpool2x2(tape, x);
  REQUIRE(y.shape == std::vector<int>({1, 1, 2}));
  CHECK(y.data[0] == 4);
  CHECK(y.data[1] == 8);
  y.grad = {1.0, 1.0};
  tape.backward();
  CHECK(x.grad == std::vector<double>({0, 0, 0, 0, 1, 0, 1, 0}));

  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(102, {"pool-grad", rep});
    Tensor<double> xr({3, 4, 6});
    // Distinct values so the window argmax is stable under the FD nudge.
    for (std::size_t i = 0; i < xr.data.size(); ++i)
      xr.data[i] = rng.uniform(-1.0, 1.0) + 0.001 * static_cast<double>(i % 97);
    const double err = GradCheck::max_rel_error(
        {&xr}, [&](Tape<double>& t) -> Tensor<double>& { return cafcn::maxpool2x2(t, xr); },
        rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("maxpool2x2 rejects odd spatial dims") {
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({1, 3, 4});
  CHECK_THROWS_AS(cafcn::maxpool2x2(tape, x), std::invalid_argument);
}

TEST_CASE("upsample2x_bilinear matches a hand-worked example") {
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({1, 2, 2});
  x.data = {1, 2, 3, 4};
  Tensor<double>& y = cafcn::upsample2x_bilinear(tape, x);
  REQUIRE(y.shape == std::vector<int>({1, 4, 4}));
  const double want[16] = {1.0, 1.25, 1.75, 2.0,  1.5, 1.75, 2.25, 2.5,
                           2.5, 2.75, 3.25, 3.5,  3.0, 3.25, 3.75, 4.0};
  for (int i = 0; i < 16; ++i) CHECK(y.data[static_cast<std::size_t>(i)] == doctest::Approx(want[i]));
}

TEST_CASE("upsample2x_bilinear gradients match finite differences") {
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(103, {"up-grad", rep});
    Tensor<double> xr({2, 3, 4});
    fill_uniform(xr, rng, -1.0, 1.0);
    const double err = GradCheck::max_rel_error(
        {&xr},
        [&](Tape<double>& t) -> Tensor<double>& { return cafcn::upsample2x_bilinear(t, xr); },
        rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("add propagates gradients to both inputs") {
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(104, {"add-grad", rep});
    Tensor<double> a({2, 3, 3});
    Tensor<double> b({2, 3, 3});
    fill_uniform(a, rng, -1.0, 1.0);
    fill_uniform(b, rng, -1.0, 1.0);
    const double err = GradCheck::max_rel_error(
        {&a, &b}, [&](Tape<double>& t) -> Tensor<double>& { return cafcn::add(t, a, b); },
        rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("softmax2_channel1 equals the sigmoid of the logit difference") {
  Tape<double> tape(false);
  Tensor<double>& l = tape.make_nograd({2, 1, 2});
  l.data = {0.3, -40.0, 0.8, 40.0};
  Tensor<double>& a = cafcn::softmax2_channel1(tape, l);
  CHECK(a.data[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))));
  CHECK(a.data[1] == doctest::Approx(1.0));  // stable at extreme logits

  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(105, {"sm2-grad", rep});
    Tensor<double> lr({2, 3, 4});
    fill_uniform(lr, rng, -2.0, 2.0);
    const double err = GradCheck::max_rel_error(
        {&lr},
        [&](Tape<double>& t) -> Tensor<double>& { return cafcn::softmax2_channel1(t, lr); },
        rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("mul_one_plus scales features by one plus the attention map") {
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({2, 1, 1});
  x.data = {2.0, -4.0};
  Tensor<double>& a = tape.make_nograd({1, 1, 1});
  a.data = {0.25};
  Tensor<double>& y = cafcn::mul_one_plus(tape, x, a);
  CHECK(y.data[0] == doctest::Approx(2.5));
  CHECK(y.data[1] == doctest::Approx(-5.0));

  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(106, {"m1p-grad", rep});
    Tensor<double> xr({3, 2, 4});
    Tensor<double> ar({1, 2, 4});
    fill_uniform(xr, rng, -1.0, 1.0);
    fill_uniform(ar, rng, 0.0, 1.0);
    const double err = GradCheck::max_rel_error(
        {&xr, &ar},
        [&](Tape<double>& t) -> Tensor<double>& { return cafcn::mul_one_plus(t, xr, ar); },
        rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("softmax_chw_to_hwc produces normalized rows in HWC order") {
  Tensor<double> l({3, 1, 2});
  l.data = {1.0, 0.0, 2.0, 0.0, 3.0, 0.0};
  Tensor<double> p = cafcn::softmax_chw_to_hwc(l);
  REQUIRE(p.shape == std::vector<int>({1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p.data[0] == doctest::Approx(std::exp(1.0) / z));
  CHECK(p.data[1] == doctest::Approx(std::exp(2.0) / z));
  CHECK(p.data[2] == doctest::Approx(std::exp(3.0) / z));
  CHECK(p.data[3] == doctest::Approx(1.0 / 3.0));
  CHECK(p.data[3] + p.data[4] + p.data[5] == doctest::Approx(1.0));
}

TEST_CASE("deform_conv3x3 with zero offsets reduces to a padded conv") {
  Rng rng = Rng::stream(107, {"deform-zero"});
  Tape<double> tape(false);
  Tensor<double>& x = tape.make_nograd({3, 6, 8});
  fill_uniform(x, rng, -1.0, 1.0);
  Tensor<double>& w = tape.make_nograd({4, 3, 3, 3});
  fill_uniform(w, rng, -0.5, 0.5);
  Tensor<double>& b = tape.make_nograd({4});
  fill_uniform(b, rng, -0.5, 0.5);
  Tensor<double>& off = tape.make_nograd({18, 6, 8});

  Tensor<double>& yd = cafcn::deform_conv3x3(tape, x, w, b, off);
  Tensor<double>& yc = cafcn::conv2d(tape, x, w, b, 1, 1, 1);
  REQUIRE(yd.same_shape(yc));
  for (std::size_t i = 0; i < yd.data.size(); ++i)
    CHECK(yd.data[i] == doctest::Approx(yc.data[i]).epsilon(1e-12));
}

TEST_CASE("deform_conv3x3 gradients match finite differences") {
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng = Rng::stream(108, {"deform-grad", rep});
    Tensor<double> x({2, 4, 5});
    Tensor<double> w({3, 2, 3, 3});
    Tensor<double> b({3});
    Tensor<double> off({18, 4, 5});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -1.0, 1.0);
    fill_uniform(b, rng, -1.0, 1.0);
    fill_offsets(off, rng);
    const double err = GradCheck::max_rel_error(
        {&x, &w, &b, &off},
        [&](Tape<double>& t) -> Tensor<double>& {
          return cafcn::deform_conv3x3(t, x, w, b, off);
        },
        rng);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("tape replays recorded operations in reverse and fan-out accumulates") {
  // y = relu(x) + relu(x): dy/dx = 2 on the positive side.
  Tape<double> tape(true);
  Tensor<double>& x = tape.make({1, 1, 3});
  x.data = {-1.0, 0.5, 2.0};
  Tensor<double>& r1 = cafcn::relu(tape, x);
  Tensor<double>& r2 = cafcn::relu(tape, x);
  Tensor<double>& y = cafcn::add(tape, r1, r2);
  y.grad = {1.0, 1.0, 1.0};
  tape.backward();
  CHECK(x.grad == std::vector<double>({0.0, 2.0, 2.0}));
}
