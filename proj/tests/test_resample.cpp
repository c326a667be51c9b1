#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cameras/resample.hpp"
#include "support/reference_interp.hpp"
#include "support/rng.hpp"

using cameras::Errc;
using cameras::Error;
using cameras::Raster2D;
using cameras::RasterStack;

namespace {

Raster2D random_raster(std::mt19937_64& rng, int h, int w, double lo = -2.0, double hi = 2.0) {
  Raster2D r(h, w);
  for (auto& v : r.values) v = testsupport::uniform(rng, lo, hi);
  return r;
}

testsupport::Grid as_grid(const Raster2D& r) {
  return {r.height, r.width, r.values};
}

// The pinned smooth reference field used by the monotonicity suite.
Raster2D smooth_field_16() {
  Raster2D r(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) r.at(i, j) = std::sin(i / 5.0) * std::cos(j / 5.0);
  return r;
}

}  // namespace

TEST_CASE("constant 1x1 source broadcasts to any target") {
  Raster2D src(1, 1, 3.25);
  Raster2D out = cameras::bilinear_resize(src, 5, 5);
  for (double v : out.values) CHECK(v == 3.25);
}

TEST_CASE("identity resize is bit-exact") {
  std::mt19937_64 rng(11);
  Raster2D src = random_raster(rng, 2, 2);
  Raster2D out = cameras::bilinear_resize(src, 2, 2);
  CHECK(out.values == src.values);

  Raster2D big = random_raster(rng, 13, 7);
  Raster2D same = cameras::bilinear_resize(big, 13, 7);
  CHECK(same.values == big.values);
}

TEST_CASE("row [0,1] to width 4 hits the hand-derived taps") {
  Raster2D src(1, 2);
  src.at(0, 0) = 0.0;
  src.at(0, 1) = 1.0;
  Raster2D out = cameras::bilinear_resize(src, 1, 4);
  REQUIRE(out.width == 4);
  CHECK(out.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.at(0, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(out.at(0, 2) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(out.at(0, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matches the reference interpolator on random cases") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    int sh = testsupport::uniform_int(rng, 1, 8);
    int sw = testsupport::uniform_int(rng, 1, 8);
    int th = testsupport::uniform_int(rng, 1, 32);
    int tw = testsupport::uniform_int(rng, 1, 32);
    Raster2D src = random_raster(rng, sh, sw);
    Raster2D got = cameras::bilinear_resize(src, th, tw);
    testsupport::Grid want = testsupport::reference_bilinear(as_grid(src), th, tw);
    REQUIRE(got.size() == want.v.size());
    for (size_t i = 0; i < want.v.size(); ++i)
      CHECK(std::abs(got.values[i] - want.v[i]) <= 1e-6);
  }
}

TEST_CASE("invalid arguments are rejected") {
  Raster2D src(2, 2, 1.0);
  CHECK_THROWS_AS(cameras::bilinear_resize(src, 0, 4), Error);
  CHECK_THROWS_AS(cameras::bilinear_resize(src, 4, -1), Error);
  src.at(0, 1) = std::nan("");
  try {
    cameras::bilinear_resize(src, 4, 4);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_argument);
  }
}

TEST_CASE("constant rasters stay constant at any size") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    double v = testsupport::uniform(rng, -5.0, 5.0);
    Raster2D src(testsupport::uniform_int(rng, 1, 6), testsupport::uniform_int(rng, 1, 6), v);
    Raster2D out = cameras::bilinear_resize(src, testsupport::uniform_int(rng, 1, 20),
                                            testsupport::uniform_int(rng, 1, 20));
    for (double o : out.values) CHECK(std::abs(o - v) <= 1e-9);
  }
}

TEST_CASE("output range stays within the source range") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    Raster2D src = random_raster(rng, testsupport::uniform_int(rng, 1, 9),
                                 testsupport::uniform_int(rng, 1, 9));
    auto [mn, mx] = std::minmax_element(src.values.begin(), src.values.end());
    Raster2D out = cameras::bilinear_resize(src, testsupport::uniform_int(rng, 1, 25),
                                            testsupport::uniform_int(rng, 1, 25));
    for (double o : out.values) {
      CHECK(o >= *mn - 1e-12);
      CHECK(o <= *mx + 1e-12);
    }
  }
}

TEST_CASE("resize is linear in the source raster") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    int h = testsupport::uniform_int(rng, 2, 7), w = testsupport::uniform_int(rng, 2, 7);
    int th = testsupport::uniform_int(rng, 1, 21), tw = testsupport::uniform_int(rng, 1, 21);
    double a = testsupport::uniform(rng, -3.0, 3.0), b = testsupport::uniform(rng, -3.0, 3.0);
    Raster2D x = random_raster(rng, h, w), y = random_raster(rng, h, w);
    Raster2D mix(h, w);
    for (size_t i = 0; i < mix.values.size(); ++i)
      mix.values[i] = a * x.values[i] + b * y.values[i];
    Raster2D lhs = cameras::bilinear_resize(mix, th, tw);
    Raster2D rx = cameras::bilinear_resize(x, th, tw);
    Raster2D ry = cameras::bilinear_resize(y, th, tw);
    for (size_t i = 0; i < lhs.values.size(); ++i)
      CHECK(std::abs(lhs.values[i] - (a * rx.values[i] + b * ry.values[i])) <= 1e-9);
  }
}

TEST_CASE("stack resize equals channel-wise resize") {
  std::mt19937_64 rng(41);
  RasterStack stack(2, 3, 3);
  for (auto& v : stack.values) v = testsupport::uniform(rng, -1.0, 1.0);
  RasterStack out = cameras::resize_stack(stack, 6, 6);
  REQUIRE(out.channels == 2);
  for (int k = 0; k < 2; ++k) {
    Raster2D want = cameras::bilinear_resize(stack.channel(k), 6, 6);
    Raster2D got = out.channel(k);
    CHECK(got.values == want.values);
  }
}

TEST_CASE("constant stack broadcasts per channel") {
  RasterStack stack(3, 4, 4);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) stack.at(k, i, j) = k + 1.0;
  RasterStack out = cameras::resize_stack(stack, 8, 8);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) CHECK(out.at(k, i, j) == doctest::Approx(k + 1.0));
}

TEST_CASE("single-channel stack reduces to bilinear_resize") {
  std::mt19937_64 rng(43);
  Raster2D plane = random_raster(rng, 5, 4);
  RasterStack stack(1, 5, 4);
  stack.set_channel(0, plane);
  RasterStack out = cameras::resize_stack(stack, 9, 11);
  CHECK(out.channel(0).values == cameras::bilinear_resize(plane, 9, 11).values);
}

TEST_CASE("roundtrip error is zero at reference dims and for constants") {
  Raster2D ref = smooth_field_16();
  CHECK(cameras::roundtrip_error(ref, 16, 16) == 0.0);
  Raster2D flat(9, 5, 0.7);
  CHECK(cameras::roundtrip_error(flat, 3, 2) <= 1e-12);
  CHECK_THROWS_AS(cameras::roundtrip_error(ref, 17, 4), Error);
}

TEST_CASE("roundtrip error decreases along the diagonal on the pinned field") {
  Raster2D ref = smooth_field_16();
  double e4 = cameras::roundtrip_error(ref, 4, 4);
  double e8 = cameras::roundtrip_error(ref, 8, 8);
  double e12 = cameras::roundtrip_error(ref, 12, 12);
  double e16 = cameras::roundtrip_error(ref, 16, 16);
  CHECK(e4 >= e8);
  CHECK(e8 >= e12);
  CHECK(e12 >= e16);
  CHECK(e16 == 0.0);

  // Cross-check magnitudes against the reference implementation.
  testsupport::Grid g = as_grid(ref);
  CHECK(e4 == doctest::Approx(testsupport::reference_roundtrip_error(g, 4, 4)).epsilon(1e-9));
  CHECK(e8 == doctest::Approx(testsupport::reference_roundtrip_error(g, 8, 8)).epsilon(1e-9));
}

TEST_CASE("mean reconstruction error is bounded by the worst one") {
  Raster2D ref = smooth_field_16();
  std::vector<double> errs;
  for (int m : {4, 8, 12, 16}) errs.push_back(cameras::roundtrip_error(ref, m, m));
  double mean = 0.0;
  for (double e : errs) mean += e;
  mean /= static_cast<double>(errs.size());
  double worst = *std::max_element(errs.begin(), errs.end());
  CHECK(mean <= worst);
  CHECK(worst == errs.front());  // smallest (m,n) is the least accurate
}
