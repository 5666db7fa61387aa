#include <doctest.h>

#include <random>

#include "support.hpp"
#include "ttlstm/error.hpp"
#include "ttlstm/tensor.hpp"

using namespace ttlstm;

TEST_CASE("linear_index small cases") {
  const Extents d{2, 3};
  CHECK(linear_index({{1, 1}}, d) == 1);
  CHECK(linear_index({{2, 1}}, d) == 4);
  CHECK(linear_index({{2, 3}}, d) == 6);
  CHECK_THROWS_AS(linear_index({{3, 1}}, d), IndexError);
  CHECK_THROWS_AS(linear_index({{0, 1}}, d), IndexError);
  CHECK_THROWS_AS(linear_index({{1}}, d), IndexError);
}

TEST_CASE("linear_index matches colex enumeration over (4,5,6)") {
  const Extents d{4, 5, 6};
  std::size_t rank = 0;
  // enumerate with the last coordinate in the innermost loop
  for (std::size_t a = 1; a <= 4; ++a)
    for (std::size_t b = 1; b <= 5; ++b)
      for (std::size_t c = 1; c <= 6; ++c) {
        ++rank;
        CHECK(linear_index({{a, b, c}}, d) == rank);
      }
  CHECK(rank == 120);
}

TEST_CASE("multi_index examples and errors") {
  const Extents d{2, 3};
  CHECK(multi_index(1, d) == MultiIndex{{1, 1}});
  CHECK(multi_index(6, d) == MultiIndex{{2, 3}});
  CHECK_THROWS_AS(multi_index(0, d), IndexError);
  CHECK_THROWS_AS(multi_index(7, d), IndexError);
}

TEST_CASE("index maps are mutually inverse for all small shapes") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto d = testsupport::random_dims(rng, 1 + trial % 4, 12, 10000);
    const auto total = product(d);
    for (std::size_t f = 1; f <= total; ++f) REQUIRE(linear_index(multi_index(f, d), d) == f);
  }
  const Extents cube{3, 3, 3};
  for (std::size_t f = 1; f <= 27; ++f) CHECK(linear_index(multi_index(f, cube), cube) == f);
}

TEST_CASE("DenseTensor layout is last-index fastest") {
  DenseTensor t({2, 3, 4});
  for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = static_cast<double>(k);
  for (std::size_t f = 1; f <= t.size(); ++f) {
    const auto mi = multi_index(f, t.dims());
    CHECK(t(mi) == static_cast<double>(f - 1));
  }
  CHECK(t.at({1, 2, 3}) == 23.0);
  CHECK_THROWS_AS(DenseTensor(Extents{2, 0}), ShapeError);
  CHECK_THROWS_AS(DenseTensor(Extents{2, 2}, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({6, 4}).data()[7] == 7.0);
}

TEST_CASE("mode31_product shapes and values") {
  const auto r = mode31_product(DenseTensor({1, 2, 3}, 1.0), DenseTensor({3, 4, 1}, 1.0));
  CHECK(r.dims() == Extents{1, 2, 4, 1});

  const auto ones = mode31_product(DenseTensor({1, 2, 2}, 1.0), DenseTensor({2, 2, 1}, 1.0));
  for (double v : ones.data()) CHECK(v == 2.0);

  CHECK_THROWS_AS(mode31_product(DenseTensor({1, 2, 3}), DenseTensor({2, 2, 1})), ShapeError);
}

TEST_CASE("mode31_product equals triple loop") {
  std::mt19937_64 rng(11);
  const auto g1 = testsupport::random_tensor({2, 3, 4}, rng);
  const auto g2 = testsupport::random_tensor({4, 2, 3}, rng);
  const auto r = mode31_product(g1, g2);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t d = 0; d < 3; ++d) {
          double s = 0;
          for (std::size_t k = 0; k < 4; ++k) s += g1.at({a, b, k}) * g2.at({k, c, d});
          CHECK(r.at({a, b, c, d}) == doctest::Approx(s).epsilon(1e-14));
        }
}

TEST_CASE("chained mode31 products are associative") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = testsupport::random_tensor({2, 3, 4}, rng);
    const auto b = testsupport::random_tensor({4, 2, 5}, rng);
    const auto c = testsupport::random_tensor({5, 3, 2}, rng);
    const auto left = fuse_middle(mode31_product(fuse_middle(mode31_product(a, b)), c));
    const auto right = fuse_middle(mode31_product(a, fuse_middle(mode31_product(b, c))));
    REQUIRE(left.dims() == right.dims());
    for (std::size_t k = 0; k < left.size(); ++k)
      CHECK(left.data()[k] == doctest::Approx(right.data()[k]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fuse_middle(DenseTensor({2, 2, 2})), ShapeError);
}
