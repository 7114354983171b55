#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "clutter4d/io.hpp"
#include "clutter4d/tensor.hpp"

using namespace clutter4d;

namespace {

Tensor6D enumerated(const Shape6& shape) {
  Tensor6D x(shape);
  std::iota(x.data(), x.data() + x.size(), 0.0f);
  return x;
}

}  // namespace

TEST_CASE("reshape round trip is bitwise identity") {
  const Tensor6D x = seeded_fill<float>({1, 1, 2, 2, 2, 2}, Distribution::normal(0, 1), 7);
  const Tensor6D folded = reshape(x, {1, 1, 2, 2, 4});
  CHECK(folded.shape() == Shape6{1, 1, 2, 2, 4, 1});
  const Tensor6D back = reshape(folded, {1, 1, 2, 2, 2, 2});
  CHECK(back == x);
}

TEST_CASE("reshape preserves element order") {
  const Tensor6D x = enumerated({1, 1, 2, 2, 2, 2});
  for (auto shape : {Shape6{16, 1, 1, 1, 1, 1}, Shape6{2, 8, 1, 1, 1, 1}, Shape6{1, 4, 1, 2, 2, 1}}) {
    const Tensor6D y = reshape(x, std::span<const Index>(shape.data(), shape.size()));
    for (Index i = 0; i < 16; ++i) CHECK(y.data()[i] == static_cast<float>(i));
  }
}

TEST_CASE("reshape with mismatched product is rejected") {
  const Tensor6D x({2, 3, 4, 4, 4, 8});
  CHECK_THROWS_AS(reshape(x, {2, 3, 4, 4, 4, 7}), ShapeError);
}

TEST_CASE("elementwise identities and errors") {
  const Tensor6D x = seeded_fill<float>({2, 1, 3, 3, 3, 2}, Distribution::uniform(-1, 1), 3);
  CHECK(elementwise(ElementwiseOp::kAdd, x, 0.0f) == x);
  CHECK(elementwise(ElementwiseOp::kMul, x, 1.0f) == x);
  CHECK_THROWS_AS(elementwise(ElementwiseOp::kAdd, x, Tensor6D({2, 1, 3, 3, 3, 1})), ShapeError);
  CHECK_THROWS_AS(elementwise(ElementwiseOp::kDiv, x, 0.0f), NumericError);
  Tensor6D d(x.shape(), 2.0f);
  d.data()[5] = 0.0f;
  CHECK_THROWS_AS(elementwise(ElementwiseOp::kDiv, x, d), NumericError);
}

TEST_CASE("elementwise commutes with reshape") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Tensor6D a = seeded_fill<float>({1, 2, 3, 2, 2, 4}, Distribution::normal(0, 1), seed);
    const Tensor6D b = seeded_fill<float>({1, 2, 3, 2, 2, 4}, Distribution::normal(0, 1), seed + 100);
    const Tensor6D lhs = reshape(a + b, {2, 3, 2, 8});
    const Tensor6D rhs = reshape(a, {2, 3, 2, 8}) + reshape(b, {2, 3, 2, 8});
    CHECK(lhs == rhs);
  }
}

TEST_CASE("operations do not mutate inputs") {
  const Tensor6D a = seeded_fill<float>({1, 1, 2, 2, 2, 2}, Distribution::normal(0, 1), 11);
  const Tensor6D copy = a;
  (void)(a + a);
  (void)reshape(a, {16});
  (void)(a * 3.0f);
  CHECK(a == copy);
}

TEST_CASE("seeded_fill determinism and statistics") {
  const Shape6 shape{1, 1, 10, 10, 10, 100};
  const Tensor6D a = seeded_fill<float>(shape, Distribution::normal(0, 1), 42);
  const Tensor6D b = seeded_fill<float>(shape, Distribution::normal(0, 1), 42);
  CHECK(a == b);
  const Tensor6D c = seeded_fill<float>(shape, Distribution::normal(0, 1), 43);
  CHECK_FALSE(a == c);

  double sum = 0, sq = 0;
  for (Index i = 0; i < a.size(); ++i) sum += a.data()[i];
  const double mean = sum / a.size();
  for (Index i = 0; i < a.size(); ++i) sq += (a.data()[i] - mean) * (a.data()[i] - mean);
  const double sigma = std::sqrt(sq / a.size());
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(sigma - 1.0) < 0.02);

  const Tensor6D z = seeded_fill<float>({1, 1, 4, 4, 4, 4}, Distribution::uniform(0, 0), 5);
  CHECK((z.array() == 0.0f).all());
  CHECK_THROWS_AS(seeded_fill<float>({1, 1, -1, 4, 4, 4}, Distribution::uniform(0, 1), 5), ShapeError);
}

TEST_CASE("empty tensors are legal") {
  const Tensor6D e({0, 3, 4, 4, 4, 2});
  CHECK(e.empty());
  CHECK((e + e).empty());
  CHECK(reshape(e, {0, 12}).size() == 0);
}

TEST_CASE("T6D container round trip and header layout") {
  const auto dir = std::filesystem::temp_directory_path() / "clutter4d_t6d_test";
  std::filesystem::create_directories(dir);
  const Tensor6D x = seeded_fill<float>({1, 2, 3, 4, 5, 6}, Distribution::normal(0, 1), 9);
  write_t6d(dir / "x.t6d", x);
  CHECK(read_t6d(dir / "x.t6d") == x);

  std::ifstream in(dir / "x.t6d", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 4 + 48 + 1 + 4 * x.size());
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "T6D1");
  CHECK(bytes[4] == 1);
  CHECK(bytes[4 + 8] == 2);
  CHECK(bytes[4 + 40] == 6);
  CHECK(bytes[52] == 0x01);

  std::ofstream(dir / "bad.t6d", std::ios::binary) << "T6D2garbage";
  CHECK_THROWS_AS(read_t6d(dir / "bad.t6d"), FormatError);
  CHECK_THROWS_AS(read_t6d(dir / "missing.t6d"), IoError);

  ComplexVolumeF v({2, 3, 4, 5});
  for (Index i = 0; i < v.size(); ++i) v.array()[i] = {static_cast<float>(i), -0.5f * i};
  write_complex(dir / "vol", v);
  CHECK(std::filesystem::exists(dir / "vol.re"));
  CHECK(read_complex(dir / "vol") == v);
}

TEST_CASE("key-value text") {
  const auto kv = KeyValueFile::parse("# comment\nalpha = 1.5\nbeta=two # trailing\n\n");
  CHECK(kv.get_double("alpha") == 1.5);
  CHECK(kv.get("beta") == "two");
  CHECK_THROWS_AS(kv.get("gamma"), ConfigError);
  CHECK_THROWS_AS(KeyValueFile::parse("novalue\n"), ConfigError);
  CHECK(KeyValueFile::parse(kv.str()).str() == kv.str());
}
