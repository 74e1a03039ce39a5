#include <doctest.h>

#include <vector>

#include "support.hpp"
#include "ulw/errors.hpp"
#include "ulw/kernels.hpp"

using namespace ulw;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Triple loop in the defining summation order.
void naive_gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * lda + p] * b[p * ldb + j];
      c[i * ldc + j] += s;
    }
  }
}

// Reassociation differences scale with k and the magnitude of the products.
constexpr double kTol = 1e-12;

std::vector<const kernels::KernelTable*> tables() {
  std::vector<const kernels::KernelTable*> out{&kernels::table(kernels::Isa::scalar)};
  if (kernels::available(kernels::Isa::avx2)) out.push_back(&kernels::table(kernels::Isa::avx2));
  return out;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm matches the triple-loop oracle for ragged shapes") {
    const std::size_t shapes[][3] = {{1, 1, 1}, {4, 8, 3}, {5, 9, 7}, {3, 17, 1}, {13, 31, 29}, {8, 64, 72}, {7, 3, 40}};
    for (const auto* t : tables()) {
      CAPTURE(t->name);
      std::uint64_t seed = 1;
      for (const auto& s : shapes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        // Leading dimensions wider than the logical extents exercise the strides.
        const std::size_t lda = k + 2, ldb = n + 3, ldc = n + 1;
        const auto a = random_vec(m * lda, seed++);
        const auto b = random_vec(k * ldb, seed++);
        auto c = random_vec(m * ldc, seed++);
        auto ref = c;
        t->gemm(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc);
        naive_gemm(m, n, k, a.data(), lda, b.data(), ldb, ref.data(), ldc);
        for (std::size_t i = 0; i < c.size(); ++i) REQUIRE(c[i] == doctest::Approx(ref[i]).epsilon(kTol).scale(k));
      }
    }
  }

  TEST_CASE("reductions and axpy agree across ISAs") {
    if (!kernels::available(kernels::Isa::avx2)) return;
    const auto& sc = kernels::table(kernels::Isa::scalar);
    const auto& av = kernels::table(kernels::Isa::avx2);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 15u, 16u, 33u, 1000u}) {
      CAPTURE(n);
      const auto x = random_vec(n, 10 + n);
      const auto y = random_vec(n, 20 + n);
      CHECK(av.dot(x.data(), y.data(), n) == doctest::Approx(sc.dot(x.data(), y.data(), n)).epsilon(kTol));
      CHECK(av.sum_sq_diff(x.data(), y.data(), n) ==
            doctest::Approx(sc.sum_sq_diff(x.data(), y.data(), n)).epsilon(kTol));
      auto ys = y, ya = y;
      sc.axpy(0.37, x.data(), ys.data(), n);
      av.axpy(0.37, x.data(), ya.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(ya[i] == doctest::Approx(ys[i]).epsilon(kTol));
    }
  }

  TEST_CASE("gemm equivalence on random shapes") {
    if (!kernels::available(kernels::Isa::avx2)) return;
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t m = 1 + rng.below(20), n = 1 + rng.below(40), k = 1 + rng.below(60);
      const auto a = random_vec(m * k, 1000 + trial);
      const auto b = random_vec(k * n, 2000 + trial);
      std::vector<double> cs(m * n, 0.0), ca(m * n, 0.0);
      kernels::table(kernels::Isa::scalar).gemm(m, n, k, a.data(), k, b.data(), n, cs.data(), n);
      kernels::table(kernels::Isa::avx2).gemm(m, n, k, a.data(), k, b.data(), n, ca.data(), n);
      for (std::size_t i = 0; i < cs.size(); ++i) REQUIRE(ca[i] == doctest::Approx(cs[i]).epsilon(kTol).scale(k));
    }
  }

  TEST_CASE("dispatch selection") {
    CHECK(kernels::parse_isa("scalar") == kernels::Isa::scalar);
    CHECK(kernels::parse_isa("avx2") == kernels::Isa::avx2);
    CHECK_FALSE(kernels::parse_isa("neon").has_value());
    CHECK(kernels::available(kernels::Isa::scalar));

    const kernels::Isa before = kernels::active().isa;
    kernels::set_active(kernels::Isa::scalar);
    CHECK(kernels::active().isa == kernels::Isa::scalar);
    kernels::set_active(before);
    CHECK(kernels::active().isa == before);
    if (!kernels::available(kernels::Isa::avx2)) {
      CHECK_THROWS_AS(kernels::table(kernels::Isa::avx2), EnvironmentError);
    }
  }
}
