#include <cmath>
#include <vector>

#include <doctest.h>

#include "bido/error.hpp"
#include "bido/metric.hpp"
#include "support.hpp"

using namespace bido;
using test::random_tensor;

namespace {

MetricFactor random_metric(std::size_t h, Rng& rng, double eps = 1e-12) {
    MetricFactor f = make_metric(h, eps);
    for (double& v : f.factor.mutable_values()) v = rng.uniform(-1, 1);
    return f;
}

// sqrt(diff^T L L^T diff + eps), L the lower triangle.
double oracle_distance(const std::vector<double>& a, const std::vector<double>& b, const MetricFactor& f) {
    const std::size_t h = a.size();
    double q = 0.0;
    for (std::size_t k = 0; k < h; ++k) {
        double y = 0.0;
        for (std::size_t i = k; i < h; ++i) y += (a[i] - b[i]) * f.factor[i * h + k];
        q += y * y;
    }
    return std::sqrt(q + f.epsilon_d);
}

std::vector<double> row(const Tensor& t, std::size_t r) {
    const std::size_t w = t.dim(1);
    return {t.values().begin() + r * w, t.values().begin() + (r + 1) * w};
}

double oracle_contrastive(const Tensor& e, const std::vector<int>& y, const MetricFactor& f, double m) {
    double pos = 0.0, neg = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = i + 1; j < y.size(); ++j) {
            const double d = oracle_distance(row(e, i), row(e, j), f);
            if (y[i] == y[j]) {
                pos += d;
                ++np;
            } else {
                neg += std::max(0.0, m - d);
                ++nn;
            }
        }
    return (np ? pos / np : 0.0) + (nn ? neg / nn : 0.0);
}

}  // namespace

TEST_SUITE("metric") {
    TEST_CASE("axioms on random factors") {
        Rng rng(6);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t h = 1 + rng.below(12);
            const MetricFactor f = random_metric(h, rng);
            std::vector<double> a(h), b(h), c(h);
            for (std::size_t i = 0; i < h; ++i) {
                a[i] = rng.uniform(-2, 2);
                b[i] = rng.uniform(-2, 2);
                c[i] = rng.uniform(-2, 2);
            }
            const double dab = mahalanobis(a, b, f);
            CHECK(dab >= 0.0);
            CHECK(dab == doctest::Approx(mahalanobis(b, a, f)).epsilon(1e-14));
            CHECK(mahalanobis(a, a, f) <= 1e-6);
            CHECK(std::abs(dab - oracle_distance(a, b, f)) <= 1e-12);
        }
    }

    TEST_CASE("identity factor gives the Euclidean distance") {
        Rng rng(7);
        const MetricFactor f = make_metric(9, 0.0);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> a(9), b(9);
            double e = 0.0;
            for (std::size_t i = 0; i < 9; ++i) {
                a[i] = rng.uniform(-3, 3);
                b[i] = rng.uniform(-3, 3);
                e += (a[i] - b[i]) * (a[i] - b[i]);
            }
            CHECK(std::abs(mahalanobis(a, b, f) - std::sqrt(e)) <= 1e-12);
        }
    }

    TEST_CASE("triangle inequality with eps_d = 0") {
        Rng rng(8);
        for (int trial = 0; trial < 500; ++trial) {
            const MetricFactor f = random_metric(6, rng, 0.0);
            std::vector<double> a(6), b(6), c(6);
            for (std::size_t i = 0; i < 6; ++i) {
                a[i] = rng.uniform(-1, 1);
                b[i] = rng.uniform(-1, 1);
                c[i] = rng.uniform(-1, 1);
            }
            CHECK(mahalanobis(a, c, f) <= mahalanobis(a, b, f) + mahalanobis(b, c, f) + 1e-9);
        }
    }

    TEST_CASE("Lambda is PSD by construction") {
        Rng rng(9);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t h = 2 + rng.below(10);
            const MetricFactor f = random_metric(h, rng);
            const Tensor l = f.lower();
            for (int probe = 0; probe < 20; ++probe) {
                std::vector<double> v(h);
                for (double& x : v) x = rng.uniform(-1, 1);
                double q = 0.0;
                for (std::size_t k = 0; k < h; ++k) {
                    double y = 0.0;
                    for (std::size_t i = 0; i < h; ++i) y += v[i] * l[i * h + k];
                    q += y * y;
                }
                CHECK(q >= -1e-12);
            }
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = i + 1; j < h; ++j) CHECK(l[i * h + j] == 0.0);
        }
    }

    TEST_CASE("upper triangle never receives gradient") {
        Rng rng(10);
        MetricFactor f = random_metric(5, rng);
        Tensor a = random_tensor({4, 5}, rng), b = random_tensor({4, 5}, rng);
        sum_all(mahalanobis(a, b, f)).backward();
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = i + 1; j < 5; ++j) CHECK(f.factor.grad()[i * 5 + j] == 0.0);
    }

    TEST_CASE("pair construction") {
        const std::vector<int> y{0, 1, 0, 1};
        const PairSets p = build_pairs(y, 2.0);
        CHECK(p.positive.size() == 2);
        CHECK(p.negative.size() == 4);
        CHECK(p.margin == 2.0);
        CHECK_THROWS_AS(build_pairs(std::vector<int>{1}), Error);
    }

    TEST_CASE("identical positives give zero loss") {
        const MetricFactor f = make_metric(3, 1e-12);
        Tensor e({3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3});
        CHECK(contrastive_loss(e, std::vector<int>{1, 1, 1}, f, 1.0).item() <= 1e-5);
    }

    TEST_CASE("coincident negatives with m = 1 give loss 1") {
        const MetricFactor f = make_metric(3, 0.0);
        Tensor e({2, 3}, {0.5, -1, 2, 0.5, -1, 2});
        CHECK(contrastive_loss(e, std::vector<int>{0, 1}, f, 1.0).item() == doctest::Approx(1.0).epsilon(1e-12));
    }

    TEST_CASE("batch loss matches the pairwise oracle") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(seed);
            const std::size_t n = 2 + rng.below(10), h = 1 + rng.below(8);
            const MetricFactor f = random_metric(h, rng);
            Tensor e = random_tensor({n, h}, rng);
            std::vector<int> y(n);
            for (int& v : y) v = static_cast<int>(rng.below(2));
            const double m = rng.uniform(0.5, 3.0);
            CHECK(std::abs(contrastive_loss(e, y, f, m).item() - oracle_contrastive(e, y, f, m)) <= 1e-10);
        }
    }

    TEST_CASE("gradcheck: mahalanobis and contrastive loss") {
        for (int seed = 0; seed < 50; ++seed) {
            Rng rng(500 + seed);
            MetricFactor f = random_metric(4, rng);
            Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
            Tensor w = random_tensor({3}, rng, -1, 1, false);
            auto r = test::gradcheck([&] { return test::probe(mahalanobis(a, b, f), w); }, {a, b, f.factor});
            INFO(r.where);
            CHECK(r.worst <= test::kFdTolerance);
            Tensor e = random_tensor({6, 4}, rng);
            const std::vector<int> y{0, 1, 0, 1, 1, 0};
            r = test::gradcheck([&] { return contrastive_loss(e, y, f, 2.0); }, {e, f.factor});
            INFO(r.where);
            CHECK(r.worst <= test::kFdTolerance);
        }
    }
}
