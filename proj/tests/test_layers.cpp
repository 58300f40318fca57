#include <cmath>
#include <vector>

#include <doctest.h>

#include "bido/backbone.hpp"
#include "bido/error.hpp"
#include "bido/local_select.hpp"
#include "bido/nn.hpp"
#include "support.hpp"

using namespace bido;
using test::random_tensor;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

AttentionParams random_attention(std::size_t d, std::size_t k, Rng& rng) {
    AttentionParams a = make_attention(d, k, {6, 3}, rng);
    for (double& v : a.cls.mutable_values()) v = rng.uniform(-1, 1);
    for (double& v : a.positional.mutable_values()) v = rng.uniform(-1, 1);
    return a;
}

BackboneConfig tiny_backbone() {
    BackboneConfig c;
    c.input_height = 8;
    c.input_width = 8;
    c.stages = {{2, 2, 3}, {2, 2, 4}};
    c.xml_hidden = 5;
    c.xml_embedding = 3;
    c.feature_gain = 1.0;
    return c;
}

}  // namespace

TEST_SUITE("local-select") {
    TEST_CASE("masks and local maps match direct loops") {
        Rng rng(1);
        const std::size_t b = 2, hh = 3, ww = 2, c = 4, k = 5, d = hh * ww;
        FeatureMap f{random_tensor({b, hh, ww, c}, rng)};
        for (MaskActivation act : {MaskActivation::Sigmoid, MaskActivation::Relu}) {
            const SelectorParams p = make_selector(c, k, act, rng);
            const MaskSet m = candidate_masks(f, p);
            const LocalMaps l = local_feature_maps(f, m);
            REQUIRE(m.values.shape() == Shape{b, k, d});
            REQUIRE(l.values.shape() == Shape{b, k, d});
            for (std::size_t n = 0; n < b; ++n)
                for (std::size_t i = 0; i < k; ++i)
                    for (std::size_t x = 0; x < d; ++x) {
                        double z = 0.0, mean_c = 0.0;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            z += f.values[(n * d + x) * c + ch] * p.kernels[ch * k + i];
                            mean_c += f.values[(n * d + x) * c + ch] / c;
                        }
                        const double mask = act == MaskActivation::Sigmoid ? sigmoid_ref(z) : std::max(0.0, z);
                        CHECK(m.values[(n * k + i) * d + x] == doctest::Approx(mask).epsilon(1e-13));
                        CHECK(l.values[(n * k + i) * d + x] ==
                              doctest::Approx(mask * mean_c / static_cast<double>(d)).epsilon(1e-13));
                    }
        }
    }

    TEST_CASE("sigmoid masks lie in (0, 1)") {
        Rng rng(2);
        FeatureMap f{random_tensor({1, 4, 4, 3}, rng, -5, 5)};
        const MaskSet m = candidate_masks(f, make_selector(3, 8, MaskActivation::Sigmoid, rng));
        for (double v : m.values.values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }

    TEST_CASE("attention matches the scaled dot-product oracle with CLS last") {
        Rng rng(3);
        const std::size_t b = 2, k = 3, d = 4, n = k + 1;
        const AttentionParams a = random_attention(d, k, rng);
        LocalMaps l{random_tensor({b, k, d}, rng)};
        const AttentionOutput out = attend_local(l, a);
        REQUIRE(out.tokens.shape() == Shape{b, n, d});
        REQUIRE(out.weights.shape() == Shape{b, n, n});
        for (std::size_t s = 0; s < b; ++s) {
            std::vector<double> x(n * d);
            for (std::size_t t = 0; t < n; ++t)
                for (std::size_t j = 0; j < d; ++j) {
                    const double base = t < k ? l.values[(s * k + t) * d + j] : a.cls[j];
                    x[t * d + j] = base + a.positional[t * d + j];
                }
            auto proj = [&](const Tensor& w) {
                std::vector<double> y(n * d, 0.0);
                for (std::size_t t = 0; t < n; ++t)
                    for (std::size_t j = 0; j < d; ++j)
                        for (std::size_t q = 0; q < d; ++q) y[t * d + j] += x[t * d + q] * w[q * d + j];
                return y;
            };
            const auto q = proj(a.w_query), key = proj(a.w_key), v = proj(a.w_value);
            for (std::size_t t = 0; t < n; ++t) {
                std::vector<double> sc(n);
                double mx = -1e300;
                for (std::size_t u = 0; u < n; ++u) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) dot += q[t * d + j] * key[u * d + j];
                    sc[u] = dot / std::sqrt(static_cast<double>(d));
                    mx = std::max(mx, sc[u]);
                }
                double z = 0.0;
                for (double& e : sc) z += (e = std::exp(e - mx));
                double row_sum = 0.0;
                for (std::size_t u = 0; u < n; ++u) {
                    CHECK(out.weights[(s * n + t) * n + u] == doctest::Approx(sc[u] / z).epsilon(1e-12));
                    row_sum += out.weights[(s * n + t) * n + u];
                }
                CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-14));
                for (std::size_t j = 0; j < d; ++j) {
                    double e = 0.0;
                    for (std::size_t u = 0; u < n; ++u) e += sc[u] / z * v[u * d + j];
                    CHECK(out.tokens[(s * n + t) * d + j] == doctest::Approx(e).epsilon(1e-12));
                }
            }
        }
        const DexEmbedding z = project_dex(out.tokens, a);
        CHECK(z.values.shape() == Shape{b, 3});
    }

    TEST_CASE("CLS and positional embeddings start at zero") {
        Rng rng(4);
        const AttentionParams a = make_attention(6, 4, {8}, rng);
        for (double v : a.cls.values()) CHECK(v == 0.0);
        for (double v : a.positional.values()) CHECK(v == 0.0);
        for (double v : a.w_query.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(6.0));
    }

    TEST_CASE("shape errors") {
        Rng rng(5);
        FeatureMap f{random_tensor({1, 2, 2, 3}, rng)};
        CHECK_THROWS_AS(candidate_masks(f, make_selector(4, 2, MaskActivation::Sigmoid, rng)), Error);
        CHECK_THROWS_AS(make_selector(3, 0, MaskActivation::Sigmoid, rng), Error);
        const AttentionParams a = make_attention(5, 2, {3}, rng);
        CHECK_THROWS_AS(attend_local(LocalMaps{random_tensor({1, 2, 4}, rng)}, a), Error);
    }

    TEST_CASE("gradcheck: masks, local maps, attention, projection") {
        for (int seed = 0; seed < 50; ++seed) {
            Rng rng(600 + seed);
            const std::size_t k = 3, c = 3;
            FeatureMap f{random_tensor({2, 2, 2, c}, rng)};
            SelectorParams p = make_selector(c, k, seed % 2 ? MaskActivation::Relu : MaskActivation::Sigmoid, rng);
            if (p.activation == MaskActivation::Relu) {
                for (double& v : f.values.mutable_values()) v = std::abs(v) + 0.1;
                for (double& v : p.kernels.mutable_values()) v = std::abs(v) + 0.05;
            }
            AttentionParams a = random_attention(4, k, rng);
            for (double& v : a.projection.layers[0].bias.mutable_values()) v = 0.5;
            Tensor w = random_tensor({2, 3}, rng, -1, 1, false);
            auto fn = [&] {
                const LocalMaps l = local_feature_maps(f, candidate_masks(f, p));
                LocalMaps scaled{scale(l.values, 8.0)};
                return test::probe(project_dex(attend_local(scaled, a).tokens, a).values, w);
            };
            const auto r = test::gradcheck(fn, {f.values, p.kernels, a.cls, a.positional, a.w_query, a.w_key,
                                                a.w_value, a.projection.layers[0].weight});
            INFO(r.where);
            CHECK(r.worst <= test::kFdTolerance);
        }
    }
}

TEST_SUITE("backbone") {
    TEST_CASE("output shape follows the stages") {
        const BackboneConfig d = desk_backbone();
        CHECK(d.output_shape() == Shape{8, 8, 32});
        const BackboneConfig full = full_scale_backbone();
        CHECK(full.output_shape().size() == 3);
        BackboneConfig bad = d;
        bad.stages = {{9, 9, 4}, {9, 9, 4}};
        CHECK_THROWS_AS(bad.output_shape(), Error);
    }

    TEST_CASE("image tensor is scaled to [0, 1]") {
        image::RgbImage img = image::pack_rgb(std::vector<std::uint8_t>{0, 255, 51}, image::ImageGeometry(1, 1));
        const Tensor t = image_to_tensor(img);
        CHECK(t.shape() == Shape{1, 1, 1, 3});
        CHECK(t[0] == 0.0);
        CHECK(t[1] == 1.0);
        CHECK(t[2] == doctest::Approx(0.2));
    }

    TEST_CASE("geometry mismatch is rejected") {
        Rng rng(1);
        const DexBackbone net(tiny_backbone(), rng);
        const auto img = image::pack_rgb({}, image::ImageGeometry(4, 4));
        CHECK_THROWS_AS(dex_backbone(img, net), Error);
        const auto ok = image::pack_rgb({}, image::ImageGeometry(8, 8));
        CHECK(dex_backbone(ok, net).values.shape() == Shape{1, 2, 2, 4});
    }

    TEST_CASE("feature gain scales both stacks") {
        BackboneConfig c = tiny_backbone();
        Rng r1(3), r2(3);
        const DexBackbone a(c, r1);
        c.feature_gain = 4.0;
        const DexBackbone b(c, r2);
        Rng px(9);
        const Tensor x = random_tensor({1, 8, 8, 3}, px, 0, 1, false);
        const Tensor fa = a.forward(x).values, fb = b.forward(x).values;
        for (std::size_t i = 0; i < fa.size(); ++i) CHECK(fb[i] == doctest::Approx(4.0 * fa[i]));
    }

    TEST_CASE("he init bounds") {
        Rng rng(2);
        const nn::Mlp m = nn::make_mlp({16, 8, 4}, nn::Activation::Relu, rng, nn::Init::He);
        for (double v : m.layers[0].weight.values()) CHECK(std::abs(v) <= std::sqrt(6.0 / 16));
        for (double v : m.layers[1].weight.values()) CHECK(std::abs(v) <= std::sqrt(3.0 / 8));
        for (double v : m.layers[0].bias.values()) CHECK(v == 0.0);
    }

    TEST_CASE("gradcheck: conv stacks and xml head") {
        for (int seed = 0; seed < 50; ++seed) {
            Rng rng(700 + seed);
            BackboneConfig c = tiny_backbone();
            c.activation = nn::Activation::Sigmoid;
            XmlBackbone net(c, rng);
            for (Tensor& b : net.convs().biases()) {
                for (double& v : b.mutable_values()) v = rng.uniform(-0.5, 0.5);
            }
            Tensor x = random_tensor({2, 8, 8, 3}, rng, 0, 1);
            Tensor w = random_tensor({2, 3}, rng, -1, 1, false);
            for (auto& l : net.head().layers) {
                for (double& v : l.bias.mutable_values()) v = 0.3;
            }
            std::vector<Tensor> inputs{x};
            for (Tensor& t : net.convs().weights()) inputs.push_back(t);
            for (auto& l : net.head().layers) inputs.push_back(l.weight);
            const auto r = test::gradcheck([&] { return test::probe(net.forward(x).values, w); }, inputs);
            INFO(r.where);
            CHECK(r.worst <= test::kFdTolerance);
        }
    }
}
