#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include <doctest.h>

#include "bido/checkpoint.hpp"
#include "bido/error.hpp"
#include "bido/experiment.hpp"
#include "bido/model.hpp"
#include "bido/optim.hpp"
#include "bido/synth.hpp"
#include "support.hpp"

using namespace bido;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.backbone.input_height = 8;
    c.backbone.input_width = 8;
    c.backbone.stages = {{2, 2, 3}, {2, 2, 4}};
    c.backbone.xml_hidden = 5;
    c.backbone.feature_gain = 4.0;
    c.k = 3;
    c.l = 4;
    c.h = 4;
    c.rank = 2;
    c.dex_mlp_hidden = {5};
    c.ops_head_bound = 2.0;
    return c;
}

std::vector<Sample> tiny_corpus(std::size_t n, std::uint64_t seed = 1) {
    synth::CorpusOptions o;
    o.n = n;
    o.seed = seed;
    const auto raw = synth::synthesize(o);
    return experiment::to_samples(raw, image::ImageGeometry(8, 8), image::ImageGeometry(8, 8));
}

Tensor batch(const std::vector<Sample>& s, bool dex) {
    std::vector<const image::RgbImage*> imgs;
    for (const Sample& x : s) imgs.push_back(dex ? &x.dex : &x.xml);
    return images_to_tensor(imgs);
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::BadConfig;
}

}  // namespace

TEST_SUITE("model") {
    TEST_CASE("config validation") {
        ModelConfig c = tiny_config();
        CHECK_NOTHROW(c.validate());
        c.k = 0;
        CHECK(code_of([&] { c.validate(); }) == ErrorCode::BadConfig);
        c = tiny_config();
        c.fusion = FusionMode::Sum;
        c.l = 6;
        CHECK(code_of([&] { c.validate(); }) == ErrorCode::BadConfig);
        c = tiny_config();
        c.margin = 0.0;
        CHECK_THROWS_AS(c.validate(), Error);
        TrainConfig t;
        t.batch_size = 0;
        CHECK_THROWS_AS(t.validate(), Error);
        t = {};
        t.weights.gamma = -1.0;
        CHECK_THROWS_AS(t.validate(), Error);
        CHECK(tiny_config().fused_width() == 4);
        c = tiny_config();
        c.fusion = FusionMode::Concat;
        CHECK(c.fused_width() == 8);
    }

    TEST_CASE("enum names round-trip") {
        for (Variant v : {Variant::Full, Variant::DexOnly, Variant::XmlOnly}) CHECK(parse_variant(to_string(v)) == v);
        for (FusionMode f : {FusionMode::Ops, FusionMode::Sum, FusionMode::Concat}) CHECK(parse_fusion(to_string(f)) == f);
        for (PredictHead p : {PredictHead::Ops, PredictHead::Average}) {
            CHECK(parse_predict_head(to_string(p)) == p);
        }
        CHECK_THROWS_AS(parse_variant("both"), Error);
    }

    TEST_CASE("model config json round-trip") {
        ModelConfig c = tiny_config();
        c.variant = Variant::DexOnly;
        c.fusion = FusionMode::Concat;
        const ModelConfig back = model_config_from_json(to_json(c));
        CHECK(to_json(back) == to_json(c));
        auto j = to_json(c);
        j.erase("k");
        CHECK(code_of([&] { model_config_from_json(j); }) == ErrorCode::BadConfig);
    }

    TEST_CASE("metrics from counts") {
        const Metrics m = Metrics::from_counts(8, 5, 2, 1);
        CHECK(*m.accuracy == doctest::Approx(13.0 / 16.0));
        CHECK(*m.precision == doctest::Approx(0.8));
        CHECK(*m.recall == doctest::Approx(8.0 / 9.0));
        CHECK(*m.f1 == doctest::Approx(2 * 0.8 * (8.0 / 9.0) / (0.8 + 8.0 / 9.0)));

        const Metrics none = Metrics::from_counts(0, 4, 0, 0);
        CHECK_FALSE(none.precision.has_value());
        CHECK_FALSE(none.recall.has_value());
        CHECK_FALSE(none.f1.has_value());
        CHECK(none.f1_or_zero() == 0.0);
        CHECK(none.to_json()["precision"].is_null());
        CHECK(*none.accuracy == 1.0);

        const Metrics miss = Metrics::from_counts(0, 0, 3, 2);
        CHECK(*miss.precision == 0.0);
        CHECK(*miss.recall == 0.0);
        CHECK_FALSE(miss.f1.has_value());
        CHECK_FALSE(Metrics::from_counts(0, 0, 0, 0).accuracy.has_value());
    }

    TEST_CASE("confusion counts") {
        const std::vector<int> pred{1, 0, 1, 1, 0}, truth{1, 0, 0, 1, 1};
        const Metrics m = confusion(pred, truth);
        CHECK(m.tp == 2);
        CHECK(m.tn == 1);
        CHECK(m.fp == 1);
        CHECK(m.fn == 1);
        CHECK_THROWS_AS(confusion(pred, std::vector<int>{1}), Error);
    }

    TEST_CASE("joint loss weighting") {
        const LossWeights w;
        CHECK(joint_loss(1.0, 2.0, 3.0, 4.0, w) == doctest::Approx(1 + 2 + 0.3 + 0.4));
        const Tensor a = Tensor::scalar(1.0), b = Tensor::scalar(2.0);
        LossWeights z{1.0, 1.0, 0.0, 0.0};
        CHECK(joint_loss(a, b, Tensor(), Tensor(), z).item() == doctest::Approx(3.0));
        CHECK_THROWS_AS(joint_loss(a, b, Tensor(), Tensor(), w), Error);
    }

    TEST_CASE("split is 80/10/10, disjoint and seeded") {
        const DatasetSplit s = split_dataset(1000, 3);
        CHECK(s.train.size() == 800);
        CHECK(s.val.size() == 100);
        CHECK(s.test.size() == 100);
        std::set<std::size_t> all(s.train.begin(), s.train.end());
        all.insert(s.val.begin(), s.val.end());
        all.insert(s.test.begin(), s.test.end());
        CHECK(all.size() == 1000);
        CHECK(split_dataset(1000, 3).test == s.test);
        CHECK(split_dataset(1000, 4).test != s.test);
        const DatasetSplit small = split_dataset(9, 1);
        CHECK(small.val.empty());
        CHECK(small.train.size() == 9);
    }

    TEST_CASE("learning-rate schedule and momentum update") {
        OptimizerState st;
        for (std::size_t e = 0; e < 12; ++e) {
            CHECK(scheduled_lr(st, e) == doctest::Approx(0.001 * std::pow(0.9, std::floor(e / 2.0))).epsilon(1e-15));
        }
        std::vector<double> p{1.0, -2.0}, v;
        const std::vector<double> g{0.5, 0.25};
        sgd_momentum_update(p, g, v, 0.1, 0.9);
        CHECK(p[0] == doctest::Approx(0.95));
        sgd_momentum_update(p, g, v, 0.1, 0.9);
        CHECK(v[0] == doctest::Approx(0.95));
        CHECK(p[0] == doctest::Approx(0.95 - 0.095));
    }

    TEST_CASE("checkpoint round-trip and corruption") {
        Rng rng(3);
        std::vector<NamedParam> ps{{"a", test::random_tensor({2, 3}, rng)}, {"b.c", test::random_tensor({4}, rng)}};
        const auto bytes = serialize_checkpoint(ps);
        const auto back = deserialize_checkpoint(bytes);
        REQUIRE(back.size() == 2);
        CHECK(back[1].name == "b.c");
        CHECK(back[0].tensor.shape() == Shape{2, 3});
        for (std::size_t i = 0; i < 6; ++i) CHECK(back[0].tensor[i] == ps[0].tensor[i]);
        auto bad = bytes;
        bad[0] = 'X';
        CHECK(code_of([&] { deserialize_checkpoint(bad); }) == ErrorCode::BadCheckpoint);
        auto cut = bytes;
        cut.resize(cut.size() - 3);
        CHECK(code_of([&] { deserialize_checkpoint(cut); }) == ErrorCode::BadCheckpoint);
    }

    TEST_CASE("forward shapes and parameter sets per variant") {
        const auto data = tiny_corpus(4);
        const Tensor dex = batch(data, true), xml = batch(data, false);
        for (Variant v : {Variant::Full, Variant::DexOnly, Variant::XmlOnly}) {
            ModelConfig c = tiny_config();
            c.variant = v;
            const BidoModel m(c, 1);
            const ForwardPass f = m.forward(dex, xml);
            bool any_dex = false, any_xml = false, any_fused = false;
            for (const NamedParam& p : m.parameters()) {
                any_dex |= p.name.rfind("dex.", 0) == 0;
                any_xml |= p.name.rfind("xml.", 0) == 0;
                any_fused |= p.name.rfind("fusion.", 0) == 0;
            }
            CHECK(any_dex == (v != Variant::XmlOnly));
            CHECK(any_xml == (v != Variant::DexOnly));
            CHECK(any_fused == (v == Variant::Full));
            CHECK(f.z_dex.defined() == (v != Variant::XmlOnly));
            CHECK(f.z_xml.defined() == (v != Variant::DexOnly));
            const auto p = m.malicious_probability(f, PredictHead::Ops);
            CHECK(p.size() == 4);
            for (double x : p) CHECK((x > 0.0 && x < 1.0));
            const std::vector<int> labels{0, 1, 0, 1};
            CHECK(std::isfinite(m.loss(f, labels, {}).total.item()));
        }
    }

    TEST_CASE("fusion head init depends on the fusion mode") {
        ModelConfig c = tiny_config();
        c.ops_head_bound = 50.0;
        const BidoModel ops(c, 1);
        double widest = 0.0;
        for (double v : ops.heads().ops.weight.values()) widest = std::max(widest, std::abs(v));
        CHECK(widest > 1.0);
        c.fusion = FusionMode::Sum;
        const BidoModel sum(c, 1);
        for (double v : sum.heads().ops.weight.values()) CHECK(std::abs(v) <= 0.5);
    }

    TEST_CASE("load_parameters checks names and shapes") {
        BidoModel m(tiny_config(), 1);
        auto ps = m.parameters();
        ps.pop_back();
        CHECK(code_of([&] { m.load_parameters(ps); }) == ErrorCode::BadCheckpoint);
        ps = BidoModel(tiny_config(), 2).parameters();
        ps[0].tensor = Tensor({1});
        CHECK(code_of([&] { m.load_parameters(ps); }) == ErrorCode::BadCheckpoint);
    }

    TEST_CASE("save_model and load_model reproduce predictions") {
        const auto data = tiny_corpus(6);
        const BidoModel m(tiny_config(), 5);
        const auto path = std::filesystem::temp_directory_path() / "bido_test_model.ckpt";
        save_model(path, m);
        const BidoModel back = load_model(path, tiny_config());
        CHECK(experiment::fingerprint(back) == experiment::fingerprint(m));
        NoGradGuard g;
        const auto a = m.malicious_probability(m.forward(batch(data, true), batch(data, false)), PredictHead::Ops);
        const auto b =
            back.malicious_probability(back.forward(batch(data, true), batch(data, false)), PredictHead::Ops);
        CHECK(a == b);
        std::filesystem::remove(path);
    }

    TEST_CASE("gradcheck: joint loss through the full model") {
        const auto data = tiny_corpus(4, 2);
        const Tensor dex = batch(data, true), xml = batch(data, false);
        const std::vector<int> labels{data[0].label, data[1].label, data[2].label, data[3].label};
        for (int seed = 0; seed < 50; ++seed) {
            ModelConfig c = tiny_config();
            c.backbone.activation = nn::Activation::Sigmoid;
            const BidoModel m(c, 1000 + seed);
            // Positive biases keep hidden ReLUs alive, away from the Z = 0 point
            // where the fused code is undefined.
            Rng rng(77 + seed);
            std::vector<Tensor> inputs;
            for (const NamedParam& p : m.parameters()) {
                inputs.push_back(p.tensor);
                if (p.name.ends_with(".bias")) {
                    for (double& v : inputs.back().mutable_values()) v = rng.uniform(0.05, 0.2);
                }
            }
            const auto r = test::gradcheck([&] { return m.loss(m.forward(dex, xml), labels, {}).total; }, inputs, 6);
            INFO(r.where);
            CHECK(r.worst <= test::kFdTolerance);
        }
    }

    TEST_CASE("training refuses a one-class corpus") {
        auto data = tiny_corpus(20);
        for (Sample& s : data) s.label = 1;
        TrainConfig t;
        t.model = tiny_config();
        t.epochs = 1;
        CHECK(code_of([&] { train(data, t); }) == ErrorCode::DegenerateCorpus);
    }

    TEST_CASE("divergence is reported as NonFinite") {
        const auto data = tiny_corpus(20);
        TrainConfig t;
        t.model = tiny_config();
        t.epochs = 3;
        t.learning_rate = 1e6;
        t.divergence_limit = 50.0;
        CHECK(code_of([&] { train(data, t); }) == ErrorCode::NonFinite);
    }

    TEST_CASE("training is deterministic and logs the schedule") {
        const auto data = tiny_corpus(30);
        TrainConfig t;
        t.model = tiny_config();
        t.epochs = 3;
        t.seed = 4;
        const TrainResult a = train(data, t), b = train(data, t);
        CHECK(experiment::fingerprint(a.model) == experiment::fingerprint(b.model));
        REQUIRE(a.history.size() == 3);
        CHECK(a.history[2].learning_rate == doctest::Approx(0.0009));
        for (std::size_t e = 0; e < 3; ++e) CHECK(a.history[e].loss == b.history[e].loss);
        t.seed = 5;
        CHECK(experiment::fingerprint(train(data, t).model) != experiment::fingerprint(a.model));
        const std::string jsonl = history_to_jsonl(a.history);
        CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 3);
    }

    TEST_CASE("evaluation on an empty set is an error") {
        const auto data = tiny_corpus(4);
        const BidoModel m(tiny_config(), 1);
        const std::vector<std::size_t> none;
        CHECK(code_of([&] { evaluate(m, data, none); }) == ErrorCode::EmptyEvalSet);
        const Metrics all = evaluate(m, data);
        CHECK(all.tp + all.tn + all.fp + all.fn == 4);
    }
}
