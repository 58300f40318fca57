#include "bido/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "bido/checkpoint.hpp"
#include "bido/error.hpp"
#include "bido/rng.hpp"

namespace bido {
namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::BadConfig, what);
}

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

double item_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

Tensor batch_tensor(std::span<const Sample> samples, std::span<const std::size_t> idx, bool dex) {
    std::vector<const image::RgbImage*> images;
    images.reserve(idx.size());
    for (std::size_t i : idx) images.push_back(dex ? &samples[i].dex : &samples[i].xml);
    return images_to_tensor(images);
}

std::vector<double> softmax_malicious(const Tensor& logits) {
    const std::size_t b = logits.dim(0);
    const auto v = logits.values();
    std::vector<double> p(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double a = v[2 * i], c = v[2 * i + 1];
        p[i] = 1.0 / (1.0 + std::exp(a - c));
    }
    return p;
}

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::DexOnly: return "dex-only";
        case Variant::XmlOnly: return "xml-only";
    }
    return "?";
}

std::string to_string(FusionMode f) {
    switch (f) {
        case FusionMode::Ops: return "ops";
        case FusionMode::Sum: return "sum";
        case FusionMode::Concat: return "concat";
    }
    return "?";
}

std::string to_string(PredictHead p) { return p == PredictHead::Ops ? "ops" : "average"; }

Variant parse_variant(const std::string& s) {
    if (s == "full") return Variant::Full;
    if (s == "dex-only") return Variant::DexOnly;
    if (s == "xml-only") return Variant::XmlOnly;
    throw Error(ErrorCode::BadConfig, "unknown variant '" + s + "'");
}

FusionMode parse_fusion(const std::string& s) {
    if (s == "ops") return FusionMode::Ops;
    if (s == "sum") return FusionMode::Sum;
    if (s == "concat") return FusionMode::Concat;
    throw Error(ErrorCode::BadConfig, "unknown fusion '" + s + "'");
}

PredictHead parse_predict_head(const std::string& s) {
    if (s == "ops") return PredictHead::Ops;
    if (s == "average") return PredictHead::Average;
    throw Error(ErrorCode::BadConfig, "unknown predict head '" + s + "'");
}

void LossWeights::validate() const {
    require(finite_nonneg(alpha) && finite_nonneg(beta) && finite_nonneg(gamma) && finite_nonneg(delta),
            "loss weights must be finite and >= 0");
}

void ModelConfig::validate() const {
    backbone.output_shape();
    require(k >= 1, "k must be >= 1");
    require(l >= 1 && h >= 1 && rank >= 1, "l, h, R must be >= 1");
    require(std::isfinite(margin) && margin > 0.0, "margin must be > 0");
    require(std::isfinite(epsilon_d) && epsilon_d >= 0.0, "epsilon_d must be >= 0");
    require(std::isfinite(ops_head_bound) && ops_head_bound > 0.0, "ops head bound must be > 0");
    require(std::isfinite(backbone.feature_gain) && backbone.feature_gain > 0.0, "feature gain must be > 0");
    for (std::size_t w : dex_mlp_hidden) require(w >= 1, "mlp widths must be >= 1");
    if (fusion == FusionMode::Sum) require(l == h, "sum fusion needs l == h");
}

std::size_t ModelConfig::fused_width() const { return fusion == FusionMode::Concat ? h + l : h; }

void TrainConfig::validate() const {
    model.validate();
    weights.validate();
    require(batch_size >= 1, "batch size must be >= 1");
    require(epochs >= 1, "epochs must be >= 1");
    require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning rate must be > 0");
    require(std::isfinite(momentum) && momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    require(std::isfinite(decay_factor) && decay_factor > 0.0, "decay factor must be > 0");
    require(decay_every >= 1, "decay interval must be >= 1");
    require(std::isfinite(divergence_limit) && divergence_limit > 0.0, "divergence limit must be > 0");
}

nlohmann::json to_json(const ModelConfig& c) {
    nlohmann::json stages = nlohmann::json::array();
    for (const ConvStage& s : c.backbone.stages) stages.push_back({s.kernel, s.stride, s.out_channels});
    return {{"input_height", c.backbone.input_height},
            {"input_width", c.backbone.input_width},
            {"stages", stages},
            {"activation", nn::to_string(c.backbone.activation)},
            {"xml_hidden", c.backbone.xml_hidden},
            {"k", c.k},
            {"l", c.l},
            {"h", c.h},
            {"rank", c.rank},
            {"margin", c.margin},
            {"epsilon_d", c.epsilon_d},
            {"mask_activation", c.mask_activation == MaskActivation::Sigmoid ? "sigmoid" : "relu"},
            {"dex_mlp_hidden", c.dex_mlp_hidden},
            {"variant", to_string(c.variant)},
            {"fusion", to_string(c.fusion)},
            {"use_metric", c.use_metric},
            {"feature_gain", c.backbone.feature_gain},
            {"ops_head_bound", c.ops_head_bound}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    try {
        ModelConfig c;
        c.backbone.input_height = j.at("input_height").get<std::size_t>();
        c.backbone.input_width = j.at("input_width").get<std::size_t>();
        c.backbone.stages.clear();
        for (const auto& s : j.at("stages")) {
            c.backbone.stages.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
        }
        c.backbone.activation = nn::parse_activation(j.at("activation").get<std::string>());
        c.backbone.xml_hidden = j.at("xml_hidden").get<std::size_t>();
        c.k = j.at("k").get<std::size_t>();
        c.l = j.at("l").get<std::size_t>();
        c.h = j.at("h").get<std::size_t>();
        c.backbone.xml_embedding = c.h;
        c.rank = j.at("rank").get<std::size_t>();
        c.margin = j.at("margin").get<double>();
        c.epsilon_d = j.at("epsilon_d").get<double>();
        const std::string mask = j.at("mask_activation").get<std::string>();
        require(mask == "sigmoid" || mask == "relu", "mask activation '" + mask + "'");
        c.mask_activation = mask == "sigmoid" ? MaskActivation::Sigmoid : MaskActivation::Relu;
        c.dex_mlp_hidden = j.at("dex_mlp_hidden").get<std::vector<std::size_t>>();
        c.variant = parse_variant(j.at("variant").get<std::string>());
        c.fusion = parse_fusion(j.at("fusion").get<std::string>());
        c.use_metric = j.at("use_metric").get<bool>();
        c.backbone.feature_gain = j.at("feature_gain").get<double>();
        c.ops_head_bound = j.at("ops_head_bound").get<double>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::BadConfig, std::string("model config: ") + e.what());
    }
}

Metrics Metrics::from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
    Metrics m;
    m.tp = tp;
    m.tn = tn;
    m.fp = fp;
    m.fn = fn;
    auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    m.accuracy = ratio(tp + tn, tp + tn + fp + fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    }
    return m;
}

nlohmann::json Metrics::to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"tp", tp},
            {"tn", tn},
            {"fp", fp},
            {"fn", fn},
            {"accuracy", opt(accuracy)},
            {"precision", opt(precision)},
            {"recall", opt(recall)},
            {"f1", opt(f1)}};
}

Metrics confusion(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw Error(ErrorCode::ShapeMismatch, "prediction/label count");
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = predictions[i] == 1, truth = labels[i] == 1;
        if (pred && truth) ++tp;
        else if (!pred && !truth) ++tn;
        else if (pred) ++fp;
        else ++fn;
    }
    return Metrics::from_counts(tp, tn, fp, fn);
}

void HeadParams::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    xml.collect(out, prefix + ".xml");
    dex.collect(out, prefix + ".dex");
    ops.collect(out, prefix + ".ops");
}

Tensor head_loss(const Tensor& z, std::span<const int> labels, const nn::Linear& head) {
    return cross_entropy(head.forward(z), labels);
}

Tensor joint_loss(const Tensor& l_xml, const Tensor& l_dex, const Tensor& l_ops, const Tensor& l_con,
                  const LossWeights& w) {
    w.validate();
    Tensor total;
    auto term = [&total](const Tensor& t, double weight, const char* name) {
        if (weight == 0.0 && !t.defined()) return;
        if (!t.defined()) throw Error(ErrorCode::BadConfig, std::string("missing loss term ") + name);
        if (!std::isfinite(t.item())) throw Error(ErrorCode::NonFinite, std::string("loss term ") + name);
        Tensor s = scale(t, weight);
        total = total.defined() ? add(total, s) : s;
    };
    term(l_xml, w.alpha, "xml");
    term(l_dex, w.beta, "dex");
    term(l_ops, w.gamma, "ops");
    term(l_con, w.delta, "con");
    if (!total.defined()) total = Tensor::scalar(0.0);
    return total;
}

double joint_loss(double l_xml, double l_dex, double l_ops, double l_con, const LossWeights& w) {
    w.validate();
    for (double v : {l_xml, l_dex, l_ops, l_con}) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "loss term");
    }
    return w.alpha * l_xml + w.beta * l_dex + w.gamma * l_ops + w.delta * l_con;
}

BidoModel::BidoModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.backbone.xml_embedding = cfg_.h;
    cfg_.validate();
    Rng rng(Rng::derive(seed, 0x4D4F44));
    const Shape fshape = cfg_.backbone.output_shape();
    const std::size_t d = fshape[0] * fshape[1];
    dex_net_ = DexBackbone(cfg_.backbone, rng);
    xml_net_ = XmlBackbone(cfg_.backbone, rng);
    selector_ = make_selector(fshape[2], cfg_.k, cfg_.mask_activation, rng);
    std::vector<std::size_t> widths = cfg_.dex_mlp_hidden;
    widths.push_back(cfg_.l);
    attention_ = make_attention(d, cfg_.k, widths, rng);
    bank_ = make_factor_bank(cfg_.h, cfg_.l, cfg_.rank, rng);
    metric_ = make_metric(cfg_.fused_width(), cfg_.epsilon_d);
    heads_.xml = nn::make_linear(cfg_.h, 2, rng);
    heads_.dex = nn::make_linear(cfg_.l, 2, rng);
    if (cfg_.fusion == FusionMode::Ops) {
        heads_.ops = {nn::uniform_param({cfg_.fused_width(), 2}, cfg_.ops_head_bound, rng), Tensor({2}, true)};
    } else {
        heads_.ops = nn::make_linear(cfg_.fused_width(), 2, rng);
    }
}

ForwardPass BidoModel::forward(const Tensor& dex, const Tensor& xml) const {
    ForwardPass f;
    if (uses_dex()) {
        const FeatureMap fm = dex_net_.forward(dex);
        const MaskSet masks = candidate_masks(fm, selector_);
        const LocalMaps local = local_feature_maps(fm, masks);
        const AttentionOutput att = attend_local(local, attention_);
        f.z_dex = project_dex(att.tokens, attention_).values;
        f.logits_dex = heads_.dex.forward(f.z_dex);
    }
    if (uses_xml()) {
        f.z_xml = xml_net_.forward(xml).values;
        f.logits_xml = heads_.xml.forward(f.z_xml);
    }
    if (cfg_.variant == Variant::Full) {
        switch (cfg_.fusion) {
            case FusionMode::Ops: f.z_fused = factorize(f.z_xml, f.z_dex, bank_); break;
            case FusionMode::Sum: f.z_fused = add(f.z_xml, f.z_dex); break;
            case FusionMode::Concat: f.z_fused = concat({f.z_xml, f.z_dex}, 1); break;
        }
        f.logits_ops = heads_.ops.forward(f.z_fused);
    }
    return f;
}

LossTerms BidoModel::loss(const ForwardPass& f, std::span<const int> labels, const LossWeights& w) const {
    LossTerms out;
    Tensor l_xml, l_dex, l_ops, l_con;
    LossWeights eff = w;
    switch (cfg_.variant) {
        case Variant::Full: {
            l_xml = cross_entropy(f.logits_xml, labels);
            l_dex = cross_entropy(f.logits_dex, labels);
            l_ops = cross_entropy(f.logits_ops, labels);
            if (cfg_.use_metric && labels.size() >= 2 && w.delta > 0.0) {
                l_con = contrastive_loss(f.z_fused, labels, metric_, cfg_.margin);
            } else {
                eff.delta = 0.0;
            }
            break;
        }
        case Variant::DexOnly:
            l_dex = cross_entropy(f.logits_dex, labels);
            eff.alpha = eff.gamma = eff.delta = 0.0;
            break;
        case Variant::XmlOnly:
            l_xml = cross_entropy(f.logits_xml, labels);
            eff.beta = eff.gamma = eff.delta = 0.0;
            break;
    }
    out.total = joint_loss(eff.alpha > 0 ? l_xml : Tensor{}, eff.beta > 0 ? l_dex : Tensor{},
                           eff.gamma > 0 ? l_ops : Tensor{}, eff.delta > 0 ? l_con : Tensor{}, eff);
    out.xml = item_or_zero(l_xml);
    out.dex = item_or_zero(l_dex);
    out.ops = item_or_zero(l_ops);
    out.con = item_or_zero(l_con);
    return out;
}

std::vector<double> BidoModel::malicious_probability(const ForwardPass& f, PredictHead head) const {
    switch (cfg_.variant) {
        case Variant::DexOnly: return softmax_malicious(f.logits_dex);
        case Variant::XmlOnly: return softmax_malicious(f.logits_xml);
        case Variant::Full: break;
    }
    std::vector<double> p = softmax_malicious(f.logits_ops);
    if (head == PredictHead::Average) {
        const auto px = softmax_malicious(f.logits_xml);
        const auto pd = softmax_malicious(f.logits_dex);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = (p[i] + px[i] + pd[i]) / 3.0;
    }
    return p;
}

std::vector<NamedParam> BidoModel::parameters() const {
    std::vector<NamedParam> out;
    if (uses_dex()) {
        dex_net_.collect(out, "dex");
        out.push_back({"select.kernels", selector_.kernels});
        attention_.collect(out, "attention");
        heads_.dex.collect(out, "head.dex");
    }
    if (uses_xml()) {
        xml_net_.collect(out, "xml");
        heads_.xml.collect(out, "head.xml");
    }
    if (cfg_.variant == Variant::Full) {
        if (cfg_.fusion == FusionMode::Ops) bank_.collect(out, "fusion");
        if (cfg_.use_metric) metric_.collect(out, "metric");
        heads_.ops.collect(out, "head.ops");
    }
    return out;
}

void BidoModel::load_parameters(std::span<const NamedParam> params) {
    std::map<std::string, const Tensor*> by_name;
    for (const NamedParam& p : params) by_name[p.name] = &p.tensor;
    for (NamedParam& mine : parameters()) {
        auto it = by_name.find(mine.name);
        if (it == by_name.end()) throw Error(ErrorCode::BadCheckpoint, "checkpoint lacks " + mine.name);
        if (it->second->shape() != mine.tensor.shape()) {
            throw Error(ErrorCode::BadCheckpoint, mine.name + " shape " + shape_str(it->second->shape()) + " vs " +
                                                      shape_str(mine.tensor.shape()));
        }
        const auto src = it->second->values();
        auto dst = mine.tensor.mutable_values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(Rng::derive(seed, 0x53504C));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t n_val = n / 10, n_test = n / 10;
    DatasetSplit s;
    s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test),
                 order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), order.end());
    return s;
}

nlohmann::json EpochRecord::to_json() const {
    return {{"epoch", epoch},
            {"lr", learning_rate},
            {"loss", loss},
            {"l_xml", l_xml},
            {"l_dex", l_dex},
            {"l_ops", l_ops},
            {"l_con", l_con},
            {"val", val ? val->to_json() : nlohmann::json(nullptr)}};
}

TrainResult train(std::span<const Sample> corpus, const TrainConfig& cfg, const TrainHooks& hooks) {
    cfg.validate();
    DatasetSplit split = split_dataset(corpus.size(), cfg.split_seed);
    bool has[2] = {false, false};
    for (std::size_t i : split.train) {
        const int y = corpus[i].label;
        if (y != 0 && y != 1) throw Error(ErrorCode::BadConfig, "labels must be 0 or 1");
        has[y] = true;
    }
    if (!has[0] || !has[1]) throw Error(ErrorCode::DegenerateCorpus, "train split needs both classes");

    TrainResult result{BidoModel(cfg.model, cfg.seed), {}, split};
    BidoModel& model = result.model;
    std::vector<NamedParam> params = model.parameters();
    OptimizerState opt;
    opt.base_lr = opt.learning_rate = cfg.learning_rate;
    opt.momentum = cfg.momentum;
    opt.decay_factor = cfg.decay_factor;
    opt.decay_every = cfg.decay_every;

    std::vector<std::size_t> order = split.train;
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        begin_epoch(opt, epoch);
        Rng shuffle(Rng::derive(cfg.seed, 0x45504F00 + epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = opt.learning_rate;
        std::size_t batches = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t end = std::min(order.size(), start + cfg.batch_size);
                const std::span<const std::size_t> idx(order.data() + start, end - start);
                labels.clear();
                for (std::size_t i : idx) labels.push_back(corpus[i].label);
                const Tensor dex = batch_tensor(corpus, idx, true);
                const Tensor xml = batch_tensor(corpus, idx, false);
                const ForwardPass f = model.forward(dex, xml);
                const LossTerms terms = model.loss(f, labels, cfg.weights);
                const double value = terms.total.item();
                if (!std::isfinite(value) || value > cfg.divergence_limit) {
                    throw Error(ErrorCode::NonFinite, "joint loss " + std::to_string(value));
                }
                for (NamedParam& p : params) p.tensor.zero_grad();
                terms.total.backward();
                sgd_momentum_step(params, opt);
                rec.loss += value;
                rec.l_xml += terms.xml;
                rec.l_dex += terms.dex;
                rec.l_ops += terms.ops;
                rec.l_con += terms.con;
                ++batches;
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NonFinite) throw;
            throw Error(ErrorCode::NonFinite, "diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
        rec.loss /= nb;
        rec.l_xml /= nb;
        rec.l_dex /= nb;
        rec.l_ops /= nb;
        rec.l_con /= nb;
        if (!split.val.empty()) rec.val = evaluate(model, corpus, split.val, cfg.predict);
        result.history.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
    }
    return result;
}

Metrics evaluate(const BidoModel& model, std::span<const Sample> samples, std::span<const std::size_t> indices,
                 PredictHead head) {
    if (indices.empty()) throw Error(ErrorCode::EmptyEvalSet, "no samples to evaluate");
    NoGradGuard guard;
    constexpr std::size_t kChunk = 64;
    std::vector<int> predictions, labels;
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t end = std::min(indices.size(), start + kChunk);
        const std::span<const std::size_t> idx = indices.subspan(start, end - start);
        const ForwardPass f = model.forward(batch_tensor(samples, idx, true), batch_tensor(samples, idx, false));
        const std::vector<double> p = model.malicious_probability(f, head);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            predictions.push_back(p[i] > 0.5 ? 1 : 0);
            labels.push_back(samples[idx[i]].label);
        }
    }
    return confusion(predictions, labels);
}

Metrics evaluate(const BidoModel& model, std::span<const Sample> samples, PredictHead head) {
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return evaluate(model, samples, all, head);
}

void save_model(const std::filesystem::path& checkpoint, const BidoModel& model) {
    save_checkpoint(checkpoint, model.parameters());
}

BidoModel load_model(const std::filesystem::path& checkpoint, const ModelConfig& cfg) {
    BidoModel model(cfg, 0);
    model.load_parameters(load_checkpoint(checkpoint));
    return model;
}

std::string history_to_jsonl(std::span<const EpochRecord> history) {
    std::string out;
    for (const EpochRecord& r : history) {
        out += r.to_json().dump();
        out += '\n';
    }
    return out;
}

}  // namespace bido
