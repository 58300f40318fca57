#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bido/backbone.hpp"
#include "bido/fusion.hpp"
#include "bido/image.hpp"
#include "bido/local_select.hpp"
#include "bido/metric.hpp"
#include "bido/nn.hpp"
#include "bido/optim.hpp"
#include "bido/tensor.hpp"

namespace bido {

enum class Variant { Full, DexOnly, XmlOnly };
enum class FusionMode { Ops, Sum, Concat };
enum class PredictHead { Ops, Average };

std::string to_string(Variant v);
std::string to_string(FusionMode f);
std::string to_string(PredictHead p);
Variant parse_variant(const std::string& s);
FusionMode parse_fusion(const std::string& s);
PredictHead parse_predict_head(const std::string& s);

struct LossWeights {
    double alpha = 1.0;  // xml head
    double beta = 1.0;   // dex head
    double gamma = 0.1;  // ops head
    double delta = 0.1;  // contrastive metric

    // Throws Error{BadConfig} unless every weight is finite and >= 0.
    void validate() const;
};

struct ModelConfig {
    BackboneConfig backbone = desk_backbone();
    std::size_t k = 32;        // local feature maps
    std::size_t l = 64;        // Z_dex width
    std::size_t h = 64;        // Z_xml / Z_ops width
    std::size_t rank = 8;      // R
    double margin = 1.0;       // m
    double epsilon_d = 1e-12;  // inside the Mahalanobis square root
    MaskActivation mask_activation = MaskActivation::Sigmoid;
    std::vector<std::size_t> dex_mlp_hidden{64};
    Variant variant = Variant::Full;
    FusionMode fusion = FusionMode::Ops;
    bool use_metric = true;
    // Under OPS fusion the fused head reads a unit-normalized bilinear code
    // whose coordinates start near 1e-3, so its weights start at U(±bound).
    // Sum and concat fusion use the fan-in init.
    double ops_head_bound = 16.0;

    void validate() const;
    // Width of the fused embedding fed to the ops head and the metric.
    std::size_t fused_width() const;
};

struct TrainConfig {
    ModelConfig model;
    std::size_t batch_size = 8;  // T
    std::size_t epochs = 64;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double decay_factor = 0.9;
    std::size_t decay_every = 2;
    LossWeights weights;
    std::uint64_t seed = 1;
    std::uint64_t split_seed = 1;
    PredictHead predict = PredictHead::Ops;
    double divergence_limit = 1e6;

    void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Confusion-matrix ratios. A ratio whose denominator is zero is std::nullopt.
struct Metrics {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::optional<double> accuracy, precision, recall, f1;

    static Metrics from_counts(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn);
    // Undefined ratios serialize as null.
    nlohmann::json to_json() const;
    // f1 with undefined read as 0, for averaging across runs.
    double f1_or_zero() const { return f1.value_or(0.0); }
};

// Labels: 0 benign, 1 malicious.
Metrics confusion(std::span<const int> predictions, std::span<const int> labels);

struct Sample {
    std::string id;
    image::RgbImage dex;
    image::RgbImage xml;
    int label = 0;
};

struct HeadParams {
    nn::Linear xml, dex, ops;  // each -> 2 logits

    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

// Cross entropy of head(z) against labels, averaged over the batch.
Tensor head_loss(const Tensor& z, std::span<const int> labels, const nn::Linear& head);

// alpha L_xml + beta L_dex + gamma L_ops + delta L_con. Undefined terms are
// allowed only with a zero weight and are left out of the graph.
Tensor joint_loss(const Tensor& l_xml, const Tensor& l_dex, const Tensor& l_ops, const Tensor& l_con,
                  const LossWeights& w);
double joint_loss(double l_xml, double l_dex, double l_ops, double l_con, const LossWeights& w);

struct ForwardPass {
    Tensor z_xml, z_dex, z_fused;           // undefined where a variant skips a branch
    Tensor logits_xml, logits_dex, logits_ops;
};

struct LossTerms {
    Tensor total;
    double xml = 0.0, dex = 0.0, ops = 0.0, con = 0.0;
};

class BidoModel {
   public:
    BidoModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // dex, xml: [B, H, W, 3] in [0, 1].
    ForwardPass forward(const Tensor& dex, const Tensor& xml) const;
    LossTerms loss(const ForwardPass& f, std::span<const int> labels, const LossWeights& w) const;

    // P(malicious) per sample from the deciding head(s).
    std::vector<double> malicious_probability(const ForwardPass& f, PredictHead head) const;

    std::vector<NamedParam> parameters() const;
    // Copies values by name; throws Error{BadCheckpoint} on a missing name or
    // shape mismatch.
    void load_parameters(std::span<const NamedParam> params);

    const DexBackbone& dex_backbone() const { return dex_net_; }
    const XmlBackbone& xml_backbone() const { return xml_net_; }
    const SelectorParams& selector() const { return selector_; }
    const AttentionParams& attention() const { return attention_; }
    const FactorBank& factor_bank() const { return bank_; }
    const MetricFactor& metric() const { return metric_; }
    const HeadParams& heads() const { return heads_; }

   private:
    bool uses_dex() const { return cfg_.variant != Variant::XmlOnly; }
    bool uses_xml() const { return cfg_.variant != Variant::DexOnly; }

    ModelConfig cfg_;
    DexBackbone dex_net_;
    XmlBackbone xml_net_;
    SelectorParams selector_;
    AttentionParams attention_;
    FactorBank bank_;
    MetricFactor metric_;
    HeadParams heads_;
};

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
};

// Seeded shuffle, then 80/10/10 with val and test rounded down.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

struct EpochRecord {
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double loss = 0.0;  // epoch mean of the joint loss
    double l_xml = 0.0, l_dex = 0.0, l_ops = 0.0, l_con = 0.0;
    std::optional<Metrics> val;  // absent when the validation split is empty

    nlohmann::json to_json() const;
};

struct TrainResult {
    BidoModel model;
    std::vector<EpochRecord> history;
    DatasetSplit split;
};

struct TrainHooks {
    std::function<void(const EpochRecord&)> on_epoch;
};

// Trains on the seeded train split and reports validation metrics each
// epoch; the final-epoch weights are returned.
// Throws Error{DegenerateCorpus} (one class in train), Error{NonFinite}.
TrainResult train(std::span<const Sample> corpus, const TrainConfig& cfg, const TrainHooks& hooks = {});

Metrics evaluate(const BidoModel& model, std::span<const Sample> samples, PredictHead head = PredictHead::Ops);
// Subset given by indices into samples.
Metrics evaluate(const BidoModel& model, std::span<const Sample> samples, std::span<const std::size_t> indices,
                 PredictHead head = PredictHead::Ops);

void save_model(const std::filesystem::path& checkpoint, const BidoModel& model);
BidoModel load_model(const std::filesystem::path& checkpoint, const ModelConfig& cfg);

std::string history_to_jsonl(std::span<const EpochRecord> history);

}  // namespace bido
