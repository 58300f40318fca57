#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bido/image.hpp"
#include "bido/nn.hpp"
#include "bido/tensor.hpp"

namespace bido {

struct ConvStage {
    std::size_t kernel = 2;
    std::size_t stride = 2;
    std::size_t out_channels = 8;
};

struct BackboneConfig {
    std::size_t input_height = 64;
    std::size_t input_width = 64;
    std::vector<ConvStage> stages{{2, 2, 8}, {2, 2, 16}, {2, 2, 32}};
    nn::Activation activation = nn::Activation::Relu;
    // XML branch: pooled channels -> hidden -> embedding width h.
    std::size_t xml_hidden = 64;
    std::size_t xml_embedding = 64;
    // Fixed multiplier on both conv stack outputs. The local tokens are
    // averaged over H'*W' cells, which leaves them far below the CLS and
    // positional terms without it.
    double feature_gain = 128.0;

    // {H', W', C} after the conv stages; throws Error{BadConfig} if a stage
    // does not fit its input.
    Shape output_shape() const;
};

// Desk default and the 512-wide preset.
BackboneConfig desk_backbone();
BackboneConfig full_scale_backbone();

// [B, H', W', C]
struct FeatureMap {
    Tensor values;

    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }
    std::size_t channels() const { return values.dim(3); }
};

// [B, h]
struct XmlEmbedding {
    Tensor values;
};

// Stacks images into a [B, H, W, 3] tensor scaled to [0, 1].
Tensor images_to_tensor(std::span<const image::RgbImage* const> images);
Tensor image_to_tensor(const image::RgbImage& img);

class ConvStack {
   public:
    ConvStack() = default;
    ConvStack(const BackboneConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& x) const;
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;

    std::vector<Tensor>& weights() { return weights_; }
    std::vector<Tensor>& biases() { return biases_; }

   private:
    BackboneConfig cfg_;
    std::vector<Tensor> weights_;  // [k, k, Cin, Cout]
    std::vector<Tensor> biases_;   // [Cout]
};

// Stand-in for the DEX image backbone: strided conv stages to F_dex.
class DexBackbone {
   public:
    DexBackbone() = default;
    DexBackbone(const BackboneConfig& cfg, Rng& rng);

    // Throws Error{ShapeMismatch} if the batch geometry differs from cfg.
    FeatureMap forward(const Tensor& images) const;
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
    ConvStack& convs() { return convs_; }

   private:
    BackboneConfig cfg_;
    ConvStack convs_;
};

// Stand-in for the XML image backbone: conv stages, spatial average pool,
// then an MLP to Z_xml.
class XmlBackbone {
   public:
    XmlBackbone() = default;
    XmlBackbone(const BackboneConfig& cfg, Rng& rng);

    XmlEmbedding forward(const Tensor& images) const;
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
    ConvStack& convs() { return convs_; }
    nn::Mlp& head() { return head_; }

   private:
    BackboneConfig cfg_;
    ConvStack convs_;
    nn::Mlp head_;
};

FeatureMap dex_backbone(const image::RgbImage& img, const DexBackbone& net);
XmlEmbedding xml_backbone(const image::RgbImage& img, const XmlBackbone& net);

}  // namespace bido
