#include "bido/backbone.hpp"

#include <cmath>

#include "bido/error.hpp"

namespace bido {

Shape BackboneConfig::output_shape() const {
    std::size_t h = input_height, w = input_width, c = 3;
    for (const ConvStage& s : stages) {
        if (s.kernel == 0 || s.stride == 0 || s.out_channels == 0 || s.kernel > h || s.kernel > w) {
            throw Error(ErrorCode::BadConfig, "conv stage does not fit its input");
        }
        h = (h - s.kernel) / s.stride + 1;
        w = (w - s.kernel) / s.stride + 1;
        c = s.out_channels;
    }
    return {h, w, c};
}

BackboneConfig desk_backbone() { return {}; }

BackboneConfig full_scale_backbone() {
    BackboneConfig cfg;
    cfg.input_height = 256;
    cfg.input_width = 256;
    cfg.stages = {{4, 4, 16}, {2, 2, 32}, {2, 2, 64}, {2, 2, 128}};
    cfg.xml_hidden = 512;
    cfg.xml_embedding = 512;
    return cfg;
}

Tensor images_to_tensor(std::span<const image::RgbImage* const> images) {
    if (images.empty()) throw Error(ErrorCode::ShapeMismatch, "empty image batch");
    const image::ImageGeometry geom = images.front()->geometry;
    Tensor out({images.size(), geom.height(), geom.width(), 3});
    auto dst = out.mutable_values();
    std::size_t at = 0;
    for (const image::RgbImage* img : images) {
        if (!(img->geometry == geom)) throw Error(ErrorCode::ShapeMismatch, "mixed image geometries in batch");
        for (std::uint8_t c : img->channels) dst[at++] = static_cast<double>(c) / 255.0;
    }
    return out;
}

Tensor image_to_tensor(const image::RgbImage& img) {
    const image::RgbImage* one[] = {&img};
    return images_to_tensor(one);
}

ConvStack::ConvStack(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.output_shape();  // validates
    std::size_t cin = 3;
    for (const ConvStage& s : cfg.stages) {
        const std::size_t fan_in = s.kernel * s.kernel * cin;
        // He-uniform keeps activations from collapsing through ReLU stages.
        weights_.push_back(nn::uniform_param({s.kernel, s.kernel, cin, s.out_channels},
                                             std::sqrt(6.0 / static_cast<double>(fan_in)), rng));
        biases_.push_back(Tensor({s.out_channels}, true));
        cin = s.out_channels;
    }
}

Tensor ConvStack::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.input_height || x.dim(2) != cfg_.input_width || x.dim(3) != 3) {
        throw Error(ErrorCode::ShapeMismatch, "backbone expects [B," + std::to_string(cfg_.input_height) + "," +
                                                  std::to_string(cfg_.input_width) + ",3], got " + shape_str(x.shape()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        h = nn::activate(conv2d(h, weights_[i], biases_[i], cfg_.stages[i].stride), cfg_.activation);
    }
    return cfg_.feature_gain == 1.0 ? h : scale(h, cfg_.feature_gain);
}

void ConvStack::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out.push_back({prefix + ".conv" + std::to_string(i) + ".weight", weights_[i]});
        out.push_back({prefix + ".conv" + std::to_string(i) + ".bias", biases_[i]});
    }
}

DexBackbone::DexBackbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg), convs_(cfg, rng) {}

FeatureMap DexBackbone::forward(const Tensor& images) const {
    return {convs_.forward(images)};
}

void DexBackbone::collect(std::vector<NamedParam>& out, const std::string& prefix) const { convs_.collect(out, prefix); }

XmlBackbone::XmlBackbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg), convs_(cfg, rng) {
    const std::size_t c = cfg.output_shape()[2];
    head_ = nn::make_mlp({c, cfg.xml_hidden, cfg.xml_embedding}, nn::Activation::Relu, rng, nn::Init::He);
}

XmlEmbedding XmlBackbone::forward(const Tensor& images) const {
    Tensor f = convs_.forward(images);
    const std::size_t b = f.dim(0), hw = f.dim(1) * f.dim(2), c = f.dim(3);
    Tensor pooled = mean(reshape(f, {b, hw, c}), 1);
    return {head_.forward(pooled)};
}

void XmlBackbone::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    convs_.collect(out, prefix);
    head_.collect(out, prefix + ".mlp");
}

FeatureMap dex_backbone(const image::RgbImage& img, const DexBackbone& net) { return net.forward(image_to_tensor(img)); }

XmlEmbedding xml_backbone(const image::RgbImage& img, const XmlBackbone& net) {
    return net.forward(image_to_tensor(img));
}

}  // namespace bido
