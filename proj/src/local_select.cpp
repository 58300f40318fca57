#include "bido/local_select.hpp"

#include <cmath>

#include "bido/error.hpp"

namespace bido {

void AttentionParams::collect(std::vector<NamedParam>& out, const std::string& prefix) const {
    out.push_back({prefix + ".cls", cls});
    out.push_back({prefix + ".positional", positional});
    out.push_back({prefix + ".w_query", w_query});
    out.push_back({prefix + ".w_key", w_key});
    out.push_back({prefix + ".w_value", w_value});
    projection.collect(out, prefix + ".mlp");
}

SelectorParams make_selector(std::size_t channels, std::size_t k, MaskActivation act, Rng& rng) {
    if (k == 0 || channels == 0) throw Error(ErrorCode::BadConfig, "selector needs k >= 1 and C >= 1");
    return {nn::uniform_param({channels, k}, 1.0 / std::sqrt(static_cast<double>(channels)), rng), act};
}

AttentionParams make_attention(std::size_t d, std::size_t k, const std::vector<std::size_t>& mlp_widths, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    AttentionParams a;
    a.cls = Tensor({d}, true);
    a.positional = Tensor({k + 1, d}, true);
    a.w_query = nn::uniform_param({d, d}, bound, rng);
    a.w_key = nn::uniform_param({d, d}, bound, rng);
    a.w_value = nn::uniform_param({d, d}, bound, rng);
    std::vector<std::size_t> widths{d};
    widths.insert(widths.end(), mlp_widths.begin(), mlp_widths.end());
    a.projection = nn::make_mlp(widths, nn::Activation::Relu, rng);
    return a;
}

MaskSet candidate_masks(const FeatureMap& f, const SelectorParams& p) {
    const Tensor& x = f.values;
    if (x.rank() != 4 || x.dim(3) != p.channels()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "mask kernels expect " + std::to_string(p.channels()) + " channels, got " + shape_str(x.shape()));
    }
    const std::size_t b = x.dim(0), d = x.dim(1) * x.dim(2), c = x.dim(3);
    Tensor logits = matmul(reshape(x, {b, d, c}), p.kernels);  // [B, d, k]
    Tensor act = p.activation == MaskActivation::Sigmoid ? sigmoid(logits) : relu(logits);
    return {transpose(act), x.dim(1), x.dim(2)};
}

LocalMaps local_feature_maps(const FeatureMap& f, const MaskSet& m) {
    const Tensor& x = f.values;
    if (x.rank() != 4 || m.values.rank() != 3 || m.values.dim(0) != x.dim(0) || m.height != x.dim(1) ||
        m.width != x.dim(2) || m.values.dim(2) != x.dim(1) * x.dim(2)) {
        throw Error(ErrorCode::ShapeMismatch, "mask set does not match feature map");
    }
    const std::size_t b = x.dim(0), d = x.dim(1) * x.dim(2), c = x.dim(3);
    Tensor channel_mean = reshape(mean(reshape(x, {b, d, c}), 2), {b, 1, d});
    return {scale(hadamard(m.values, channel_mean), 1.0 / static_cast<double>(d))};
}

AttentionOutput attend_local(const LocalMaps& l, const AttentionParams& a) {
    const Tensor& maps = l.values;
    const std::size_t d = a.token_length();
    if (maps.rank() != 3 || maps.dim(2) != d || a.positional.dim(0) != maps.dim(1) + 1) {
        throw Error(ErrorCode::ShapeMismatch, "local maps " + shape_str(maps.shape()) + " vs attention params with d=" +
                                                  std::to_string(d));
    }
    const std::size_t b = maps.dim(0);
    Tensor cls = broadcast_to(reshape(a.cls, {1, 1, d}), {b, 1, d});
    Tensor x = add(concat({maps, cls}, 1), a.positional);  // [B, k+1, d]
    Tensor q = matmul(x, a.w_query);
    Tensor key = matmul(x, a.w_key);
    Tensor v = matmul(x, a.w_value);
    Tensor scores = scale(matmul(q, transpose(key)), 1.0 / std::sqrt(static_cast<double>(d)));
    Tensor weights = softmax(scores);
    return {matmul(weights, v), weights};
}

DexEmbedding project_dex(const Tensor& tokens, const AttentionParams& a) {
    if (tokens.rank() != 3 || tokens.dim(2) != a.token_length()) {
        throw Error(ErrorCode::ShapeMismatch, "attended tokens " + shape_str(tokens.shape()));
    }
    Tensor cls_row = select(tokens, 1, tokens.dim(1) - 1);
    return {a.projection.forward(cls_row)};
}

}  // namespace bido
