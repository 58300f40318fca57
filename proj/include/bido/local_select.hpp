#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bido/backbone.hpp"
#include "bido/nn.hpp"
#include "bido/tensor.hpp"

namespace bido {

enum class MaskActivation { Sigmoid, Relu };

// k 1x1 mask kernels over C channels, stored as a [C, k] matrix.
struct SelectorParams {
    Tensor kernels;
    MaskActivation activation = MaskActivation::Sigmoid;

    std::size_t channels() const { return kernels.dim(0); }
    std::size_t count() const { return kernels.dim(1); }
};

// [B, k, H'*W']: mask i of sample b is row (b, i), spatially flattened.
struct MaskSet {
    Tensor values;
    std::size_t height = 0;
    std::size_t width = 0;
};

// [B, k, d] with d = H'*W'.
struct LocalMaps {
    Tensor values;
};

struct AttentionParams {
    Tensor cls;          // [d]
    Tensor positional;   // [k + 1, d]
    Tensor w_query;      // [d, d]
    Tensor w_key;        // [d, d]
    Tensor w_value;      // [d, d]
    nn::Mlp projection;  // d -> ... -> l

    std::size_t token_length() const { return cls.dim(0); }
    void collect(std::vector<NamedParam>& out, const std::string& prefix) const;
};

struct AttentionOutput {
    Tensor tokens;   // E: [B, k + 1, d]
    Tensor weights;  // softmax rows: [B, k + 1, k + 1]
};

// [B, l]
struct DexEmbedding {
    Tensor values;
};

SelectorParams make_selector(std::size_t channels, std::size_t k, MaskActivation act, Rng& rng);
// CLS and positional embedding start at zero; projections from U(±1/sqrt(d)).
// mlp_widths excludes the input width d, e.g. {64, 64}.
AttentionParams make_attention(std::size_t d, std::size_t k, const std::vector<std::size_t>& mlp_widths, Rng& rng);

// M_i[x,y] = act(sum_c F[x,y,c] * phi_i[c])
MaskSet candidate_masks(const FeatureMap& f, const SelectorParams& p);

// L_i[x,y] = M_i[x,y] * mean_c F[x,y,c] / (H' * W')
LocalMaps local_feature_maps(const FeatureMap& f, const MaskSet& m);

// X = [L; CLS] + P (CLS is the last token); E = softmax(Q K^T / sqrt(d)) V
AttentionOutput attend_local(const LocalMaps& l, const AttentionParams& a);

// The CLS row of E through the projection MLP.
DexEmbedding project_dex(const Tensor& tokens, const AttentionParams& a);

}  // namespace bido
