#pragma once

#include <map>
#include <string>
#include <vector>

#include "sleepyco/nn.hpp"

namespace sleepyco {

// Five convolutional blocks; each block is (conv-BN-PReLU) then
// (conv-BN-SE-PReLU), with width-5 ceiling max-pooling between blocks.
// Taps after blocks 3, 4, 5 feed the feature pyramid.
struct BackboneConfig {
    std::vector<std::size_t> block_channels{64, 128, 192, 256, 256};
    std::size_t convs_per_block = 2;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    std::size_t pool = 5;
    std::size_t se_reduction = 16;
    std::vector<int> tap_stages{3, 4, 5};
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    // Input-samples-per-feature ratio of a tap: pool^(stage-1).
    std::size_t reduction_ratio(int stage) const;
    std::size_t stage_channels(int stage) const;
    void validate() const;
};

// The tapped feature sequences {C_i}, each [B, c_i, ceil(3000L/r_i)].
struct FeatureSequenceSet {
    std::map<int, Tensor> taps;
    std::size_t L = 1;
};

class Backbone {
public:
    struct ConvUnit {
        Conv1dLayer conv;
        BatchNorm1dLayer bn;
        PReLULayer act;
    };
    struct Block {
        ConvUnit u1, u2;
        SEBlock se;
    };

    BackboneConfig cfg;
    std::vector<Block> blocks;

    Backbone(const BackboneConfig& cfg, RngStream& rng);

    // x: [B, 1, 3000*L]
    FeatureSequenceSet forward(const Tensor& x, Mode mode);

    void params(std::vector<Parameter*>& out);
    void buffers(std::vector<BufferRef>& out);
    void freeze();
    std::size_t conv_layer_count() const { return blocks.size() * cfg.convs_per_block; }
};

inline constexpr std::size_t kSamplesPerEpoch = 3000;

}  // namespace sleepyco
