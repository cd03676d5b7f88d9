#include "sleepyco/backbone.hpp"

#include <algorithm>
#include <stdexcept>

namespace sleepyco {

std::size_t BackboneConfig::reduction_ratio(int stage) const {
    if (stage < 1 || stage > static_cast<int>(block_channels.size()))
        throw std::invalid_argument("backbone: unknown stage index " +
                                    std::to_string(stage));
    std::size_t r = 1;
    for (int i = 1; i < stage; ++i) r *= pool;
    return r;
}

std::size_t BackboneConfig::stage_channels(int stage) const {
    if (stage < 1 || stage > static_cast<int>(block_channels.size()))
        throw std::invalid_argument("backbone: unknown stage index " +
                                    std::to_string(stage));
    return block_channels[stage - 1];
}

void BackboneConfig::validate() const {
    if (block_channels.size() != 5)
        throw std::invalid_argument("backbone: expected 5 blocks");
    if (convs_per_block != 2)
        throw std::invalid_argument("backbone: expected 2 convolutions per block");
    for (int s : tap_stages)
        if (s < 1 || s > 5)
            throw std::invalid_argument("backbone: tap stage out of range");
}

Backbone::Backbone(const BackboneConfig& cfg_, RngStream& rng) : cfg(cfg_) {
    cfg.validate();
    std::size_t in_ch = 1;
    for (std::size_t i = 0; i < cfg.block_channels.size(); ++i) {
        const std::size_t out_ch = cfg.block_channels[i];
        const std::string p = "backbone.block" + std::to_string(i + 1);
        Block b;
        b.u1.conv = Conv1dLayer(p + ".conv1", in_ch, out_ch, cfg.kernel, cfg.stride,
                                cfg.padding, rng);
        b.u1.bn = BatchNorm1dLayer(p + ".conv1.bn", out_ch, cfg.bn_eps,
                                   cfg.bn_momentum);
        b.u1.act = PReLULayer(p + ".conv1.prelu", out_ch, 1);
        b.u2.conv = Conv1dLayer(p + ".conv2", out_ch, out_ch, cfg.kernel, cfg.stride,
                                cfg.padding, rng);
        b.u2.bn = BatchNorm1dLayer(p + ".conv2.bn", out_ch, cfg.bn_eps,
                                   cfg.bn_momentum);
        b.u2.act = PReLULayer(p + ".conv2.prelu", out_ch, 1);
        b.se = SEBlock(p + ".se", out_ch, cfg.se_reduction, rng);
        blocks.push_back(std::move(b));
        in_ch = out_ch;
    }
}

FeatureSequenceSet Backbone::forward(const Tensor& x, Mode mode) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != 1)
        throw std::invalid_argument("backbone: expected input [B,1,T], got " +
                                    shape_str(s));
    if (s[2] == 0 || s[2] % kSamplesPerEpoch != 0)
        throw std::invalid_argument(
            "backbone: input length must be a positive multiple of 3000, got " +
            std::to_string(s[2]));
    FeatureSequenceSet out;
    out.L = s[2] / kSamplesPerEpoch;

    Tensor h = x;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        Block& b = blocks[i];
        h = b.u1.act.forward(b.u1.bn.forward(b.u1.conv.forward(h), mode));
        h = b.u2.act.forward(b.se.forward(b.u2.bn.forward(b.u2.conv.forward(h), mode)));
        const int stage = static_cast<int>(i) + 1;
        if (std::find(cfg.tap_stages.begin(), cfg.tap_stages.end(), stage) !=
            cfg.tap_stages.end())
            out.taps[stage] = h;
        if (i + 1 < blocks.size()) h = maxpool1d_ceil(h, cfg.pool);
    }
    return out;
}

void Backbone::params(std::vector<Parameter*>& out) {
    for (Block& b : blocks) {
        b.u1.conv.params(out);
        b.u1.bn.params(out);
        b.u1.act.params(out);
        b.u2.conv.params(out);
        b.u2.bn.params(out);
        b.u2.act.params(out);
        b.se.params(out);
    }
}

void Backbone::buffers(std::vector<BufferRef>& out) {
    for (Block& b : blocks) {
        b.u1.bn.buffers(out);
        b.u2.bn.buffers(out);
    }
}

void Backbone::freeze() {
    std::vector<Parameter*> ps;
    params(ps);
    for (Parameter* p : ps) p->freeze();
}

}  // namespace sleepyco
