#include "sleepyco/contrastive.hpp"

#include <algorithm>
#include <stdexcept>

namespace sleepyco {

Tensor global_avg_pool_time(const Tensor& features) {
    if (features.ndim() != 3)
        throw std::invalid_argument("global_avg_pool_time: expected [B,C,T]");
    return mean(features, {2});
}

int count_zero_positive(const std::vector<int>& labels) {
    int zero = 0;
    for (std::size_t n = 0; n < labels.size(); ++n) {
        bool any = false;
        for (std::size_t m = 0; m < labels.size(); ++m)
            if (m != n && labels[m] == labels[n]) {
                any = true;
                break;
            }
        if (!any) ++zero;
    }
    return zero;
}

Tensor supcon_loss(const Tensor& z, const std::vector<int>& labels, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("supcon_loss: tau must be > 0");
    const Shape& s = z.shape();
    if (s.size() != 2) throw std::invalid_argument("supcon_loss: expected z [N,d]");
    const std::size_t n = s[0];
    if (n < 2) throw std::invalid_argument("supcon_loss: need at least 2 samples");
    if (labels.size() != n)
        throw std::invalid_argument("supcon_loss: labels/z length mismatch");

    Tensor sim = mul_scalar(matmul(z, transpose_last2(z)), 1.0 / tau);  // [n,n]

    // Detached per-row max: shifts numerator and log-sum-exp identically, so
    // both the value and the gradient are unaffected.
    std::vector<double> rowmax(n);
    {
        const auto& sd = sim.data();
        for (std::size_t i = 0; i < n; ++i) {
            double mx = sd[i * n];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, sd[i * n + j]);
            rowmax[i] = mx;
        }
    }
    Tensor shift = Tensor::from_data({n, 1}, std::move(rowmax));
    Tensor sim_s = sub(sim, shift);

    std::vector<double> offdiag(n * n, 1.0);
    std::vector<double> weights(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        offdiag[i * n + i] = 0.0;
        std::size_t npos = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) ++npos;
        if (npos == 0) continue;  // no positives: the outer term contributes 0
        const double w = 1.0 / static_cast<double>(npos);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i && labels[j] == labels[i]) weights[i * n + j] = w;
    }
    Tensor mask = Tensor::from_data({n, n}, std::move(offdiag));
    Tensor wmat = Tensor::from_data({n, n}, std::move(weights));

    Tensor denom = sum(mul(exp(sim_s), mask), {1}, true);  // [n,1]
    Tensor per_pair = sub(log(denom), sim_s);              // LSE_n - sim_nm
    return sum(mul(wmat, per_pair));
}

CrlModel::CrlModel(const ModelConfig& mcfg, const BackboneConfig& bcfg,
                   RngStream& rng)
    : backbone(bcfg, rng), representation(mcfg.crl_representation) {
    const int top_stage = static_cast<int>(bcfg.block_channels.size());
    std::size_t rep_dim = bcfg.stage_channels(top_stage);
    if (representation == CrlRepresentation::F5) {
        f5_lateral = Conv1dLayer("projector.lateral", rep_dim, mcfg.d_f, 1, 1, 0,
                                 rng, 1.0);
        rep_dim = mcfg.d_f;
    }
    projector = ProjectionHead("projector", rep_dim, 128, mcfg.d_z, rng);
}

Tensor CrlModel::represent(const Tensor& x, Mode mode) {
    const int top_stage = static_cast<int>(backbone.cfg.block_channels.size());
    FeatureSequenceSet feats = backbone.forward(x, mode);
    auto it = feats.taps.find(top_stage);
    if (it == feats.taps.end())
        throw std::runtime_error("represent: backbone must tap its last stage");
    Tensor c = it->second;
    if (f5_lateral) c = f5_lateral->forward(c);
    return global_avg_pool_time(c);
}

Tensor CrlModel::embed(const Tensor& x, Mode mode) {
    return projector.project_normalize(represent(x, mode));
}

void CrlModel::params(std::vector<Parameter*>& out) {
    backbone.params(out);
    if (f5_lateral) f5_lateral->params(out);
    projector.params(out);
}

void CrlModel::buffers(std::vector<BufferRef>& out) { backbone.buffers(out); }

}  // namespace sleepyco
