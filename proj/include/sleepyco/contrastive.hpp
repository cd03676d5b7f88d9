#pragma once

#include <optional>
#include <vector>

#include "sleepyco/backbone.hpp"
#include "sleepyco/classifier.hpp"
#include "sleepyco/nn.hpp"

namespace sleepyco {

// MLP with one hidden layer mapping the representation vector onto the unit
// hypersphere. Removed after pretraining.
class ProjectionHead {
public:
    LinearLayer fc1, fc2;

    ProjectionHead() = default;
    ProjectionHead(const std::string& prefix, std::size_t in_dim, std::size_t hidden,
                   std::size_t out_dim, RngStream& rng) {
        fc1 = LinearLayer(prefix + ".fc1", in_dim, hidden, rng, true, std::sqrt(2.0));
        fc2 = LinearLayer(prefix + ".fc2", hidden, out_dim, rng, true, 1.0);
    }

    Tensor forward(const Tensor& r) const {  // z' (pre-normalization)
        return fc2.forward(relu(fc1.forward(r)));
    }

    Tensor project_normalize(const Tensor& r) const {
        return l2_normalize_rows(forward(r));
    }

    void params(std::vector<Parameter*>& out) {
        fc1.params(out);
        fc2.params(out);
    }
};

// Temporal mean of the deepest tap: [B, C, T] -> [B, C].
Tensor global_avg_pool_time(const Tensor& features);

// Unit-norm contrastive embeddings with their stage labels.
struct LatentBatch {
    Tensor z;                 // [2*N_b, d_z], rows unit-norm
    std::vector<int> labels;  // paired views share labels
};

// Samples whose positive set is empty (their outer term is skipped).
int count_zero_positive(const std::vector<int>& labels);

// Eq.-12 supervised contrastive loss in the positives-restricted form;
// log-sum-exp is evaluated with max subtraction.
Tensor supcon_loss(const Tensor& z, const std::vector<int>& labels, double tau);
inline Tensor supcon_loss(const LatentBatch& batch, double tau) {
    return supcon_loss(batch.z, batch.labels, tau);
}

// Backbone + projection head used during contrastive pretraining. The
// representation taps C5 by default; the F5 reading adds a pretraining-local
// width-1 lateral owned by the projector.
class CrlModel {
public:
    Backbone backbone;
    std::optional<Conv1dLayer> f5_lateral;
    ProjectionHead projector;
    CrlRepresentation representation = CrlRepresentation::C5;

    CrlModel(const ModelConfig& mcfg, const BackboneConfig& bcfg, RngStream& rng);

    // x: [B, 1, 3000] -> representation r
    Tensor represent(const Tensor& x, Mode mode);
    // x -> unit-norm latent z [B, d_z]
    Tensor embed(const Tensor& x, Mode mode);

    void params(std::vector<Parameter*>& out);
    void buffers(std::vector<BufferRef>& out);
};

}  // namespace sleepyco
