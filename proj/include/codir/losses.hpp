#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "codir/encoder.hpp"
#include "codir/tensor.hpp"

namespace codir {

struct LossWeights {
    double alpha1 = 0.7;  // weight of the KD term
    double alpha2 = 0.1;  // weight of the contrastive term
    double rho = 2.0;     // KD temperature
    double tau = 0.07;    // contrastive temperature

    void validate() const;

    static LossWeights finetune_defaults() { return {0.7, 0.1, 2.0, 0.07}; }
    static LossWeights pretrain_defaults() { return {0.1, 0.1, 2.0, 0.07}; }
};

// Linear map without bias from a concatenated layer summary to the shared
// contrastive space.
class ProjectionHead {
public:
    ProjectionHead() = default;
    ProjectionHead(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed);
    explicit ProjectionHead(Tensor weight);

    Tensor project(const Tensor& summary) const;

    std::size_t input_dim() const { return weight_.dim(0); }
    std::size_t output_dim() const { return weight_.dim(1); }
    const Tensor& weight() const { return weight_; }

private:
    Tensor weight_;  // [input_dim x output_dim]
};

// Per-layer pooling (mean over valid tokens, or the position-0 state),
// concatenated in layer order: [batch x (n_layers * d)].
Tensor summarize(const EncoderOutput& output, Pooling mode);

// Batch-mean KL(softmax(z_t / rho) || softmax(z_s / rho)); z_t is a constant.
Tensor kd_loss(const Tensor& z_t, const Tensor& z_s, double rho);

// InfoNCE over one positive (index 0) and K negatives, cosine similarity
// scaled by 1 / tau. Negatives are used as given, so gradient reaches them
// only if they require it.
Tensor crd_loss(const Tensor& h_t0, const Tensor& h_s0, const std::vector<Tensor>& negatives, double tau);

// Batch-mean contrastive loss. Rows with no negatives entry (std::nullopt)
// are skipped; returns a zero constant when every row is skipped.
Tensor crd_loss_batch(const Tensor& h_t, const Tensor& h_s,
                      const std::vector<std::optional<std::vector<Tensor>>>& negatives, double tau);

// Mean cross-entropy of logits [batch x k] against integer labels.
Tensor ce_loss(const Tensor& logits, std::span<const std::size_t> labels);

// Mean NLL over the selected rows of per-position logits [n x vocab].
Tensor mlm_loss(const Tensor& logits, std::span<const std::size_t> rows, std::span<const std::size_t> targets);

// task + alpha1 * kd + alpha2 * crd
Tensor combined_loss(const Tensor& task, const Tensor& kd, const Tensor& crd, const LossWeights& weights);
double combined_loss(double task, double kd, double crd, const LossWeights& weights);

}  // namespace codir
