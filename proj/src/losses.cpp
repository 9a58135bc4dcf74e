#include "codir/losses.hpp"

#include <cmath>
#include <random>

#include "codir/error.hpp"
#include "codir/ops.hpp"

namespace codir {

void LossWeights::validate() const {
    if (!(alpha1 >= 0.0) || !std::isfinite(alpha1) || !(alpha2 >= 0.0) || !std::isfinite(alpha2)) {
        fail(ErrorKind::Parameter, "loss weights must be finite and >= 0");
    }
    if (!(rho > 0.0) || !std::isfinite(rho)) fail(ErrorKind::Parameter, "KD temperature rho must be > 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) fail(ErrorKind::Parameter, "contrastive temperature tau must be > 0");
}

ProjectionHead::ProjectionHead(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed) {
    if (input_dim == 0 || output_dim == 0) fail(ErrorKind::Parameter, "projection extents must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    // Scale keeps the projected norm comparable to the input norm.
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(input_dim));
    std::vector<double> w(input_dim * output_dim);
    for (double& v : w) v = std_dev * normal(rng);
    weight_ = Tensor::matrix(input_dim, output_dim, std::move(w), true);
}

ProjectionHead::ProjectionHead(Tensor weight) : weight_(std::move(weight)) {
    if (weight_.rank() != 2) fail(ErrorKind::Dimension, "projection weight must be a matrix, got " + weight_.shape_string());
}

Tensor ProjectionHead::project(const Tensor& summary) const {
    const std::size_t width = summary.shape().back();
    if (width != input_dim()) {
        fail(ErrorKind::Dimension, "projection expects input extent " + std::to_string(input_dim()) + ", got " +
                                       summary.shape_string());
    }
    if (summary.rank() == 1) return reshape(matmul(reshape(summary, {1, width}), weight_), {output_dim()});
    return matmul(summary, weight_);
}

Tensor summarize(const EncoderOutput& output, Pooling mode) {
    if (output.hidden.empty()) fail(ErrorKind::State, "summarize: encoder output carries no hidden states");
    std::vector<Tensor> pooled;
    pooled.reserve(output.hidden.size());
    for (const Tensor& h : output.hidden) {
        if (h.rank() != 3) fail(ErrorKind::Dimension, "summarize: hidden state must be [batch x len x d], got " + h.shape_string());
        if (mode == Pooling::MeanPool) {
            pooled.push_back(mean_pool_rows(h, output.valid_lens));
        } else {
            const std::size_t batch = h.dim(0), len = h.dim(1);
            std::vector<std::size_t> first(batch);
            for (std::size_t b = 0; b < batch; ++b) first[b] = b * len;
            pooled.push_back(select_rows(reshape(h, {batch * len, h.dim(2)}), first));
        }
    }
    return pooled.size() == 1 ? pooled.front() : concat(pooled);
}

Tensor kd_loss(const Tensor& z_t, const Tensor& z_s, double rho) {
    if (z_t.shape() != z_s.shape()) {
        fail(ErrorKind::Dimension, "kd_loss: teacher logits " + z_t.shape_string() + " vs student " + z_s.shape_string());
    }
    if (!(rho > 0.0)) fail(ErrorKind::Parameter, "kd_loss: rho must be > 0");
    Tensor target;
    {
        NoGradGuard no_grad;
        target = log_softmax_rows(z_t.detach(), rho);
    }
    return kl_rows(target, log_softmax_rows(z_s, rho));
}

Tensor crd_loss(const Tensor& h_t0, const Tensor& h_s0, const std::vector<Tensor>& negatives, double tau) {
    if (!(tau > 0.0)) fail(ErrorKind::Parameter, "crd_loss: tau must be > 0");
    std::vector<Tensor> sims;
    sims.reserve(negatives.size() + 1);
    sims.push_back(cosine_sim(h_t0, h_s0));
    for (const Tensor& neg : negatives) sims.push_back(cosine_sim(h_t0, neg));
    Tensor logits = reshape(concat(sims), {1, sims.size()});
    const std::size_t positive[] = {0};
    return nll_rows(log_softmax_rows(logits, tau), positive);
}

Tensor crd_loss_batch(const Tensor& h_t, const Tensor& h_s,
                      const std::vector<std::optional<std::vector<Tensor>>>& negatives, double tau) {
    if (h_t.rank() != 2 || h_t.shape() != h_s.shape()) {
        fail(ErrorKind::Dimension, "crd_loss_batch: projections " + h_t.shape_string() + " vs " + h_s.shape_string());
    }
    if (negatives.size() != h_t.dim(0)) fail(ErrorKind::Dimension, "crd_loss_batch: one negative list per row required");
    std::vector<Tensor> terms;
    for (std::size_t b = 0; b < negatives.size(); ++b) {
        if (!negatives[b]) continue;
        terms.push_back(crd_loss(row(h_t, b), row(h_s, b), *negatives[b], tau));
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    return terms.size() == 1 ? terms.front() : mean(concat(terms));
}

Tensor ce_loss(const Tensor& logits, std::span<const std::size_t> labels) {
    return nll_rows(log_softmax_rows(logits), labels);
}

Tensor mlm_loss(const Tensor& logits, std::span<const std::size_t> rows, std::span<const std::size_t> targets) {
    if (rows.empty()) fail(ErrorKind::Input, "mlm_loss: no masked positions");
    return nll_rows(log_softmax_rows(select_rows(logits, rows)), targets);
}

Tensor combined_loss(const Tensor& task, const Tensor& kd, const Tensor& crd, const LossWeights& weights) {
    return add(add(task, scale(kd, weights.alpha1)), scale(crd, weights.alpha2));
}

double combined_loss(double task, double kd, double crd, const LossWeights& weights) {
    return task + weights.alpha1 * kd + weights.alpha2 * crd;
}

}  // namespace codir
