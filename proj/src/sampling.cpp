#include "codir/sampling.hpp"

#include <algorithm>

#include "codir/error.hpp"

namespace codir {

namespace {

// Partial Fisher-Yates: the first `take` entries become a uniform sample
// without replacement.
std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool, std::size_t take, std::mt19937_64& rng) {
    take = std::min(take, pool.size());
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(take);
    return pool;
}

}  // namespace

NegativePlan sample_negatives_finetune(std::span<const std::size_t> labels, std::size_t positive_index, std::size_t k,
                                       std::mt19937_64& rng) {
    if (positive_index >= labels.size()) {
        fail(ErrorKind::Bounds, "positive index " + std::to_string(positive_index) + " outside dataset of size " +
                                    std::to_string(labels.size()));
    }
    NegativePlan plan;
    plan.positive_index = positive_index;
    if (k == 0) return plan;

    const std::size_t label = labels[positive_index];
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != label) eligible.push_back(i);
    }
    if (eligible.empty()) {
        fail(ErrorKind::Sampling, "no example with a label other than " + std::to_string(label));
    }
    plan.negative_indices = draw_without_replacement(std::move(eligible), k, rng);
    return plan;
}

NegativePlan sample_negatives_pretrain(std::span<const std::size_t> batch_indices, std::size_t positive_position,
                                       std::size_t k, std::mt19937_64& rng) {
    if (batch_indices.size() < 2) fail(ErrorKind::Sampling, "in-batch negatives need a batch of at least 2");
    if (positive_position >= batch_indices.size()) fail(ErrorKind::Bounds, "positive position outside the batch");
    NegativePlan plan;
    plan.positive_index = batch_indices[positive_position];
    std::vector<std::size_t> others;
    others.reserve(batch_indices.size() - 1);
    for (std::size_t i = 0; i < batch_indices.size(); ++i) {
        if (i != positive_position) others.push_back(batch_indices[i]);
    }
    plan.negative_indices = draw_without_replacement(std::move(others), k, rng);
    return plan;
}

MaskingPlan make_masking_plan(std::span<const std::size_t> tokens, const MaskingOptions& options, std::mt19937_64& rng) {
    if (!(options.rate > 0.0 && options.rate < 1.0)) fail(ErrorKind::Parameter, "mask rate must lie in (0, 1)");
    if (options.bert_style && options.vocab_size == 0) fail(ErrorKind::Parameter, "BERT-style masking needs vocab_size");

    std::vector<std::size_t> maskable;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const bool special = std::find(options.special_ids.begin(), options.special_ids.end(), tokens[i]) !=
                             options.special_ids.end();
        if (!special) maskable.push_back(i);
    }
    if (maskable.empty()) fail(ErrorKind::Input, "sequence has no maskable token");

    std::bernoulli_distribution select(options.rate);
    MaskingPlan plan;
    while (plan.positions.empty()) {
        for (std::size_t pos : maskable) {
            if (select(rng)) plan.positions.push_back(pos);
        }
    }

    plan.masked_tokens.assign(tokens.begin(), tokens.end());
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t pos : plan.positions) {
        plan.targets.push_back(tokens[pos]);
        if (!options.bert_style) {
            plan.masked_tokens[pos] = options.mask_id;
            continue;
        }
        const double u = uniform(rng);
        if (u < 0.8) {
            plan.masked_tokens[pos] = options.mask_id;
        } else if (u < 0.9) {
            std::uniform_int_distribution<std::size_t> any(0, options.vocab_size - 1);
            std::size_t id = any(rng);
            while (std::find(options.special_ids.begin(), options.special_ids.end(), id) != options.special_ids.end() ||
                   id == options.mask_id) {
                id = any(rng);
            }
            plan.masked_tokens[pos] = id;
        }
    }
    return plan;
}

}  // namespace codir
