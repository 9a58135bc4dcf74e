#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace codir {

struct NegativePlan {
    std::size_t positive_index = 0;
    std::vector<std::size_t> negative_indices;
};

// Finetuning: up to K distinct examples whose label differs from the
// positive's, drawn uniformly without replacement. Returns every eligible
// index when fewer than K exist; throws a Sampling error when none exist.
NegativePlan sample_negatives_finetune(std::span<const std::size_t> labels, std::size_t positive_index, std::size_t k,
                                       std::mt19937_64& rng);

// Pretraining: min(K, B - 1) distinct members of the current mini-batch other
// than the positive. Indices returned are dataset indices.
NegativePlan sample_negatives_pretrain(std::span<const std::size_t> batch_indices, std::size_t positive_position,
                                       std::size_t k, std::mt19937_64& rng);

struct MaskingOptions {
    double rate = 0.15;
    std::size_t mask_id = 0;
    std::vector<std::size_t> special_ids;  // never masked
    // BERT-style 80/10/10 replacement; off means every selected token becomes mask_id.
    bool bert_style = false;
    std::size_t vocab_size = 0;  // needed for random replacement
};

struct MaskingPlan {
    std::vector<std::size_t> positions;  // ascending
    std::vector<std::size_t> targets;    // original ids at `positions`
    std::vector<std::size_t> masked_tokens;
};

// Each maskable position is selected independently with probability `rate`;
// draws are repeated until at least one position is selected.
MaskingPlan make_masking_plan(std::span<const std::size_t> tokens, const MaskingOptions& options, std::mt19937_64& rng);

}  // namespace codir
