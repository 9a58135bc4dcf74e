#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "codir/data.hpp"
#include "codir/encoder.hpp"
#include "codir/losses.hpp"

namespace codir {

using KeyValues = std::map<std::string, std::string>;

// Flat "key = value" text. "[section]" headers group keys for readability;
// keys must be unique across sections. '#' and ';' start comments.
// Keys inside a section named "synthetic" are returned as "synthetic.<key>".
KeyValues parse_config_text(const std::string& text, const std::string& origin = "<config>");
KeyValues parse_config_file(const std::string& path);

enum class Stage { PretrainMlm, PretrainCodir, FinetuneStandard, FinetuneKd, FinetuneCodir };

std::string to_string(Stage stage);
Stage parse_stage(const std::string& text);
bool stage_is_pretrain(Stage stage);
bool stage_uses_kd(Stage stage);
bool stage_uses_crd(Stage stage);

struct TrainConfig {
    Stage stage = Stage::FinetuneStandard;

    // Optimization.
    std::size_t steps = 300;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double warmup_frac = 0.06;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;

    // Objective.
    LossWeights weights = LossWeights::finetune_defaults();
    std::size_t negatives = 32;
    double bank_beta = 0.5;
    Pooling summary = Pooling::MeanPool;
    std::size_t proj_dim = 16;

    // Pretraining data.
    double mask_rate = 0.15;
    bool bert_mask = false;
    BatchOrder order = BatchOrder::Shuffled;

    // Student architecture; vocab_size and num_classes follow the data.
    EncoderConfig student;

    std::uint64_t seed = 1;
    std::size_t eval_every = 0;
    bool prefetch = false;

    // Paths.
    std::string train_data;
    std::string dev_data;
    std::string vocab;
    std::string teacher;
    std::string init;
    std::string out;
    std::string metrics;

    static TrainConfig defaults_for(Stage stage);

    void set(const std::string& key, const std::string& value);
    // Applies user-supplied keys; rejects keys that have no effect in this stage.
    void apply_user_keys(const KeyValues& values);
    void validate() const;
};

struct ConfigKey {
    std::string name;
    std::string section;
    std::string help;
};

// Every key accepted by TrainConfig::set, in documentation order.
const std::vector<ConfigKey>& train_config_keys();
bool key_active_in_stage(const std::string& key, Stage stage);

}  // namespace codir
