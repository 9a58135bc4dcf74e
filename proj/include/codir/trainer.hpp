#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "codir/checkpoint.hpp"
#include "codir/config.hpp"
#include "codir/data.hpp"
#include "codir/encoder.hpp"
#include "codir/losses.hpp"
#include "codir/memory_bank.hpp"

namespace codir {

struct StepRecord {
    std::size_t step = 0;
    double task_loss = 0.0;
    double kd_loss = 0.0;
    double crd_loss = 0.0;
    double total = 0.0;
    double lr = 0.0;
    double wall_ms = 0.0;
};

struct RunRecord {
    std::vector<StepRecord> steps;
    std::vector<std::pair<std::size_t, double>> dev_accuracy;  // (step, accuracy)
    std::optional<double> final_dev_accuracy;
    std::size_t crd_skipped = 0;
    std::size_t bank_writes = 0;
    std::size_t bank_reads = 0;
};

struct TrainInputs {
    const Dataset* train = nullptr;
    const Dataset* dev = nullptr;
    const TransformerEncoder* teacher = nullptr;
    const ModelBundle* init = nullptr;
};

struct TrainResult {
    RunRecord record;
    TransformerEncoder student;
    std::optional<ProjectionHead> proj_student;
    std::optional<ProjectionHead> proj_teacher;
    std::optional<MemoryBank> bank;
};

// Independent RNG stream for a purpose, derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Architecture the trainer builds for `config` on `train`: vocab and classes
// follow the data, the head follows the stage, and an init checkpoint fixes
// the body shape.
EncoderConfig student_config_for(const TrainConfig& config, const Dataset& train, const ModelBundle* init);

// Runs one stage. The teacher, when present, is used in eval mode and never
// receives gradient.
TrainResult train(const TrainConfig& config, const TrainInputs& inputs);

// Path-driven variant used by the CLI: loads data, teacher and init
// checkpoints, then writes the checkpoint and metrics CSV when requested.
TrainResult run_training(const TrainConfig& config);

struct EvalResult {
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
    std::vector<std::size_t> class_correct;
    std::vector<std::size_t> class_total;
};

EvalResult evaluate(const TransformerEncoder& model, const Dataset& dataset, std::size_t batch_size = 64);

// CSV with header step,task_loss,kd_loss,crd_loss,total,lr,wall_ms.
void write_metrics_csv(const RunRecord& record, const std::string& path);
std::string metrics_csv(const RunRecord& record);

}  // namespace codir
