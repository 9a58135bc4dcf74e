#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "codir/config.hpp"
#include "codir/data.hpp"
#include "codir/encoder.hpp"
#include "codir/gradcheck.hpp"
#include "codir/losses.hpp"

namespace codir {

// ---------------------------------------------------------------------------
// Inference timing.

struct BenchResult {
    double teacher_ms = 0.0;  // median over reps
    double student_ms = 0.0;
    double speedup = 0.0;     // teacher_ms / student_ms
    std::size_t threads = 1;
    std::size_t reps = 0;
    std::size_t batch = 0;
    std::size_t seq_len = 0;
};

// Thread count from CODIR_NUM_THREADS, 1 when unset.
std::size_t bench_threads_from_env();

// Times eval-mode forward passes on one random batch of full-length
// sequences, alternating teacher and student. threads == 0 reads the
// environment. Requires reps >= 3.
BenchResult bench_inference(const TransformerEncoder& teacher, const TransformerEncoder& student, std::size_t batch,
                            std::size_t seq_len, std::size_t reps, std::uint64_t seed = 1, std::size_t threads = 0);

// ---------------------------------------------------------------------------
// Finite-difference check of the full training objective on a toy instance.

struct CodirGradSetup {
    std::size_t teacher_layers = 4;
    std::size_t student_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t num_heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t max_len = 32;
    std::size_t batch = 4;
    std::size_t negatives = 8;
    std::size_t proj_dim = 16;
    std::size_t dataset_size = 32;
    LossWeights weights = LossWeights::finetune_defaults();
    Pooling summary = Pooling::MeanPool;
    // Contrastive term only: alpha1 = 0 and the task loss is held constant.
    bool crd_only = false;
    // Std of seeded Gaussian noise added to every student weight before the
    // check. At initialization attention is nearly uniform and query/key
    // gradients sit near 1e-9, below what central differences resolve.
    double param_noise = 0.2;
    double step = 1e-4;
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 7;
};

struct TeacherGradEntry {
    std::string name;
    double max_abs_grad = 0.0;
};

struct CodirGradReport {
    GradCheckReport check;
    std::vector<TeacherGradEntry> teacher;  // analytic grads with the teacher marked trainable
    double teacher_max_abs_grad = 0.0;
    double loss = 0.0;
    double seconds = 0.0;
};

CodirGradReport grad_check_codir(const CodirGradSetup& setup);

// ---------------------------------------------------------------------------
// Ablation of the contrastive summary and the number of negatives.

struct AblationRow {
    std::string setting;
    Pooling pooling = Pooling::MeanPool;
    std::size_t negatives = 0;
    std::uint64_t seed = 0;
    double dev_accuracy = 0.0;
};

struct AblationPlan {
    std::size_t base_negatives = 32;
    std::vector<std::size_t> negative_sweep = {8, 32, 128};
    std::vector<std::uint64_t> seeds = {1};
};

// Runs finetune_codir once per setting: mean-pool and [CLS] summaries at the
// base K, then mean-pool at every K of the sweep. `base` supplies everything
// else (steps, weights, student shape).
std::vector<AblationRow> run_ablation(const TrainConfig& base, const AblationPlan& plan, const Dataset& train,
                                      const Dataset& dev, const TransformerEncoder& teacher);

// Header setting,pooling,negatives,seed,dev_accuracy.
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace codir
