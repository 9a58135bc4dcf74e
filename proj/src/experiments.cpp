#include "codir/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "codir/error.hpp"
#include "codir/memory_bank.hpp"
#include "codir/sampling.hpp"
#include "codir/trainer.hpp"

namespace codir {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TokenBatch slice(const TokenBatch& b, std::size_t begin, std::size_t end) {
    TokenBatch out;
    out.batch = end - begin;
    out.seq_len = b.seq_len;
    out.ids.assign(b.ids.begin() + begin * b.seq_len, b.ids.begin() + end * b.seq_len);
    out.valid_lens.assign(b.valid_lens.begin() + begin, b.valid_lens.begin() + end);
    return out;
}

void timed_forward(const TransformerEncoder& model, const std::vector<TokenBatch>& parts) {
    ForwardOptions options;
    options.keep_hidden = false;
    if (parts.size() == 1) {
        NoGradGuard no_grad;
        model.forward(parts[0], options);
        return;
    }
    std::vector<std::thread> workers;
    for (const auto& part : parts) {
        workers.emplace_back([&model, &part, options] {
            NoGradGuard no_grad;
            model.forward(part, options);
        });
    }
    for (auto& w : workers) w.join();
}

}  // namespace

std::size_t bench_threads_from_env() {
    const char* value = std::getenv("CODIR_NUM_THREADS");
    if (!value || !*value) return 1;
    char* end = nullptr;
    const long n = std::strtol(value, &end, 10);
    if (*end != '\0' || n < 1) fail(ErrorKind::Config, std::string("CODIR_NUM_THREADS must be a positive integer, got '") + value + "'");
    return static_cast<std::size_t>(n);
}

BenchResult bench_inference(const TransformerEncoder& teacher, const TransformerEncoder& student, std::size_t batch,
                            std::size_t seq_len, std::size_t reps, std::uint64_t seed, std::size_t threads) {
    if (reps < 3) fail(ErrorKind::Parameter, "bench needs at least 3 repetitions, got " + std::to_string(reps));
    if (batch == 0 || seq_len == 0) fail(ErrorKind::Parameter, "bench batch and sequence length must be >= 1");
    const std::size_t limit = std::min(teacher.config().max_len, student.config().max_len);
    if (seq_len > limit) {
        fail(ErrorKind::Parameter, "sequence length " + std::to_string(seq_len) + " exceeds max_len " + std::to_string(limit));
    }
    const std::size_t vocab = std::min(teacher.config().vocab_size, student.config().vocab_size);
    if (threads == 0) threads = bench_threads_from_env();
    threads = std::min(threads, batch);

    TokenBatch tokens;
    tokens.batch = batch;
    tokens.seq_len = seq_len;
    tokens.valid_lens.assign(batch, seq_len);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
    for (std::size_t i = 0; i < batch * seq_len; ++i) tokens.ids.push_back(pick(rng));

    std::vector<TokenBatch> parts;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = batch * t / threads;
        const std::size_t end = batch * (t + 1) / threads;
        parts.push_back(slice(tokens, begin, end));
    }

    timed_forward(teacher, parts);
    timed_forward(student, parts);
    std::vector<double> t_ms, s_ms;
    for (std::size_t r = 0; r < reps; ++r) {
        auto start = std::chrono::steady_clock::now();
        timed_forward(teacher, parts);
        t_ms.push_back(elapsed_ms(start));
        start = std::chrono::steady_clock::now();
        timed_forward(student, parts);
        s_ms.push_back(elapsed_ms(start));
    }

    BenchResult result;
    result.teacher_ms = median(t_ms);
    result.student_ms = median(s_ms);
    result.speedup = result.teacher_ms / result.student_ms;
    result.threads = threads;
    result.reps = reps;
    result.batch = batch;
    result.seq_len = seq_len;
    return result;
}

CodirGradReport grad_check_codir(const CodirGradSetup& setup) {
    const auto start = std::chrono::steady_clock::now();
    if (setup.batch < 2) fail(ErrorKind::Parameter, "grad-check needs a batch of at least 2");
    if (setup.dataset_size < setup.batch) fail(ErrorKind::Parameter, "grad-check dataset is smaller than the batch");

    SyntheticSpec spec;
    const Dataset data = generate_synthetic(spec, setup.dataset_size, setup.seed);

    EncoderConfig tc;
    tc.num_layers = setup.teacher_layers;
    tc.hidden_dim = setup.hidden_dim;
    tc.num_heads = setup.num_heads;
    tc.ffn_dim = setup.ffn_dim;
    tc.max_len = setup.max_len;
    tc.vocab_size = data.vocab.size();
    tc.num_classes = data.num_classes;
    tc.dropout = 0.0;
    EncoderConfig sc = tc;
    sc.num_layers = setup.student_layers;

    TransformerEncoder teacher(tc, derive_seed(setup.seed, 101));
    TransformerEncoder student(sc, derive_seed(setup.seed, 102));
    ProjectionHead proj_s(sc.num_layers * sc.hidden_dim, setup.proj_dim, derive_seed(setup.seed, 103));
    ProjectionHead proj_t(tc.num_layers * tc.hidden_dim, setup.proj_dim, derive_seed(setup.seed, 104));
    MemoryBank bank = MemoryBank::init(data.size(), setup.proj_dim, derive_seed(setup.seed, 105));
    if (setup.param_noise > 0.0) {
        std::mt19937_64 noise_rng(derive_seed(setup.seed, 107));
        std::normal_distribution<double> noise(0.0, setup.param_noise);
        for (const auto& p : student.parameters()) {
            Tensor t = p.tensor;
            for (double& v : t.mutable_values()) v += noise(noise_rng);
        }
    }

    std::vector<std::size_t> indices(setup.batch);
    for (std::size_t i = 0; i < setup.batch; ++i) indices[i] = i;
    const Batch batch = make_batch(data, indices);
    const std::vector<std::size_t> labels = data.labels();

    std::mt19937_64 rng(derive_seed(setup.seed, 106));
    std::vector<std::optional<std::vector<Tensor>>> negatives(setup.batch);
    for (std::size_t b = 0; b < setup.batch; ++b) {
        const NegativePlan plan = sample_negatives_finetune(labels, indices[b], setup.negatives, rng);
        negatives[b] = bank.retrieve(plan.negative_indices);
    }

    LossWeights weights = setup.weights;
    if (setup.crd_only) weights.alpha1 = 0.0;

    ForwardOptions eval;
    eval.keep_hidden = true;
    auto teacher_targets = [&] {
        NoGradGuard no_grad;
        EncoderOutput out = teacher.forward(batch.tokens, eval);
        return std::pair{out.logits.detach(), summarize(out, setup.summary).detach()};
    };

    // In contrastive-only mode the task term is frozen at its starting value
    // so that finite-difference probes see it as a constant too.
    std::optional<double> frozen_task;
    if (setup.crd_only) {
        NoGradGuard no_grad;
        frozen_task = ce_loss(student.forward(batch.tokens, eval).logits, batch.labels).item();
    }

    auto objective = [&](const Tensor& t_logits, const Tensor& t_summary) {
        const EncoderOutput out = student.forward(batch.tokens, eval);
        const Tensor task = frozen_task ? Tensor::scalar(*frozen_task) : ce_loss(out.logits, batch.labels);
        const Tensor kd = kd_loss(t_logits, out.logits, weights.rho);
        const Tensor h_t = proj_t.project(t_summary);
        const Tensor h_s = proj_s.project(summarize(out, setup.summary));
        const Tensor crd = crd_loss_batch(h_t, h_s, negatives, weights.tau);
        return combined_loss(task, kd, crd, weights);
    };

    CodirGradReport report;

    // Teacher parameters are marked trainable here so that any gradient
    // leaking into them would be visible.
    teacher.set_trainable(true);
    teacher.zero_grad();
    {
        TapeScope scope;
        const auto [t_logits, t_summary] = teacher_targets();
        const Tensor loss = objective(t_logits, t_summary);
        report.loss = loss.item();
        backward(loss);
    }
    for (const auto& p : teacher.parameters()) {
        double worst = 0.0;
        for (double g : p.tensor.grad()) worst = std::max(worst, std::abs(g));
        report.teacher.push_back({p.name, worst});
        report.teacher_max_abs_grad = std::max(report.teacher_max_abs_grad, worst);
    }
    teacher.set_trainable(false);

    const auto [t_logits, t_summary] = teacher_targets();
    std::vector<Tensor> params;
    std::vector<std::string> names;
    for (const auto& p : student.parameters()) {
        params.push_back(p.tensor);
        names.push_back("student." + p.name);
    }
    params.push_back(proj_s.weight());
    names.push_back("proj.student.weight");
    params.push_back(proj_t.weight());
    names.push_back("proj.teacher.weight");

    GradCheckOptions options;
    options.step = setup.step;
    options.max_coords_per_tensor = setup.max_coords_per_tensor;
    options.seed = setup.seed;
    report.check = check_gradients([&] { return objective(t_logits, t_summary); }, params, names, options);
    report.seconds = elapsed_ms(start) / 1000.0;
    return report;
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const AblationPlan& plan, const Dataset& train,
                                      const Dataset& dev, const TransformerEncoder& teacher) {
    struct Setting {
        std::string name;
        Pooling pooling;
        std::size_t negatives;
    };
    std::vector<Setting> settings = {
        {"summary_mean", Pooling::MeanPool, plan.base_negatives},
        {"summary_cls", Pooling::Cls, plan.base_negatives},
    };
    for (std::size_t k : plan.negative_sweep) settings.push_back({"negatives_" + std::to_string(k), Pooling::MeanPool, k});

    std::vector<AblationRow> rows;
    for (const auto& s : settings) {
        for (std::uint64_t seed : plan.seeds) {
            TrainConfig config = base;
            config.stage = Stage::FinetuneCodir;
            config.summary = s.pooling;
            config.negatives = s.negatives;
            config.seed = seed;
            TrainInputs inputs;
            inputs.train = &train;
            inputs.dev = &dev;
            inputs.teacher = &teacher;
            const TrainResult result = codir::train(config, inputs);
            rows.push_back({s.name, s.pooling, s.negatives, seed, result.record.final_dev_accuracy.value_or(0.0)});
        }
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "setting,pooling,negatives,seed,dev_accuracy\n";
    for (const auto& r : rows) {
        os << r.setting << ',' << to_string(r.pooling) << ',' << r.negatives << ',' << r.seed << ',' << r.dev_accuracy
           << '\n';
    }
    return os.str();
}

}  // namespace codir
