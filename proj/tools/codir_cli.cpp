// codir: command-line front end for training, evaluation and the
// verification/benchmark harnesses.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "codir/checkpoint.hpp"
#include "codir/config.hpp"
#include "codir/data.hpp"
#include "codir/error.hpp"
#include "codir/experiments.hpp"
#include "codir/trainer.hpp"

using namespace codir;

namespace {

// Exit status when a verification harness ran but its bound was exceeded.
constexpr int kCheckFailed = 3;

std::string flag_name(const std::string& key) {
    std::string out = key;
    for (char& c : out) {
        if (c == '_') c = '-';
    }
    return "--" + out;
}

struct TrainCommand {
    CLI::App* app = nullptr;
    std::string config_path;
    std::string stage;
    std::map<std::string, std::string> flags;  // only those given on the command line
};

void add_train_flags(TrainCommand& cmd) {
    cmd.app->add_option("-c,--config", cmd.config_path, "configuration file (key = value)");
    for (const auto& key : train_config_keys()) {
        auto* opt = cmd.app->add_option(flag_name(key.name), key.help);
        opt->each([&cmd, name = key.name](const std::string& v) { cmd.flags[name] = v; });
        opt->group(key.section);
    }
}

TrainConfig resolve_train_config(const TrainCommand& cmd, bool pretrain) {
    KeyValues values;
    if (!cmd.config_path.empty()) values = parse_config_file(cmd.config_path);
    for (const auto& [k, v] : cmd.flags) values[k] = v;

    Stage stage = pretrain ? Stage::PretrainMlm : Stage::FinetuneStandard;
    if (auto it = values.find("stage"); it != values.end()) stage = parse_stage(it->second);
    if (stage_is_pretrain(stage) != pretrain) {
        fail(ErrorKind::Config, "stage " + to_string(stage) + " cannot run under '" + (pretrain ? "pretrain" : "finetune") + "'");
    }
    TrainConfig config = TrainConfig::defaults_for(stage);
    config.apply_user_keys(values);
    config.validate();
    return config;
}

int run_train(const TrainCommand& cmd, bool pretrain) {
    const TrainConfig config = resolve_train_config(cmd, pretrain);
    std::cerr << "stage " << to_string(config.stage) << ", " << config.steps << " steps, seed " << config.seed << "\n";
    const TrainResult result = run_training(config);
    const RunRecord& r = result.record;
    if (!r.steps.empty()) {
        const StepRecord& last = r.steps.back();
        std::printf("final step %zu: task %.6f kd %.6f crd %.6f total %.6f\n", last.step, last.task_loss, last.kd_loss,
                    last.crd_loss, last.total);
    }
    for (const auto& [step, acc] : r.dev_accuracy) std::printf("dev accuracy @%zu: %.4f\n", step, acc);
    if (stage_uses_crd(config.stage)) {
        std::printf("crd skipped: %zu, bank writes: %zu, bank reads: %zu\n", r.crd_skipped, r.bank_writes, r.bank_reads);
    }
    if (!config.out.empty()) std::printf("checkpoint: %s\n", config.out.c_str());
    if (!config.metrics.empty()) std::printf("metrics: %s\n", config.metrics.c_str());
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string data;
    std::string vocab;
    std::size_t batch = 64;
};

int run_eval(const EvalArgs& a) {
    const ModelBundle bundle = load_model(a.model);
    const Vocab vocab = Vocab::load(a.vocab);
    const Dataset data = load_tsv_classification(a.data, &vocab, bundle.model.config().max_len,
                                                 bundle.model.config().num_classes);
    const EvalResult r = evaluate(bundle.model, data, a.batch);
    std::printf("accuracy %.6f (%zu/%zu)\n", r.accuracy, r.correct, r.total);
    for (std::size_t c = 0; c < r.class_total.size(); ++c) {
        std::printf("class %zu: %zu/%zu\n", c, r.class_correct[c], r.class_total[c]);
    }
    return 0;
}

struct GradArgs {
    CodirGradSetup setup;
    std::string summary = "mean";
    double tolerance = 1e-4;
};

int run_grad_check(GradArgs a) {
    a.setup.summary = parse_pooling(a.summary);
    const CodirGradReport r = grad_check_codir(a.setup);
    std::printf("%-28s %8s %12s %14s %14s\n", "group", "coords", "worst_rel", "analytic", "numeric");
    for (const auto& e : r.check.entries) {
        std::printf("%-28s %8zu %12.3e %14.6e %14.6e\n", e.name.c_str(), e.coords_checked, e.worst_rel_error, e.analytic,
                    e.numeric);
    }
    std::printf("teacher (frozen) max |grad| %.3e over %zu tensors\n", r.teacher_max_abs_grad, r.teacher.size());
    std::printf("loss %.12f\n", r.loss);
    std::printf("max relative error %.3e (tolerance %.1e), %.2f s\n", r.check.max_rel_error, a.tolerance, r.seconds);
    const bool ok = r.check.max_rel_error < a.tolerance && r.teacher_max_abs_grad == 0.0;
    std::printf("%s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : kCheckFailed;
}

struct BenchArgs {
    std::string teacher, student;
    std::size_t teacher_layers = 12, student_layers = 6;
    std::size_t hidden_dim = 32, heads = 4, ffn_dim = 0, vocab = 64, max_len = 128;
    std::size_t batch = 32, seq_len = 128, reps = 5, threads = 0;
    std::uint64_t seed = 1;
};

int run_bench(const BenchArgs& a) {
    auto random_model = [&](std::size_t layers, std::uint64_t seed) {
        EncoderConfig c;
        c.num_layers = layers;
        c.hidden_dim = a.hidden_dim;
        c.num_heads = a.heads;
        c.ffn_dim = a.ffn_dim ? a.ffn_dim : 4 * a.hidden_dim;
        c.vocab_size = a.vocab;
        c.max_len = a.max_len;
        c.dropout = 0.0;
        return TransformerEncoder(c, seed);
    };
    const TransformerEncoder teacher =
        a.teacher.empty() ? random_model(a.teacher_layers, a.seed) : load_model(a.teacher).model;
    const TransformerEncoder student =
        a.student.empty() ? random_model(a.student_layers, a.seed + 1) : load_model(a.student).model;
    const BenchResult r = bench_inference(teacher, student, a.batch, a.seq_len, a.reps, a.seed, a.threads);
    std::printf("threads %zu, batch %zu, seq_len %zu, reps %zu\n", r.threads, r.batch, r.seq_len, r.reps);
    std::printf("teacher %zu layers: %.3f ms (median)\n", teacher.config().num_layers, r.teacher_ms);
    std::printf("student %zu layers: %.3f ms (median)\n", student.config().num_layers, r.student_ms);
    std::printf("speedup %.3f\n", r.speedup);
    return 0;
}

struct GenArgs {
    std::string kind = "classification";
    std::size_t n = 2000;
    std::uint64_t seed = 1;
    std::string out, vocab_out, config_path;
    std::vector<std::string> sets;
};

SyntheticSpec spec_from(const std::string& config_path, const std::vector<std::string>& sets, const std::string& kind) {
    std::map<std::string, std::string> values;
    if (!config_path.empty()) {
        for (const auto& [k, v] : parse_config_file(config_path)) {
            if (k.rfind("synthetic.", 0) == 0) values[k.substr(10)] = v;
        }
    }
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) fail(ErrorKind::Config, "--set expects key=value, got '" + s + "'");
        values[s.substr(0, eq)] = s.substr(eq + 1);
    }
    if (!kind.empty()) values["kind"] = kind;
    return SyntheticSpec::from_map(values);
}

int run_gen(const GenArgs& a) {
    const SyntheticSpec spec = spec_from(a.config_path, a.sets, a.kind);
    const Dataset data = generate_synthetic(spec, a.n, a.seed);
    if (spec.kind == SyntheticKind::Classification) save_tsv_classification(data, a.out);
    else save_corpus(data, a.out);
    if (!a.vocab_out.empty()) data.vocab.save(a.vocab_out);
    std::printf("wrote %zu examples to %s (vocab %zu)\n", data.size(), a.out.c_str(), data.vocab.size());
    return 0;
}

struct AblateArgs {
    std::string out;
    std::string train, dev, vocab, teacher, config_path;
    std::size_t steps = 300;
    std::size_t teacher_steps = 600;
    std::size_t teacher_layers = 4;
    std::size_t student_layers = 2;
    std::size_t n_train = 2000, n_dev = 1000;
    std::size_t base_negatives = 32;
    std::vector<std::size_t> sweep = {8, 32, 128};
    std::vector<std::uint64_t> seeds = {1};
    std::vector<std::string> sets;
};

int run_ablate(const AblateArgs& a) {
    std::optional<Dataset> train_set, dev_set;
    std::optional<TransformerEncoder> teacher;
    if (!a.train.empty()) {
        if (a.dev.empty() || a.vocab.empty()) fail(ErrorKind::Config, "--train needs --dev and --vocab");
        const Vocab vocab = Vocab::load(a.vocab);
        train_set = load_tsv_classification(a.train, &vocab);
        dev_set = load_tsv_classification(a.dev, &vocab, 512, train_set->num_classes);
    } else {
        // Noisy training labels and clean dev labels, as in the efficacy study.
        std::vector<std::string> sets = {"marker_prob=0.5", "label_noise=0.25"};
        sets.insert(sets.end(), a.sets.begin(), a.sets.end());
        const SyntheticSpec spec = spec_from(a.config_path, sets, "classification");
        SyntheticSpec dev_spec = spec;
        dev_spec.label_noise = 0.0;
        train_set = generate_synthetic(spec, a.n_train, 1);
        dev_set = generate_synthetic(dev_spec, a.n_dev, 2);
    }
    if (!a.teacher.empty()) {
        teacher = load_model(a.teacher).model;
    } else {
        TrainConfig tc = TrainConfig::defaults_for(Stage::FinetuneStandard);
        tc.student.num_layers = a.teacher_layers;
        tc.steps = a.teacher_steps;
        tc.seed = 100;
        TrainInputs inputs;
        inputs.train = &*train_set;
        inputs.dev = &*dev_set;
        TrainResult t = train(tc, inputs);
        std::fprintf(stderr, "teacher dev accuracy %.4f\n", t.record.final_dev_accuracy.value_or(0.0));
        teacher = std::move(t.student);
    }

    TrainConfig base = TrainConfig::defaults_for(Stage::FinetuneCodir);
    if (!a.config_path.empty()) {
        KeyValues values = parse_config_file(a.config_path);
        values.erase("stage");
        base.apply_user_keys(values);
    }
    base.steps = a.steps;
    base.student.num_layers = a.student_layers;
    AblationPlan plan;
    plan.base_negatives = a.base_negatives;
    plan.negative_sweep = a.sweep;
    plan.seeds = a.seeds;
    const auto rows = run_ablation(base, plan, *train_set, *dev_set, *teacher);
    const std::string csv = ablation_csv(rows);
    if (a.out.empty() || a.out == "-") {
        std::cout << csv;
    } else {
        std::ofstream f(a.out);
        if (!f) fail(ErrorKind::Io, "cannot write " + a.out);
        f << csv;
        std::cout << csv;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contrastive distillation on intermediate representations"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "codir 0.1.0");

    TrainCommand pretrain_cmd, finetune_cmd;
    pretrain_cmd.app = app.add_subcommand("pretrain", "masked-LM pretraining, optionally distilled (pretrain_mlm | pretrain_codir)");
    finetune_cmd.app = app.add_subcommand("finetune", "classification finetuning (finetune_standard | finetune_kd | finetune_codir)");
    add_train_flags(pretrain_cmd);
    add_train_flags(finetune_cmd);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on a TSV dataset");
    eval->add_option("--model", eval_args.model, "checkpoint")->required();
    eval->add_option("--data", eval_args.data, "TSV dataset")->required();
    eval->add_option("--vocab", eval_args.vocab, "vocabulary used for training")->required();
    eval->add_option("--batch-size", eval_args.batch, "examples per forward pass");

    GradArgs grad_args;
    auto* grad = app.add_subcommand("grad-check", "finite-difference check of the full objective on a toy instance");
    grad->add_option("--teacher-layers", grad_args.setup.teacher_layers);
    grad->add_option("--student-layers", grad_args.setup.student_layers);
    grad->add_option("--hidden-dim", grad_args.setup.hidden_dim);
    grad->add_option("--heads", grad_args.setup.num_heads);
    grad->add_option("--ffn-dim", grad_args.setup.ffn_dim);
    grad->add_option("--batch-size", grad_args.setup.batch);
    grad->add_option("--negatives", grad_args.setup.negatives);
    grad->add_option("--proj-dim", grad_args.setup.proj_dim);
    grad->add_option("--alpha1", grad_args.setup.weights.alpha1);
    grad->add_option("--alpha2", grad_args.setup.weights.alpha2);
    grad->add_option("--rho", grad_args.setup.weights.rho);
    grad->add_option("--tau", grad_args.setup.weights.tau);
    grad->add_option("--summary", grad_args.summary, "mean | cls");
    grad->add_flag("--crd-only", grad_args.setup.crd_only, "contrastive term only (alpha1 = 0, task held constant)");
    grad->add_option("--step", grad_args.setup.step, "finite-difference step");
    grad->add_option("--param-noise", grad_args.setup.param_noise, "noise added to student weights before checking");
    grad->add_option("--max-coords", grad_args.setup.max_coords_per_tensor, "coordinates probed per tensor (0: all)");
    grad->add_option("--seed", grad_args.setup.seed);
    grad->add_option("--tolerance", grad_args.tolerance);

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "eval-mode inference speed of teacher vs student");
    bench->add_option("--teacher", bench_args.teacher, "teacher checkpoint (random model when omitted)");
    bench->add_option("--student", bench_args.student, "student checkpoint (random model when omitted)");
    bench->add_option("--teacher-layers", bench_args.teacher_layers);
    bench->add_option("--student-layers", bench_args.student_layers);
    bench->add_option("--hidden-dim", bench_args.hidden_dim);
    bench->add_option("--heads", bench_args.heads);
    bench->add_option("--ffn-dim", bench_args.ffn_dim, "default 4 * hidden-dim");
    bench->add_option("--vocab-size", bench_args.vocab);
    bench->add_option("--max-len", bench_args.max_len);
    bench->add_option("--batch-size", bench_args.batch);
    bench->add_option("--seq-len", bench_args.seq_len);
    bench->add_option("--reps", bench_args.reps);
    bench->add_option("--threads", bench_args.threads, "worker threads (default: CODIR_NUM_THREADS or 1)");
    bench->add_option("--seed", bench_args.seed);

    GenArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic classification set or pretraining corpus");
    gen->add_option("--kind", gen_args.kind, "classification | corpus");
    gen->add_option("--n", gen_args.n, "examples (sentences for a corpus)");
    gen->add_option("--seed", gen_args.seed);
    gen->add_option("--out", gen_args.out)->required();
    gen->add_option("--vocab-out", gen_args.vocab_out);
    gen->add_option("-c,--config", gen_args.config_path, "file with a [synthetic] section");
    gen->add_option("--set", gen_args.sets, "synthetic spec override key=value");

    AblateArgs ablate_args;
    auto* ablate = app.add_subcommand("ablate", "summary pooling and negative-count ablation, as CSV");
    ablate->add_option("--out", ablate_args.out, "CSV path ('-' for stdout)");
    ablate->add_option("--train", ablate_args.train, "training TSV (synthetic when omitted)");
    ablate->add_option("--dev", ablate_args.dev);
    ablate->add_option("--vocab", ablate_args.vocab);
    ablate->add_option("--teacher", ablate_args.teacher, "teacher checkpoint (trained here when omitted)");
    ablate->add_option("-c,--config", ablate_args.config_path, "training keys and a [synthetic] section");
    ablate->add_option("--steps", ablate_args.steps, "student steps per setting");
    ablate->add_option("--teacher-steps", ablate_args.teacher_steps);
    ablate->add_option("--teacher-layers", ablate_args.teacher_layers);
    ablate->add_option("--student-layers", ablate_args.student_layers);
    ablate->add_option("--n-train", ablate_args.n_train);
    ablate->add_option("--n-dev", ablate_args.n_dev);
    ablate->add_option("--base-negatives", ablate_args.base_negatives);
    ablate->add_option("--negatives", ablate_args.sweep, "sweep values")->delimiter(',');
    ablate->add_option("--seeds", ablate_args.seeds)->delimiter(',');
    ablate->add_option("--set", ablate_args.sets, "synthetic spec override key=value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*pretrain_cmd.app) return run_train(pretrain_cmd, true);
        if (*finetune_cmd.app) return run_train(finetune_cmd, false);
        if (*eval) return run_eval(eval_args);
        if (*grad) return run_grad_check(grad_args);
        if (*bench) return run_bench(bench_args);
        if (*gen) return run_gen(gen_args);
        if (*ablate) return run_ablate(ablate_args);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
