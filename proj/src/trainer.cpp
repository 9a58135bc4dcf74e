#include "codir/trainer.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <thread>

#include "codir/error.hpp"
#include "codir/ops.hpp"
#include "codir/optimizer.hpp"
#include "codir/sampling.hpp"

namespace codir {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over (seed, stream)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace {

enum Stream : std::uint64_t {
    kStudentInit = 1,
    kProjStudent = 2,
    kProjTeacher = 3,
    kBankInit = 4,
    kBatchOrder = 5,
    kMasking = 6,
    kDropout = 7,
    kNegatives = 8,
};

// Produces training batches in a fixed order from dedicated RNG streams, so
// the sequence is identical with or without the producer thread.
class BatchStream {
public:
    BatchStream(const Dataset& data, const TrainConfig& config, std::size_t vocab_size)
        : data_(data),
          config_(config),
          order_rng_(derive_seed(config.seed, kBatchOrder)),
          mask_rng_(derive_seed(config.seed, kMasking)) {
        masking_.rate = config.mask_rate;
        masking_.mask_id = Vocab::kMask;
        masking_.special_ids = Vocab::special_ids();
        masking_.bert_style = config.bert_mask;
        masking_.vocab_size = vocab_size;
    }

    Batch next() {
        if (pending_.empty()) {
            auto epoch = make_epoch_batches(data_.size(), config_.batch_size, config_.order, order_rng_);
            pending_.assign(epoch.begin(), epoch.end());
        }
        std::vector<std::size_t> indices = std::move(pending_.front());
        pending_.pop_front();
        Batch batch = make_batch(data_, indices);
        if (stage_is_pretrain(config_.stage)) apply_masking(batch, masking_, mask_rng_);
        return batch;
    }

private:
    const Dataset& data_;
    const TrainConfig& config_;
    std::mt19937_64 order_rng_;
    std::mt19937_64 mask_rng_;
    MaskingOptions masking_;
    std::deque<std::vector<std::size_t>> pending_;
};

void check_teacher(const TrainConfig& config, const EncoderConfig& student, const TransformerEncoder& teacher) {
    const EncoderConfig& t = teacher.config();
    if (stage_is_pretrain(config.stage)) {
        if (t.head != HeadKind::MaskedLm) fail(ErrorKind::Config, "pretraining distillation needs a masked-LM teacher");
        if (t.vocab_size != student.vocab_size) {
            fail(ErrorKind::Config, "teacher vocabulary (" + std::to_string(t.vocab_size) + ") differs from the student's (" +
                                        std::to_string(student.vocab_size) + ")");
        }
    } else {
        if (t.head != HeadKind::Classification) fail(ErrorKind::Config, "finetuning distillation needs a classification teacher");
        if (t.num_classes != student.num_classes) {
            fail(ErrorKind::Config, "teacher predicts " + std::to_string(t.num_classes) + " classes, data has " +
                                        std::to_string(student.num_classes));
        }
        if (t.vocab_size < student.vocab_size) fail(ErrorKind::Config, "teacher vocabulary is smaller than the data's");
    }
}

double now_ms() {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

EncoderConfig student_config_for(const TrainConfig& config, const Dataset& train, const ModelBundle* init) {
    EncoderConfig cfg = init ? init->model.config() : config.student;
    cfg.vocab_size = init ? std::max(cfg.vocab_size, train.vocab.size()) : train.vocab.size();
    cfg.dropout = config.student.dropout;
    cfg.pooling = config.student.pooling;
    if (stage_is_pretrain(config.stage)) {
        cfg.head = HeadKind::MaskedLm;
    } else {
        cfg.head = HeadKind::Classification;
        cfg.num_classes = train.num_classes;
    }
    return cfg;
}

TrainResult train(const TrainConfig& config, const TrainInputs& inputs) {
    config.validate();
    if (!inputs.train) fail(ErrorKind::State, "train: no training data");
    const Dataset& data = *inputs.train;
    if (data.size() == 0) fail(ErrorKind::Input, "train: empty training set");
    const bool pretrain = stage_is_pretrain(config.stage);
    const bool use_kd = stage_uses_kd(config.stage);
    const bool use_crd = stage_uses_crd(config.stage);
    if (!pretrain && data.num_classes < 2) fail(ErrorKind::Input, "finetuning needs labeled data with >= 2 classes");
    if (use_kd && !inputs.teacher) {
        fail(ErrorKind::Config, "stage " + to_string(config.stage) + " needs a teacher checkpoint");
    }

    const EncoderConfig cfg = student_config_for(config, data, inputs.init);
    TransformerEncoder student(cfg, derive_seed(config.seed, kStudentInit));
    if (inputs.init) {
        const EncoderConfig& ic = inputs.init->model.config();
        if (ic.head == cfg.head && ic.output_dim() == cfg.output_dim() && ic.vocab_size == cfg.vocab_size) {
            for (const auto& p : student.parameters()) {
                Tensor src = inputs.init->model.parameter(p.name);
                Tensor dst = p.tensor;
                std::copy(src.values().begin(), src.values().end(), dst.mutable_values().begin());
            }
        } else {
            if (ic.vocab_size != cfg.vocab_size) fail(ErrorKind::Config, "init checkpoint vocabulary does not match the data");
            student.copy_body_from(inputs.init->model);
        }
    }
    const TransformerEncoder* teacher = use_kd ? inputs.teacher : nullptr;
    if (teacher) check_teacher(config, cfg, *teacher);

    std::optional<ProjectionHead> proj_student, proj_teacher;
    std::optional<MemoryBank> bank;
    if (use_crd) {
        proj_student.emplace(cfg.num_layers * cfg.hidden_dim, config.proj_dim, derive_seed(config.seed, kProjStudent));
        proj_teacher.emplace(teacher->config().num_layers * teacher->config().hidden_dim, config.proj_dim,
                             derive_seed(config.seed, kProjTeacher));
        bank = MemoryBank::init(data.size(), config.proj_dim, derive_seed(config.seed, kBankInit), config.bank_beta);
    }

    std::vector<Tensor> params = student.parameter_tensors();
    if (proj_student) params.push_back(proj_student->weight());
    if (proj_teacher) params.push_back(proj_teacher->weight());
    Adam adam(params, {config.adam_beta1, config.adam_beta2, config.adam_eps});
    const LinearSchedule schedule = LinearSchedule::with_warmup_fraction(config.lr, config.steps, config.warmup_frac);

    std::mt19937_64 dropout_rng(derive_seed(config.seed, kDropout));
    std::mt19937_64 negative_rng(derive_seed(config.seed, kNegatives));
    const std::vector<std::size_t> labels = pretrain ? std::vector<std::size_t>{} : data.labels();

    BatchStream stream(data, config, cfg.vocab_size);
    BoundedQueue<Batch> queue(4);
    std::thread producer;
    if (config.prefetch && config.steps > 0) {
        producer = std::thread([&] {
            try {
                for (std::size_t i = 0; i < config.steps; ++i) {
                    if (!queue.push(stream.next())) break;
                }
            } catch (...) {
            }
            queue.close();
        });
    }
    struct JoinGuard {
        std::thread& t;
        BoundedQueue<Batch>& q;
        ~JoinGuard() {
            q.close();
            if (t.joinable()) t.join();
        }
    } join_guard{producer, queue};
    auto next_batch = [&] {
        if (!config.prefetch) return stream.next();
        auto b = queue.pop();
        if (!b) fail(ErrorKind::State, "batch producer stopped early");
        return std::move(*b);
    };

    RunRecord record;
    auto run_eval = [&](std::size_t step) {
        if (!inputs.dev || pretrain) return;
        const double acc = evaluate(student, *inputs.dev).accuracy;
        record.dev_accuracy.emplace_back(step, acc);
        record.final_dev_accuracy = acc;
    };

    for (std::size_t step = 0; step < config.steps; ++step) {
        const double t0 = now_ms();
        Batch batch = next_batch();
        const std::size_t B = batch.tokens.batch;
        StepRecord rec;
        rec.step = step;
        rec.lr = schedule.at(step);
        std::vector<double> student_proj;

        try {
            TapeScope scope;
            ForwardOptions fwd;
            fwd.training = true;
            fwd.keep_hidden = use_crd;
            fwd.rng = &dropout_rng;
            const EncoderOutput out = student.forward(batch.tokens, fwd);

            Tensor task = pretrain ? mlm_loss(out.logits, batch.mask_rows, batch.mask_targets)
                                   : ce_loss(out.logits, batch.labels);
            Tensor kd = Tensor::scalar(0.0);
            Tensor crd = Tensor::scalar(0.0);

            if (teacher) {
                EncoderOutput t_out;
                Tensor t_summary;
                {
                    NoGradGuard no_grad;
                    ForwardOptions t_fwd;
                    t_fwd.keep_hidden = use_crd;
                    t_out = teacher->forward(batch.tokens, t_fwd);
                    if (use_crd) t_summary = summarize(t_out, config.summary).detach();
                }
                if (pretrain) {
                    kd = kd_loss(select_rows(t_out.logits, batch.mask_rows), select_rows(out.logits, batch.mask_rows),
                                 config.weights.rho);
                } else {
                    kd = kd_loss(t_out.logits, out.logits, config.weights.rho);
                }

                if (use_crd) {
                    Tensor h_t = proj_teacher->project(t_summary);
                    Tensor h_s = proj_student->project(summarize(out, config.summary));
                    std::vector<std::optional<std::vector<Tensor>>> negatives(B);
                    for (std::size_t b = 0; b < B; ++b) {
                        try {
                            const NegativePlan plan =
                                pretrain ? sample_negatives_pretrain(batch.indices, b, config.negatives, negative_rng)
                                         : sample_negatives_finetune(labels, batch.indices[b], config.negatives, negative_rng);
                            negatives[b] = bank->retrieve(plan.negative_indices);
                        } catch (const Error& e) {
                            if (e.kind() != ErrorKind::Sampling) throw;
                            ++record.crd_skipped;
                        }
                    }
                    crd = crd_loss_batch(h_t, h_s, negatives, config.weights.tau);
                    student_proj.assign(h_s.values().begin(), h_s.values().end());
                }
            }

            Tensor total = combined_loss(task, kd, crd, config.weights);
            rec.task_loss = task.item();
            rec.kd_loss = kd.item();
            rec.crd_loss = crd.item();
            rec.total = total.item();

            adam.zero_grad();
            backward(total);
            clip_grad_norm(params, config.clip_norm);
            adam.step(rec.lr);
        } catch (const Error& e) {
            if (e.kind() == ErrorKind::Numeric) {
                fail(ErrorKind::Numeric, "non-finite value at step " + std::to_string(step) + ": " + e.what());
            }
            throw;
        }

        if (bank) {
            const std::size_t m = bank->dim();
            for (std::size_t b = 0; b < B; ++b) {
                bank->update(batch.indices[b], std::span<const double>(student_proj.data() + b * m, m));
            }
        }
        rec.wall_ms = now_ms() - t0;
        record.steps.push_back(rec);
        if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 && step + 1 < config.steps) run_eval(step + 1);
    }
    run_eval(config.steps);
    if (bank) {
        record.bank_writes = bank->write_count();
        record.bank_reads = bank->read_count();
    }
    return TrainResult{std::move(record), std::move(student), std::move(proj_student), std::move(proj_teacher),
                       std::move(bank)};
}

TrainResult run_training(const TrainConfig& config) {
    config.validate();
    if (config.train_data.empty()) fail(ErrorKind::Config, "train_data is required");
    std::optional<Vocab> vocab;
    if (!config.vocab.empty()) vocab = Vocab::load(config.vocab);

    std::optional<ModelBundle> init;
    if (!config.init.empty()) init = load_model(config.init);
    std::optional<ModelBundle> teacher;
    if (stage_uses_kd(config.stage)) {
        if (config.teacher.empty()) fail(ErrorKind::Config, "stage " + to_string(config.stage) + " needs a teacher checkpoint");
        teacher = load_model(config.teacher);
    }
    const std::size_t max_len = init ? init->model.config().max_len : config.student.max_len;

    Dataset train_set = stage_is_pretrain(config.stage)
                            ? load_corpus(config.train_data, vocab ? &*vocab : nullptr, max_len)
                            : load_tsv_classification(config.train_data, vocab ? &*vocab : nullptr, max_len);
    std::optional<Dataset> dev_set;
    if (!config.dev_data.empty() && !stage_is_pretrain(config.stage)) {
        dev_set = load_tsv_classification(config.dev_data, &train_set.vocab, max_len, train_set.num_classes);
    }

    TrainInputs inputs;
    inputs.train = &train_set;
    inputs.dev = dev_set ? &*dev_set : nullptr;
    inputs.teacher = teacher ? &teacher->model : nullptr;
    inputs.init = init ? &*init : nullptr;
    TrainResult result = train(config, inputs);

    if (!config.out.empty()) {
        save_model(config.out, result.student, result.proj_student ? &*result.proj_student : nullptr,
                   result.proj_teacher ? &*result.proj_teacher : nullptr, result.bank ? &*result.bank : nullptr);
    }
    if (!config.metrics.empty()) write_metrics_csv(result.record, config.metrics);
    return result;
}

EvalResult evaluate(const TransformerEncoder& model, const Dataset& dataset, std::size_t batch_size) {
    if (dataset.size() == 0) fail(ErrorKind::Input, "evaluate: empty dataset");
    if (model.config().head != HeadKind::Classification) fail(ErrorKind::Config, "evaluate needs a classification model");
    if (dataset.num_classes != model.config().num_classes) {
        fail(ErrorKind::Config, "model predicts " + std::to_string(model.config().num_classes) + " classes, dataset has " +
                                    std::to_string(dataset.num_classes));
    }
    if (batch_size == 0) fail(ErrorKind::Parameter, "evaluate: batch size must be >= 1");

    EvalResult result;
    result.class_correct.assign(dataset.num_classes, 0);
    result.class_total.assign(dataset.num_classes, 0);
    NoGradGuard no_grad;
    ForwardOptions options;
    options.keep_hidden = false;
    for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
        const Batch batch = make_batch(dataset, idx);
        const Tensor logits = model.forward(batch.tokens, options).logits;
        const std::size_t k = logits.dim(1);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            const auto row = logits.values().subspan(b * k, k);
            const std::size_t pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            const std::size_t label = batch.labels.at(b);
            ++result.class_total.at(label);
            if (pred == label) {
                ++result.class_correct[label];
                ++result.correct;
            }
        }
    }
    result.total = dataset.size();
    result.accuracy = static_cast<double>(result.correct) / static_cast<double>(result.total);
    return result;
}

std::string metrics_csv(const RunRecord& record) {
    std::ostringstream os;
    os.precision(17);
    os << "step,task_loss,kd_loss,crd_loss,total,lr,wall_ms\n";
    for (const auto& r : record.steps) {
        os << r.step << ',' << r.task_loss << ',' << r.kd_loss << ',' << r.crd_loss << ',' << r.total << ',' << r.lr << ','
           << r.wall_ms << '\n';
    }
    return os.str();
}

void write_metrics_csv(const RunRecord& record, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write metrics to " + path);
    out << metrics_csv(record);
}

}  // namespace codir
