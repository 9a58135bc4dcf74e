// Python bindings for the codir core.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "codir/checkpoint.hpp"
#include "codir/error.hpp"
#include "codir/experiments.hpp"
#include "codir/losses.hpp"
#include "codir/memory_bank.hpp"
#include "codir/ops.hpp"
#include "codir/sampling.hpp"
#include "codir/trainer.hpp"

namespace py = pybind11;
using namespace codir;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

Array rows_array(std::span<const double> values, std::size_t rows, std::size_t cols) {
    Array out({static_cast<py::ssize_t>(rows), static_cast<py::ssize_t>(cols)});
    std::copy(values.begin(), values.end(), out.mutable_data());
    return out;
}

std::vector<Tensor> to_tensors(const std::vector<Array>& arrays) {
    std::vector<Tensor> out;
    for (const auto& a : arrays) out.push_back(to_tensor(a));
    return out;
}

TrainConfig make_config(const std::string& stage, const std::map<std::string, std::string>& keys) {
    TrainConfig config = TrainConfig::defaults_for(parse_stage(stage));
    KeyValues values = keys;
    values.erase("stage");
    config.apply_user_keys(values);
    config.validate();
    return config;
}

py::dict record_dict(const RunRecord& r) {
    py::dict d;
    py::list steps;
    for (const auto& s : r.steps) {
        py::dict row;
        row["step"] = s.step;
        row["task_loss"] = s.task_loss;
        row["kd_loss"] = s.kd_loss;
        row["crd_loss"] = s.crd_loss;
        row["total"] = s.total;
        row["lr"] = s.lr;
        steps.append(row);
    }
    d["steps"] = steps;
    d["dev_accuracy"] = r.dev_accuracy;
    d["final_dev_accuracy"] = r.final_dev_accuracy;
    d["crd_skipped"] = r.crd_skipped;
    d["bank_writes"] = r.bank_writes;
    d["bank_reads"] = r.bank_reads;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Contrastive distillation on intermediate representations";

    // CodirError carries the error kind ("dimension", "config", ...) as .kind.
    py::exception<Error> error(m, "CodirError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object type = py::module_::import("codir._core").attr("CodirError");
            py::object exc = type(std::string(to_string(e.kind())) + ": " + e.what());
            exc.attr("kind") = std::string(to_string(e.kind()));
            PyErr_SetObject(type.ptr(), exc.ptr());
        }
    });

    // Losses and ops on plain arrays.
    m.def(
        "kd_loss", [](const Array& zt, const Array& zs, double rho) { return kd_loss(to_tensor(zt), to_tensor(zs), rho).item(); },
        py::arg("teacher_logits"), py::arg("student_logits"), py::arg("rho") = 1.0);
    m.def(
        "crd_loss",
        [](const Array& ht, const Array& hs, const std::vector<Array>& negatives, double tau) {
            return crd_loss(to_tensor(ht), to_tensor(hs), to_tensors(negatives), tau).item();
        },
        py::arg("h_teacher"), py::arg("h_student"), py::arg("negatives"), py::arg("tau") = 0.07);
    m.def(
        "softmax", [](const Array& z, double temperature) { return to_array(softmax_rows(to_tensor(z), temperature)); },
        py::arg("logits"), py::arg("temperature") = 1.0);
    m.def("cosine", [](const Array& u, const Array& v) { return cosine_sim(to_tensor(u), to_tensor(v)).item(); });

    py::class_<MemoryBank>(m, "MemoryBank")
        .def(py::init([](std::size_t rows, std::size_t dim, std::uint64_t seed, double beta) {
                 return MemoryBank::init(rows, dim, seed, beta);
             }),
             py::arg("rows"), py::arg("dim"), py::arg("seed") = 1, py::arg("beta") = 0.5)
        .def("update", [](MemoryBank& b, std::size_t i, const std::vector<double>& h) { b.update(i, h); })
        .def("row", [](const MemoryBank& b, std::size_t i) { return rows_array(b.row(i), 1, b.dim()).attr("reshape")(-1); })
        .def("retrieve",
             [](MemoryBank& b, const std::vector<std::size_t>& idx) {
                 std::vector<double> flat;
                 for (const Tensor& t : b.retrieve(idx)) flat.insert(flat.end(), t.values().begin(), t.values().end());
                 return rows_array(flat, idx.size(), b.dim());
             })
        .def_property_readonly("rows", &MemoryBank::rows)
        .def_property_readonly("dim", &MemoryBank::dim)
        .def_property_readonly("beta", &MemoryBank::beta)
        .def_property_readonly("write_count", &MemoryBank::write_count)
        .def_property_readonly("read_count", &MemoryBank::read_count);

    m.def(
        "sample_negatives_finetune",
        [](const std::vector<std::size_t>& labels, std::size_t positive, std::size_t k, std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return sample_negatives_finetune(labels, positive, k, rng).negative_indices;
        },
        py::arg("labels"), py::arg("positive_index"), py::arg("k"), py::arg("seed") = 1);
    m.def(
        "sample_negatives_pretrain",
        [](const std::vector<std::size_t>& batch, std::size_t position, std::size_t k, std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return sample_negatives_pretrain(batch, position, k, rng).negative_indices;
        },
        py::arg("batch_indices"), py::arg("positive_position"), py::arg("k"), py::arg("seed") = 1);
    m.def(
        "mask_tokens",
        [](const std::vector<std::size_t>& tokens, double rate, std::uint64_t seed) {
            MaskingOptions o;
            o.rate = rate;
            o.mask_id = Vocab::kMask;
            o.special_ids = Vocab::special_ids();
            std::mt19937_64 rng(seed);
            const MaskingPlan p = make_masking_plan(tokens, o, rng);
            return py::make_tuple(p.masked_tokens, p.positions, p.targets);
        },
        py::arg("tokens"), py::arg("rate") = 0.15, py::arg("seed") = 1,
        "Returns (masked_tokens, positions, targets).");

    // Data.
    py::class_<Dataset>(m, "Dataset")
        .def("__len__", &Dataset::size)
        .def_readonly("num_classes", &Dataset::num_classes)
        .def_property_readonly("labels", &Dataset::labels)
        .def_property_readonly("vocab_size", [](const Dataset& d) { return d.vocab.size(); })
        .def_property_readonly("vocab", [](const Dataset& d) { return d.vocab.tokens(); })
        .def("ids", [](const Dataset& d, std::size_t i) { return d.examples.at(i).ids; })
        .def("save_tsv", [](const Dataset& d, const std::string& path) { save_tsv_classification(d, path); })
        .def("save_vocab", [](const Dataset& d, const std::string& path) { d.vocab.save(path); });

    m.def(
        "generate_synthetic",
        [](std::size_t n, std::uint64_t seed, const std::map<std::string, std::string>& spec) {
            return generate_synthetic(SyntheticSpec::from_map(spec), n, seed);
        },
        py::arg("n"), py::arg("seed") = 1, py::arg("spec") = std::map<std::string, std::string>{},
        "Synthetic classification set or corpus; spec takes [synthetic] keys as strings.");
    m.def(
        "load_tsv",
        [](const std::string& path, const std::string& vocab_path) {
            if (vocab_path.empty()) return load_tsv_classification(path);
            const Vocab vocab = Vocab::load(vocab_path);
            return load_tsv_classification(path, &vocab);
        },
        py::arg("path"), py::arg("vocab") = "");

    // Models.
    py::class_<TransformerEncoder>(m, "Encoder")
        .def(py::init([](const std::map<std::string, std::string>& config, std::uint64_t seed) {
                 return TransformerEncoder(EncoderConfig::from_map(config), seed);
             }),
             py::arg("config") = std::map<std::string, std::string>{}, py::arg("seed") = 1)
        .def_property_readonly("config", [](const TransformerEncoder& e) { return e.config().to_map(); })
        .def_property_readonly("parameter_count", [](const TransformerEncoder& e) { return count_parameters(e); })
        .def("parameter", [](const TransformerEncoder& e, const std::string& name) { return to_array(e.parameter(name)); })
        .def("parameter_names",
             [](const TransformerEncoder& e) {
                 std::vector<std::string> names;
                 for (const auto& p : e.parameters()) names.push_back(p.name);
                 return names;
             })
        .def(
            "logits",
            [](const TransformerEncoder& e, const std::vector<std::vector<std::size_t>>& sequences) {
                TokenBatch b;
                b.batch = sequences.size();
                for (const auto& s : sequences) b.seq_len = std::max(b.seq_len, s.size());
                for (const auto& s : sequences) {
                    b.valid_lens.push_back(s.size());
                    b.ids.insert(b.ids.end(), s.begin(), s.end());
                    b.ids.resize(b.ids.size() + b.seq_len - s.size(), Vocab::kPad);
                }
                NoGradGuard no_grad;
                ForwardOptions o;
                o.keep_hidden = false;
                return to_array(e.forward(b, o).logits);
            },
            "Eval-mode logits for a list of token-id sequences.")
        .def("save", [](const TransformerEncoder& e, const std::string& path) { save_model(path, e); });

    m.def("load_model", [](const std::string& path) { return load_model(path).model; });

    m.def(
        "evaluate",
        [](const TransformerEncoder& model, const Dataset& data, std::size_t batch) {
            const EvalResult r = evaluate(model, data, batch);
            py::dict d;
            d["accuracy"] = r.accuracy;
            d["correct"] = r.correct;
            d["total"] = r.total;
            d["class_correct"] = r.class_correct;
            d["class_total"] = r.class_total;
            return d;
        },
        py::arg("model"), py::arg("data"), py::arg("batch_size") = 64);

    m.def(
        "train",
        [](const std::string& stage, const Dataset& train_set, const Dataset* dev, const TransformerEncoder* teacher,
           const TransformerEncoder* init, const std::map<std::string, std::string>& config) {
            const TrainConfig c = make_config(stage, config);
            std::optional<ModelBundle> bundle;
            if (init) bundle = ModelBundle{*init, std::nullopt, std::nullopt, std::nullopt};
            TrainInputs in;
            in.train = &train_set;
            in.dev = dev;
            in.teacher = teacher;
            in.init = bundle ? &*bundle : nullptr;
            TrainResult r = [&] {
                py::gil_scoped_release release;
                return codir::train(c, in);
            }();
            return py::make_tuple(std::move(r.student), record_dict(r.record));
        },
        py::arg("stage"), py::arg("train"), py::arg("dev") = nullptr, py::arg("teacher") = nullptr,
        py::arg("init") = nullptr, py::arg("config") = std::map<std::string, std::string>{},
        "Runs one stage; config takes the configuration-file keys as strings. Returns (model, record).");

    m.def(
        "grad_check",
        [](std::size_t max_coords, bool crd_only, std::uint64_t seed) {
            CodirGradSetup s;
            s.max_coords_per_tensor = max_coords;
            s.crd_only = crd_only;
            s.seed = seed;
            const CodirGradReport r = grad_check_codir(s);
            py::dict d;
            d["max_rel_error"] = r.check.max_rel_error;
            d["teacher_max_abs_grad"] = r.teacher_max_abs_grad;
            d["loss"] = r.loss;
            d["seconds"] = r.seconds;
            return d;
        },
        py::arg("max_coords") = 64, py::arg("crd_only") = false, py::arg("seed") = 7);

    m.def(
        "bench",
        [](const TransformerEncoder& teacher, const TransformerEncoder& student, std::size_t batch, std::size_t seq_len,
           std::size_t reps) {
            const BenchResult r = bench_inference(teacher, student, batch, seq_len, reps);
            return py::make_tuple(r.teacher_ms, r.student_ms, r.speedup);
        },
        py::arg("teacher"), py::arg("student"), py::arg("batch") = 8, py::arg("seq_len") = 32, py::arg("reps") = 5,
        "Returns (teacher_ms, student_ms, speedup).");
}
