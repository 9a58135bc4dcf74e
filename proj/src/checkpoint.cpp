#include "codir/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "codir/error.hpp"

namespace codir {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'O', 'D', 'I', 'R', 'C', 'K', 'P'};

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) fail(ErrorKind::Io, "cannot write checkpoint " + path);
    }
    template <typename T>
    void pod(const T& v) {
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint32_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    void raw(const void* data, std::size_t bytes) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes)); }
    void finish() {
        out_.flush();
        if (!out_) fail(ErrorKind::Io, "failed writing checkpoint " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) fail(ErrorKind::Io, "cannot read checkpoint " + path);
    }
    template <typename T>
    T pod() {
        T v{};
        raw(&v, sizeof(T));
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint32_t>();
        if (n > (1u << 20)) fail(ErrorKind::Format, path_ + ": implausible string length");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    void raw(void* data, std::size_t bytes) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
        if (!in_) fail(ErrorKind::Format, path_ + ": truncated checkpoint");
    }

private:
    std::ifstream in_;
    std::string path_;
};

}  // namespace

const NamedTensorData* Checkpoint::find(const std::string& name) const {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
    return it == tensors.end() ? nullptr : &*it;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    Writer w(path);
    w.raw(kMagic, sizeof(kMagic));
    w.pod(checkpoint.version);
    w.pod(static_cast<std::uint32_t>(checkpoint.meta.size()));
    for (const auto& [k, v] : checkpoint.meta) {
        w.str(k);
        w.str(v);
    }
    w.pod(static_cast<std::uint32_t>(checkpoint.tensors.size()));
    for (const auto& t : checkpoint.tensors) {
        if (shape_numel(t.shape) != t.values.size()) fail(ErrorKind::Dimension, "checkpoint tensor " + t.name + " is inconsistent");
        w.str(t.name);
        w.pod(static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t e : t.shape) w.pod(static_cast<std::uint64_t>(e));
        w.raw(t.values.data(), t.values.size() * sizeof(double));
    }
    w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) fail(ErrorKind::Format, path + ": not a codir checkpoint");
    Checkpoint ck;
    ck.version = r.pod<std::uint32_t>();
    if (ck.version != kCheckpointVersion) {
        fail(ErrorKind::Format, path + ": unsupported checkpoint version " + std::to_string(ck.version));
    }
    const auto n_meta = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str();
        ck.meta[k] = r.str();
    }
    const auto n_tensors = r.pod<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        NamedTensorData t;
        t.name = r.str();
        const auto rank = r.pod<std::uint32_t>();
        if (rank < 1 || rank > 3) fail(ErrorKind::Format, path + ": tensor " + t.name + " has rank " + std::to_string(rank));
        for (std::uint32_t a = 0; a < rank; ++a) t.shape.push_back(static_cast<std::size_t>(r.pod<std::uint64_t>()));
        const std::size_t n = shape_numel(t.shape);
        if (n > (std::size_t{1} << 31)) fail(ErrorKind::Format, path + ": tensor " + t.name + " is implausibly large");
        t.values.resize(n);
        r.raw(t.values.data(), n * sizeof(double));
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

namespace {

NamedTensorData to_data(const std::string& name, const Tensor& t) {
    return {name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())};
}

void assign(Tensor target, const NamedTensorData& data) {
    if (data.shape != target.shape()) {
        fail(ErrorKind::Format, "checkpoint tensor " + data.name + " has shape " + shape_to_string(data.shape) +
                                    ", expected " + target.shape_string());
    }
    auto dst = target.mutable_values();
    std::copy(data.values.begin(), data.values.end(), dst.begin());
}

Tensor trainable(const NamedTensorData& data) { return Tensor::from(data.shape, data.values, true); }

}  // namespace

Checkpoint make_checkpoint(const TransformerEncoder& model, const ProjectionHead* proj_student,
                           const ProjectionHead* proj_teacher, const MemoryBank* bank) {
    Checkpoint ck;
    for (const auto& [k, v] : model.config().to_map()) ck.meta["model." + k] = v;
    for (const auto& p : model.parameters()) ck.tensors.push_back(to_data("model." + p.name, p.tensor));
    if (proj_student) ck.tensors.push_back(to_data("proj.student.weight", proj_student->weight()));
    if (proj_teacher) ck.tensors.push_back(to_data("proj.teacher.weight", proj_teacher->weight()));
    if (bank) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", bank->beta());
        ck.meta["bank.beta"] = buf;
        ck.tensors.push_back({"bank.rows", {bank->rows(), bank->dim()}, bank->values()});
    }
    return ck;
}

ModelBundle bundle_from_checkpoint(const Checkpoint& ck) {
    std::map<std::string, std::string> cfg;
    for (const auto& [k, v] : ck.meta) {
        if (k.rfind("model.", 0) == 0) cfg[k.substr(6)] = v;
    }
    if (cfg.empty()) fail(ErrorKind::Format, "checkpoint has no model configuration");
    ModelBundle bundle{TransformerEncoder(EncoderConfig::from_map(cfg), 0), {}, {}, {}};
    for (const auto& p : bundle.model.parameters()) {
        const NamedTensorData* data = ck.find("model." + p.name);
        if (!data) fail(ErrorKind::Format, "checkpoint is missing model." + p.name);
        assign(p.tensor, *data);
    }
    if (const auto* d = ck.find("proj.student.weight")) bundle.proj_student = ProjectionHead(trainable(*d));
    if (const auto* d = ck.find("proj.teacher.weight")) bundle.proj_teacher = ProjectionHead(trainable(*d));
    if (const auto* d = ck.find("bank.rows")) {
        auto it = ck.meta.find("bank.beta");
        if (it == ck.meta.end() || d->shape.size() != 2) fail(ErrorKind::Format, "malformed memory bank section");
        bundle.bank = MemoryBank(d->shape[0], d->shape[1], std::stod(it->second), d->values);
    }
    return bundle;
}

void save_model(const std::string& path, const TransformerEncoder& model, const ProjectionHead* proj_student,
                const ProjectionHead* proj_teacher, const MemoryBank* bank) {
    save_checkpoint(make_checkpoint(model, proj_student, proj_teacher, bank), path);
}

ModelBundle load_model(const std::string& path) { return bundle_from_checkpoint(load_checkpoint(path)); }

}  // namespace codir
