#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "codir/encoder.hpp"
#include "codir/losses.hpp"
#include "codir/memory_bank.hpp"

namespace codir {

// Binary container, little-endian:
//   magic "CODIRCKP" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u32 rank, rank x u64 extent, f64 values...)
// where str is u32 length followed by the bytes. Tensor order is preserved.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensorData {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::map<std::string, std::string> meta;
    std::vector<NamedTensorData> tensors;

    const NamedTensorData* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Sections: "model.*" (config in meta, parameters in model order), optional
// "proj.student.weight", "proj.teacher.weight", and "bank.rows" with
// bank.beta in meta.
struct ModelBundle {
    TransformerEncoder model;
    std::optional<ProjectionHead> proj_student;
    std::optional<ProjectionHead> proj_teacher;
    std::optional<MemoryBank> bank;
};

Checkpoint make_checkpoint(const TransformerEncoder& model, const ProjectionHead* proj_student = nullptr,
                           const ProjectionHead* proj_teacher = nullptr, const MemoryBank* bank = nullptr);
ModelBundle bundle_from_checkpoint(const Checkpoint& checkpoint);

void save_model(const std::string& path, const TransformerEncoder& model, const ProjectionHead* proj_student = nullptr,
                const ProjectionHead* proj_teacher = nullptr, const MemoryBank* bank = nullptr);
ModelBundle load_model(const std::string& path);

}  // namespace codir
