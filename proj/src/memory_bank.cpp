#include "codir/memory_bank.hpp"

#include <cmath>
#include <random>
#include <unordered_set>

#include "codir/error.hpp"

namespace codir {

namespace {

void check_beta(double beta) {
    if (!(beta > 0.0 && beta < 1.0)) fail(ErrorKind::Parameter, "memory bank beta must lie in (0, 1)");
}

}  // namespace

MemoryBank::MemoryBank(std::size_t rows, std::size_t dim, double beta, std::vector<double> values)
    : rows_(rows), dim_(dim), beta_(beta), values_(std::move(values)) {
    if (rows == 0 || dim == 0) fail(ErrorKind::Parameter, "memory bank extents must be >= 1");
    check_beta(beta);
    if (values_.size() != rows * dim) fail(ErrorKind::Dimension, "memory bank values do not match N x m");
    for (double v : values_) {
        if (!std::isfinite(v)) fail(ErrorKind::Numeric, "memory bank holds a non-finite value");
    }
}

MemoryBank MemoryBank::init(std::size_t rows, std::size_t dim, std::uint64_t seed, double beta) {
    if (rows == 0 || dim == 0) fail(ErrorKind::Parameter, "memory bank extents must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> values(rows * dim);
    for (std::size_t r = 0; r < rows; ++r) {
        double* v = values.data() + r * dim;
        double norm2 = 0.0;
        while (norm2 == 0.0) {
            norm2 = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                v[j] = normal(rng);
                norm2 += v[j] * v[j];
            }
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (std::size_t j = 0; j < dim; ++j) v[j] *= inv;
    }
    return MemoryBank(rows, dim, beta, std::move(values));
}

void MemoryBank::check_index(std::size_t index) const {
    if (index >= rows_) {
        fail(ErrorKind::Bounds, "memory bank index " + std::to_string(index) + " out of range [0, " +
                                    std::to_string(rows_) + ")");
    }
}

void MemoryBank::update(std::size_t index, std::span<const double> h) {
    check_index(index);
    if (h.size() != dim_) fail(ErrorKind::Dimension, "memory bank update of width " + std::to_string(h.size()));
    for (double v : h) {
        if (!std::isfinite(v)) fail(ErrorKind::Numeric, "memory bank update with a non-finite value");
    }
    double* r = values_.data() + index * dim_;
    for (std::size_t j = 0; j < dim_; ++j) r[j] = beta_ * r[j] + (1.0 - beta_) * h[j];
    ++writes_;
}

std::vector<Tensor> MemoryBank::retrieve(std::span<const std::size_t> indices) const {
    std::unordered_set<std::size_t> seen;
    for (std::size_t i : indices) {
        if (i >= rows_) fail(ErrorKind::Parameter, "retrieve: index " + std::to_string(i) + " out of range");
        if (!seen.insert(i).second) fail(ErrorKind::Parameter, "retrieve: duplicate index " + std::to_string(i));
    }
    std::vector<Tensor> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) {
        const double* r = values_.data() + i * dim_;
        out.push_back(Tensor::vector(std::vector<double>(r, r + dim_)));
    }
    reads_ += indices.size();
    return out;
}

std::span<const double> MemoryBank::row(std::size_t index) const {
    check_index(index);
    return {values_.data() + index * dim_, dim_};
}

}  // namespace codir
