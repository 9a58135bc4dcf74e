#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "codir/tensor.hpp"

namespace codir {

// N x m store of per-example student projections with momentum update
//   row <- beta * row + (1 - beta) * h.
// Rows are plain values; nothing stored here takes part in autodiff.
class MemoryBank {
public:
    MemoryBank() = default;
    MemoryBank(std::size_t rows, std::size_t dim, double beta, std::vector<double> values);

    // Rows drawn i.i.d. uniformly on the unit sphere.
    static MemoryBank init(std::size_t rows, std::size_t dim, std::uint64_t seed, double beta = 0.5);

    void update(std::size_t index, std::span<const double> h);
    // Snapshot copies of the requested rows. Indices must be distinct.
    std::vector<Tensor> retrieve(std::span<const std::size_t> indices) const;
    std::span<const double> row(std::size_t index) const;

    std::size_t rows() const { return rows_; }
    std::size_t dim() const { return dim_; }
    double beta() const { return beta_; }
    const std::vector<double>& values() const { return values_; }

    // Instrumentation for the cost model: one write per positive, K reads per
    // retrieved negative set.
    std::size_t write_count() const { return writes_; }
    std::size_t read_count() const { return reads_; }
    void reset_counters() { writes_ = reads_ = 0; }

private:
    void check_index(std::size_t index) const;

    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    double beta_ = 0.5;
    std::vector<double> values_;
    mutable std::size_t reads_ = 0;
    std::size_t writes_ = 0;
};

}  // namespace codir
