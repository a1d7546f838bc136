#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfals/data.hpp"
#include "mfals/factor_matrix.hpp"
#include "mfals/half.hpp"

namespace mfals {

enum class Precision { fp32, fp16 };

// weighted: lambda * n_u * I (the weighted-lambda objective); plain: lambda * I.
enum class Regularization { weighted, plain };

constexpr std::size_t packed_size(std::size_t f) { return f * (f + 1) / 2; }

// Row-major packed lower triangle; requires i >= j.
constexpr std::size_t packed_index(std::size_t i, std::size_t j) { return i * (i + 1) / 2 + j; }

// Tiling of the Gram accumulation. `tile` is the edge of the square sub-blocks
// of A (clamped to f); `batch` is how many fixed-side vectors are staged per pass.
struct TileConfig {
    std::size_t tile = 8;
    std::size_t batch = 32;

    void validate(std::size_t f) const;
};

// Normal-equation system for one row: packed lower-triangular A (fp32 or fp16)
// and an fp32 right-hand side. `count` is n_u; count == 0 flags an empty row.
class GramSystem {
public:
    GramSystem() = default;
    explicit GramSystem(std::size_t f);

    // Builds from a full row-major f x f matrix (lower half is read).
    static GramSystem from_dense(std::size_t f, std::span<const float> full,
                                 std::span<const float> b, Precision precision = Precision::fp32);

    std::size_t f() const { return f_; }
    Precision precision() const { return precision_; }
    std::size_t count() const { return count_; }
    bool empty() const { return count_ == 0; }
    std::size_t row() const { return row_; }

    // Symmetric element access from whichever storage is active.
    float a(std::size_t i, std::size_t j) const;

    std::span<const float> lower() const { return lower_; }
    std::span<const half_bits> lower_half() const { return lower_half_; }
    std::span<const float> b() const { return b_; }
    std::span<float> b() { return b_; }

    // Bytes of stored A: packed_size(f) * (4 or 2).
    std::size_t a_bytes() const;

    // fp32 -> fp16 conversion of the stored A; throws NumericalError on overflow.
    void pack_half();

    // Full row-major reconstruction, for diagnostics and tests.
    std::vector<float> dense() const;

    // Assembly hooks.
    void reset(std::size_t f, std::size_t row);
    std::span<float> lower_mut() { return lower_; }
    void set_count(std::size_t count) { count_ = count; }

private:
    std::size_t f_ = 0;
    std::size_t row_ = 0;
    std::size_t count_ = 0;
    Precision precision_ = Precision::fp32;
    std::vector<float> lower_;
    std::vector<half_bits> lower_half_;
    std::vector<float> b_;
};

// Packs an fp32 lower triangle into binary16; same overflow contract as GramSystem.
std::vector<half_bits> pack_half(std::span<const float> lower);

// Per-phase time of Gram assembly, in seconds: staging fixed-side vectors,
// accumulating outer products, storing (packing, shifting, fp16 conversion).
struct HermitianTimes {
    double stage = 0.0;
    double accumulate = 0.0;
    double store = 0.0;

    double total() const { return stage + accumulate + store; }
    HermitianTimes& operator+=(const HermitianTimes& other);
};

// Per-worker scratch for tiled Gram assembly. Reuse one per thread.
//
// Vectors of the fixed side are staged `batch` at a time into a contiguous
// buffer; for every lower-half tile pair (I >= J) the staged outer products are
// added into the T x T sub-block of an fp32 accumulator. Each entry of A sums
// its terms in input order, so results do not depend on tile or batch.
class GramAssembler {
public:
    GramAssembler(std::size_t f, TileConfig cfg = {});

    // A = base + sum_k w_k * fixed[cols_k] fixed[cols_k]^T + diag_shift * I.
    // Empty `weights` means all ones; empty `base` means zero.
    void assemble(std::span<const index_t> cols, std::span<const float> weights,
                  const FactorMatrix& fixed, std::span<const float> base, float diag_shift,
                  Precision precision, GramSystem& out, HermitianTimes* times = nullptr);

    std::size_t f() const { return f_; }
    const TileConfig& config() const { return cfg_; }

private:
    void accumulate_batch(std::size_t count, bool weighted);

    std::size_t f_;
    TileConfig cfg_;
    std::vector<float> stage_;
    std::vector<float> stage_weighted_;
    std::vector<float> acc_;
};

// A_u = sum over row u's nonzeros of (theta_v theta_v^T) + shift * I, where shift
// is lambda * n_u (weighted) or lambda (plain).
GramSystem get_hermitian(const CompressedView& view, std::size_t row, const FactorMatrix& theta,
                         float lambda, TileConfig cfg = {}, Precision precision = Precision::fp32,
                         Regularization reg = Regularization::weighted);

// b_u = sum over row u's nonzeros of r_uv * theta_v, accumulated in CSR order.
void get_bias(const CompressedView& view, std::size_t row, const FactorMatrix& theta,
              std::span<float> b);
std::vector<float> get_bias(const CompressedView& view, std::size_t row,
                            const FactorMatrix& theta);

// Leading-order operation counts for one half-update over `rows` systems.
// A fused multiply-add counts as two flops; bytes assume fp32 unless noted.
//   hermitian_flops   = nnz * f * (f + 1)           (lower half only)
//   hermitian_bytes   = 4 * (nnz * f + rows * f(f+1)/2) + 8 * nnz
//   bias_flops        = 2 * nnz * f
//   solve_flops_exact = rows * f^3 / 3             (Cholesky)
//   solve_flops_cg    = rows * f_s * (2 f^2 + 10 f)
//   solve_bytes_exact = rows * f(f+1)/2 * 4
//   solve_bytes_cg    = rows * (f_s + 1) * f(f+1)/2 * (4 or 2)
struct HalfUpdateCost {
    std::size_t rows = 0;
    double hermitian_flops = 0.0;
    double hermitian_bytes = 0.0;
    double bias_flops = 0.0;
    double solve_flops_exact = 0.0;
    double solve_flops_cg = 0.0;
    double solve_bytes_exact = 0.0;
    double solve_bytes_cg = 0.0;

    // Compute-to-memory ratio in flops per 4-byte word.
    double hermitian_intensity() const { return hermitian_flops / (hermitian_bytes / 4.0); }
};

struct RooflineEstimate {
    HalfUpdateCost update_x;
    HalfUpdateCost update_theta;
    // Per epoch: dot (2f) plus two simultaneous vector updates (5f each).
    double sgd_flops = 0.0;
    // Per epoch: read and write both factor rows plus the rating triple.
    double sgd_bytes = 0.0;

    double als_flops(bool cg) const;
    double sgd_intensity() const { return sgd_flops / (sgd_bytes / 4.0); }
};

HalfUpdateCost half_update_cost(std::size_t rows, std::size_t nnz, std::size_t f,
                                std::size_t cg_iters, Precision precision = Precision::fp32);

RooflineEstimate roofline_estimate(std::size_t m, std::size_t n, std::size_t nnz, std::size_t f,
                                   std::size_t cg_iters = 6,
                                   Precision precision = Precision::fp32);

}  // namespace mfals
