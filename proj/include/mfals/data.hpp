#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfals/factor_matrix.hpp"

namespace mfals {

using index_t = std::uint32_t;
using offset_t = std::uint64_t;

struct RatingTriple {
    index_t user = 0;
    index_t item = 0;
    float rating = 0.0f;

    friend bool operator==(const RatingTriple&, const RatingTriple&) = default;
};

// One compressed orientation (CSR or CSC). `outer` indexes rows for CSR and
// columns for CSC; `inner` holds the other coordinate.
struct CompressedView {
    std::span<const offset_t> ptr;
    std::span<const index_t> inner;
    std::span<const float> values;

    std::size_t outer_size() const { return ptr.empty() ? 0 : ptr.size() - 1; }
    std::size_t count(std::size_t i) const { return ptr[i + 1] - ptr[i]; }
    std::span<const index_t> inner_of(std::size_t i) const {
        return inner.subspan(ptr[i], count(i));
    }
    std::span<const float> values_of(std::size_t i) const {
        return values.subspan(ptr[i], count(i));
    }
};

// A rating matrix kept in both row-major and column-major compressed form.
// Immutable once built; safe to share read-only across threads.
class SparseRatings {
public:
    SparseRatings() = default;

    // Duplicated (user, item) pairs collapse with the last occurrence winning.
    static SparseRatings build(std::span<const RatingTriple> triples, std::size_t m, std::size_t n);

    // Assembles from raw arrays (binary cache); validates every invariant.
    static SparseRatings from_arrays(std::size_t m, std::size_t n,
                                     std::vector<offset_t> row_ptr, std::vector<index_t> col_idx,
                                     std::vector<float> row_val, std::vector<offset_t> col_ptr,
                                     std::vector<index_t> row_idx, std::vector<float> col_val);

    std::size_t rows() const { return m_; }
    std::size_t cols() const { return n_; }
    std::size_t nnz() const { return col_idx_.size(); }

    CompressedView by_row() const { return {row_ptr_, col_idx_, row_val_}; }
    CompressedView by_col() const { return {col_ptr_, row_idx_, col_val_}; }

    // Entries in CSR order (row-major, columns ascending).
    std::vector<RatingTriple> triples() const;

    // Checks the structural invariants; throws FormatError on violation.
    void validate() const;

private:
    std::size_t m_ = 0;
    std::size_t n_ = 0;
    std::vector<offset_t> row_ptr_{0};
    std::vector<index_t> col_idx_;
    std::vector<float> row_val_;
    std::vector<offset_t> col_ptr_{0};
    std::vector<index_t> row_idx_;
    std::vector<float> col_val_;
};

enum class Delimiter { tab, comma };

struct CooOptions {
    Delimiter delimiter = Delimiter::tab;
    bool one_based = false;
    std::optional<std::pair<std::size_t, std::size_t>> dims;
};

struct CooData {
    std::vector<RatingTriple> triples;
    std::size_t m = 0;
    std::size_t n = 0;
};

CooData parse_coo(std::istream& in, const CooOptions& options = {});
CooData read_coo_file(const std::string& path, const CooOptions& options = {});

void write_coo(std::ostream& out, std::span<const RatingTriple> triples,
               Delimiter delimiter = Delimiter::tab);

struct HoldoutSplit {
    std::vector<RatingTriple> train;
    std::vector<RatingTriple> test;
};

// |test| = round(test_fraction * total); deterministic for a given seed.
HoldoutSplit split_holdout(std::span<const RatingTriple> triples, double test_fraction,
                           std::uint64_t seed);

struct SyntheticTruth {
    FactorMatrix x_true;
    FactorMatrix theta_true;
    double noise_sigma = 0.0;
};

struct SyntheticData {
    std::vector<RatingTriple> triples;
    SyntheticTruth truth;
};

// Low-rank ratings: factors uniform[-0.5, 0.5], round(density*m*n) distinct
// positions, rating = dot + N(0, noise_sigma). Triples come out row-major.
SyntheticData gen_synthetic(std::size_t m, std::size_t n, std::size_t f, double density,
                            double noise_sigma, std::uint64_t seed);

// Binary cache: "CMFR", u32 version, u64 m, n, nnz, CSR arrays, CSC arrays.
inline constexpr std::uint32_t kRatingsCacheVersion = 1;

void write_ratings_cache(std::ostream& out, const SparseRatings& ratings);
SparseRatings read_ratings_cache(std::istream& in);
void save_ratings_cache(const std::string& path, const SparseRatings& ratings);
SparseRatings load_ratings_cache(const std::string& path);

}  // namespace mfals
