#include "mfals/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string_view>
#include <unordered_set>

#include "binary_io.hpp"
#include "mfals/error.hpp"

namespace mfals {

namespace {

void build_csc_from_csr(std::size_t n, std::span<const offset_t> row_ptr,
                        std::span<const index_t> col_idx, std::span<const float> row_val,
                        std::vector<offset_t>& col_ptr, std::vector<index_t>& row_idx,
                        std::vector<float>& col_val) {
    const std::size_t nnz = col_idx.size();
    col_ptr.assign(n + 1, 0);
    for (index_t c : col_idx) {
        ++col_ptr[c + 1];
    }
    std::partial_sum(col_ptr.begin(), col_ptr.end(), col_ptr.begin());
    row_idx.resize(nnz);
    col_val.resize(nnz);
    std::vector<offset_t> cursor(col_ptr.begin(), col_ptr.end() - 1);
    const std::size_t m = row_ptr.size() - 1;
    // Rows are visited in order, so row indices ascend within each column.
    for (std::size_t r = 0; r < m; ++r) {
        for (offset_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            const offset_t dst = cursor[col_idx[k]]++;
            row_idx[dst] = static_cast<index_t>(r);
            col_val[dst] = row_val[k];
        }
    }
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
    field = trim(field);
    if (field.empty()) {
        return false;
    }
    if (field.front() == '+') {
        field.remove_prefix(1);
    }
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
    return ec == std::errc{} && ptr == field.data() + field.size();
}

}  // namespace

SparseRatings SparseRatings::build(std::span<const RatingTriple> triples, std::size_t m,
                                   std::size_t n) {
    for (const RatingTriple& t : triples) {
        if (t.user >= m || t.item >= n) {
            throw BoundsError("triple (" + std::to_string(t.user) + ", " + std::to_string(t.item) +
                              ") outside " + std::to_string(m) + "x" + std::to_string(n));
        }
        if (!std::isfinite(t.rating)) {
            throw DataError("non-finite rating at (" + std::to_string(t.user) + ", " +
                            std::to_string(t.item) + ")");
        }
    }

    SparseRatings out;
    out.m_ = m;
    out.n_ = n;

    // Stable counting sort by row keeps file order among duplicates.
    std::vector<offset_t> ptr(m + 1, 0);
    for (const RatingTriple& t : triples) {
        ++ptr[t.user + 1];
    }
    std::partial_sum(ptr.begin(), ptr.end(), ptr.begin());
    std::vector<std::pair<index_t, float>> scattered(triples.size());
    {
        std::vector<offset_t> cursor(ptr.begin(), ptr.end() - 1);
        for (const RatingTriple& t : triples) {
            scattered[cursor[t.user]++] = {t.item, t.rating};
        }
    }

    out.row_ptr_.assign(m + 1, 0);
    out.col_idx_.reserve(triples.size());
    out.row_val_.reserve(triples.size());
    for (std::size_t r = 0; r < m; ++r) {
        auto first = scattered.begin() + static_cast<std::ptrdiff_t>(ptr[r]);
        auto last = scattered.begin() + static_cast<std::ptrdiff_t>(ptr[r + 1]);
        std::stable_sort(first, last,
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto it = first; it != last; ++it) {
            // Last occurrence wins.
            if (it + 1 != last && (it + 1)->first == it->first) {
                continue;
            }
            out.col_idx_.push_back(it->first);
            out.row_val_.push_back(it->second);
        }
        out.row_ptr_[r + 1] = out.col_idx_.size();
    }
    out.col_idx_.shrink_to_fit();
    out.row_val_.shrink_to_fit();

    build_csc_from_csr(n, out.row_ptr_, out.col_idx_, out.row_val_, out.col_ptr_, out.row_idx_,
                       out.col_val_);
    return out;
}

SparseRatings SparseRatings::from_arrays(std::size_t m, std::size_t n, std::vector<offset_t> row_ptr,
                                         std::vector<index_t> col_idx, std::vector<float> row_val,
                                         std::vector<offset_t> col_ptr,
                                         std::vector<index_t> row_idx, std::vector<float> col_val) {
    SparseRatings out;
    out.m_ = m;
    out.n_ = n;
    out.row_ptr_ = std::move(row_ptr);
    out.col_idx_ = std::move(col_idx);
    out.row_val_ = std::move(row_val);
    out.col_ptr_ = std::move(col_ptr);
    out.row_idx_ = std::move(row_idx);
    out.col_val_ = std::move(col_val);
    out.validate();
    return out;
}

void SparseRatings::validate() const {
    const std::size_t nnz = col_idx_.size();
    if (row_ptr_.size() != m_ + 1 || col_ptr_.size() != n_ + 1) {
        throw FormatError("pointer array length does not match dimensions");
    }
    if (row_val_.size() != nnz || row_idx_.size() != nnz || col_val_.size() != nnz) {
        throw FormatError("index/value array lengths disagree");
    }
    if (row_ptr_.front() != 0 || col_ptr_.front() != 0 || row_ptr_.back() != nnz ||
        col_ptr_.back() != nnz) {
        throw FormatError("pointer arrays must start at 0 and end at nnz");
    }
    for (std::size_t r = 0; r < m_; ++r) {
        if (row_ptr_[r] > row_ptr_[r + 1]) {
            throw FormatError("row pointers decrease at row " + std::to_string(r));
        }
        for (offset_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
            if (col_idx_[k] >= n_) {
                throw FormatError("column index out of range in row " + std::to_string(r));
            }
            if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1]) {
                throw FormatError("column indices not strictly increasing in row " +
                                  std::to_string(r));
            }
        }
    }
    for (std::size_t c = 0; c < n_; ++c) {
        if (col_ptr_[c] > col_ptr_[c + 1]) {
            throw FormatError("column pointers decrease at column " + std::to_string(c));
        }
    }
    // The CSC side must be exactly the transpose of the CSR side.
    std::vector<offset_t> expect_ptr;
    std::vector<index_t> expect_idx;
    std::vector<float> expect_val;
    build_csc_from_csr(n_, row_ptr_, col_idx_, row_val_, expect_ptr, expect_idx, expect_val);
    if (expect_ptr != col_ptr_ || expect_idx != row_idx_ ||
        !std::equal(expect_val.begin(), expect_val.end(), col_val_.begin(), col_val_.end(),
                    [](float a, float b) { return std::memcmp(&a, &b, sizeof(float)) == 0; })) {
        throw FormatError("CSR and CSC views disagree");
    }
}

std::vector<RatingTriple> SparseRatings::triples() const {
    std::vector<RatingTriple> out;
    out.reserve(nnz());
    for (std::size_t r = 0; r < m_; ++r) {
        for (offset_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
            out.push_back({static_cast<index_t>(r), col_idx_[k], row_val_[k]});
        }
    }
    return out;
}

CooData parse_coo(std::istream& in, const CooOptions& options) {
    const char delim = options.delimiter == Delimiter::tab ? '\t' : ',';
    CooData out;
    std::size_t max_user = 0;
    std::size_t max_item = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view body = trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        std::string_view fields[3];
        std::string_view rest = body;
        for (int i = 0; i < 3; ++i) {
            const auto pos = rest.find(delim);
            if (i < 2 && pos == std::string_view::npos) {
                throw ParseError(line_no, "expected user, item and rating");
            }
            fields[i] = rest.substr(0, pos);
            rest = pos == std::string_view::npos ? std::string_view{} : rest.substr(pos + 1);
        }
        // Any further columns (e.g. timestamps) are ignored.

        std::uint64_t user = 0;
        std::uint64_t item = 0;
        float rating = 0.0f;
        if (!parse_number(fields[0], user)) {
            throw ParseError(line_no, "bad user index '" + std::string(fields[0]) + "'");
        }
        if (!parse_number(fields[1], item)) {
            throw ParseError(line_no, "bad item index '" + std::string(fields[1]) + "'");
        }
        if (!parse_number(fields[2], rating)) {
            throw ParseError(line_no, "bad rating '" + std::string(fields[2]) + "'");
        }
        if (!std::isfinite(rating)) {
            throw ParseError(line_no, "non-finite rating");
        }
        if (options.one_based) {
            if (user == 0 || item == 0) {
                throw ParseError(line_no, "index 0 in one-based input");
            }
            --user;
            --item;
        }
        if (user > std::numeric_limits<index_t>::max() - 1 ||
            item > std::numeric_limits<index_t>::max() - 1) {
            throw ParseError(line_no, "index exceeds 32-bit range");
        }
        if (options.dims && (user >= options.dims->first || item >= options.dims->second)) {
            throw ParseError(line_no, "index outside declared dimensions");
        }
        max_user = std::max<std::size_t>(max_user, user + 1);
        max_item = std::max<std::size_t>(max_item, item + 1);
        out.triples.push_back({static_cast<index_t>(user), static_cast<index_t>(item), rating});
    }
    if (in.bad()) {
        throw DataError("read error after line " + std::to_string(line_no));
    }
    if (options.dims) {
        out.m = options.dims->first;
        out.n = options.dims->second;
    } else {
        out.m = max_user;
        out.n = max_item;
    }
    return out;
}

CooData read_coo_file(const std::string& path, const CooOptions& options) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    return parse_coo(in, options);
}

void write_coo(std::ostream& out, std::span<const RatingTriple> triples, Delimiter delimiter) {
    const char delim = delimiter == Delimiter::tab ? '\t' : ',';
    char buf[64];
    for (const RatingTriple& t : triples) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), t.rating);
        out << t.user << delim << t.item << delim << std::string_view(buf, res.ptr - buf) << '\n';
    }
}

HoldoutSplit split_holdout(std::span<const RatingTriple> triples, double test_fraction,
                           std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("test fraction must lie strictly between 0 and 1");
    }
    const std::size_t total = triples.size();
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(total)));

    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<char> in_test(total, 0);
    for (std::size_t i = 0; i < n_test; ++i) {
        in_test[order[i]] = 1;
    }
    HoldoutSplit out;
    out.test.reserve(n_test);
    out.train.reserve(total - n_test);
    for (std::size_t i = 0; i < total; ++i) {
        (in_test[i] ? out.test : out.train).push_back(triples[i]);
    }
    return out;
}

SyntheticData gen_synthetic(std::size_t m, std::size_t n, std::size_t f, double density,
                            double noise_sigma, std::uint64_t seed) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw ConfigError("density must lie in (0, 1]");
    }
    if (f < 1) {
        throw ConfigError("factor dimension must be at least 1");
    }
    if (!(noise_sigma >= 0.0)) {
        throw ConfigError("noise sigma must be non-negative");
    }
    const std::uint64_t cells = static_cast<std::uint64_t>(m) * n;
    const double wanted = density * static_cast<double>(cells);
    if (wanted < 0.5) {
        throw ConfigError("density * m * n rounds to zero entries");
    }
    const auto k = static_cast<std::uint64_t>(std::llround(wanted));

    std::mt19937_64 rng(seed);
    SyntheticData out;
    {
        std::uniform_real_distribution<float> unit(-0.5f, 0.5f);
        FactorMatrix x(m, f);
        FactorMatrix theta(n, f);
        for (float& v : x.data()) {
            v = unit(rng);
        }
        for (float& v : theta.data()) {
            v = unit(rng);
        }
        out.truth = {std::move(x), std::move(theta), noise_sigma};
    }

    // Floyd's sampling: exactly k distinct cells without replacement.
    std::vector<std::uint64_t> cells_chosen;
    cells_chosen.reserve(k);
    if (cells <= (std::uint64_t{1} << 32)) {
        std::vector<bool> taken(cells, false);
        for (std::uint64_t j = cells - k; j < cells; ++j) {
            const std::uint64_t t = std::uniform_int_distribution<std::uint64_t>(0, j)(rng);
            const std::uint64_t pick = taken[t] ? j : t;
            taken[pick] = true;
            cells_chosen.push_back(pick);
        }
    } else {
        std::unordered_set<std::uint64_t> taken;
        taken.reserve(k);
        for (std::uint64_t j = cells - k; j < cells; ++j) {
            const std::uint64_t t = std::uniform_int_distribution<std::uint64_t>(0, j)(rng);
            const std::uint64_t pick = taken.contains(t) ? j : t;
            taken.insert(pick);
            cells_chosen.push_back(pick);
        }
    }
    std::sort(cells_chosen.begin(), cells_chosen.end());

    std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
    out.triples.reserve(k);
    for (std::uint64_t cell : cells_chosen) {
        const auto u = static_cast<index_t>(cell / n);
        const auto v = static_cast<index_t>(cell % n);
        float r = dot(out.truth.x_true.row(u), out.truth.theta_true.row(v));
        if (noise_sigma > 0.0) {
            r += static_cast<float>(noise(rng));
        }
        out.triples.push_back({u, v, r});
    }
    return out;
}

void write_ratings_cache(std::ostream& out, const SparseRatings& ratings) {
    using detail::write_le;
    using detail::write_le_array;
    out.write("CMFR", 4);
    write_le<std::uint32_t>(out, kRatingsCacheVersion);
    write_le<std::uint64_t>(out, ratings.rows());
    write_le<std::uint64_t>(out, ratings.cols());
    write_le<std::uint64_t>(out, ratings.nnz());
    const CompressedView csr = ratings.by_row();
    write_le_array(out, csr.ptr);
    write_le_array(out, csr.inner);
    write_le_array(out, csr.values);
    const CompressedView csc = ratings.by_col();
    write_le_array(out, csc.ptr);
    write_le_array(out, csc.inner);
    write_le_array(out, csc.values);
    if (!out) {
        throw DataError("write error in ratings cache");
    }
}

SparseRatings read_ratings_cache(std::istream& in) {
    using detail::read_le;
    using detail::read_le_array;
    detail::expect_magic(in, "CMFR", "ratings cache");
    const auto version = read_le<std::uint32_t>(in, "version");
    if (version != kRatingsCacheVersion) {
        throw FormatError("unsupported ratings cache version " + std::to_string(version));
    }
    const auto m = read_le<std::uint64_t>(in, "m");
    const auto n = read_le<std::uint64_t>(in, "n");
    const auto nnz = read_le<std::uint64_t>(in, "nnz");
    auto row_ptr = read_le_array<offset_t>(in, m + 1, "row pointers");
    auto col_idx = read_le_array<index_t>(in, nnz, "column indices");
    auto row_val = read_le_array<float>(in, nnz, "CSR values");
    auto col_ptr = read_le_array<offset_t>(in, n + 1, "column pointers");
    auto row_idx = read_le_array<index_t>(in, nnz, "row indices");
    auto col_val = read_le_array<float>(in, nnz, "CSC values");
    return SparseRatings::from_arrays(m, n, std::move(row_ptr), std::move(col_idx),
                                      std::move(row_val), std::move(col_ptr), std::move(row_idx),
                                      std::move(col_val));
}

void save_ratings_cache(const std::string& path, const SparseRatings& ratings) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    write_ratings_cache(out, ratings);
}

SparseRatings load_ratings_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    return read_ratings_cache(in);
}

}  // namespace mfals
