#include "mfals/gram.hpp"

#include <algorithm>
#include <chrono>
#include <string>

#include "mfals/error.hpp"

namespace mfals {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point start) {
    return std::chrono::duration<double>(clock_type::now() - start).count();
}

}  // namespace

void TileConfig::validate(std::size_t f) const {
    (void)f;
    if (tile < 1) {
        throw ConfigError("tile must be at least 1");
    }
    if (batch < 1) {
        throw ConfigError("batch must be at least 1");
    }
}

GramSystem::GramSystem(std::size_t f) { reset(f, 0); }

void GramSystem::reset(std::size_t f, std::size_t row) {
    f_ = f;
    row_ = row;
    count_ = 0;
    precision_ = Precision::fp32;
    lower_.assign(packed_size(f), 0.0f);
    lower_half_.clear();
    b_.assign(f, 0.0f);
}

GramSystem GramSystem::from_dense(std::size_t f, std::span<const float> full,
                                  std::span<const float> b, Precision precision) {
    if (full.size() != f * f || b.size() != f) {
        throw ConfigError("dense system dimensions do not match f");
    }
    GramSystem out(f);
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            out.lower_[packed_index(i, j)] = full[i * f + j];
        }
    }
    std::copy(b.begin(), b.end(), out.b_.begin());
    out.count_ = 1;
    if (precision == Precision::fp16) {
        out.pack_half();
    }
    return out;
}

float GramSystem::a(std::size_t i, std::size_t j) const {
    const std::size_t k = i >= j ? packed_index(i, j) : packed_index(j, i);
    return precision_ == Precision::fp32 ? lower_[k] : half_to_float(lower_half_[k]);
}

std::size_t GramSystem::a_bytes() const {
    return precision_ == Precision::fp32 ? lower_.size() * sizeof(float)
                                         : lower_half_.size() * sizeof(half_bits);
}

void GramSystem::pack_half() {
    if (precision_ == Precision::fp16) {
        return;
    }
    lower_half_.resize(lower_.size());
    convert_to_half(lower_, lower_half_);
    lower_.clear();
    precision_ = Precision::fp16;
}

std::vector<float> GramSystem::dense() const {
    std::vector<float> out(f_ * f_);
    for (std::size_t i = 0; i < f_; ++i) {
        for (std::size_t j = 0; j < f_; ++j) {
            out[i * f_ + j] = a(i, j);
        }
    }
    return out;
}

std::vector<half_bits> pack_half(std::span<const float> lower) {
    std::vector<half_bits> out(lower.size());
    convert_to_half(lower, out);
    return out;
}

HermitianTimes& HermitianTimes::operator+=(const HermitianTimes& other) {
    stage += other.stage;
    accumulate += other.accumulate;
    store += other.store;
    return *this;
}

GramAssembler::GramAssembler(std::size_t f, TileConfig cfg) : f_(f), cfg_(cfg) {
    cfg_.validate(f);
    cfg_.tile = std::min(cfg_.tile, std::max<std::size_t>(f, 1));
    stage_.resize(cfg_.batch * f_);
    stage_weighted_.resize(cfg_.batch * f_);
    acc_.resize(f_ * f_);
}

void GramAssembler::accumulate_batch(std::size_t count, bool weighted) {
    const std::size_t f = f_;
    const std::size_t tile = cfg_.tile;
    const float* right = stage_.data();
    const float* left = weighted ? stage_weighted_.data() : stage_.data();
    float* acc = acc_.data();

    for (std::size_t i0 = 0; i0 < f; i0 += tile) {
        const std::size_t i1 = std::min(i0 + tile, f);
        for (std::size_t j0 = 0; j0 <= i0; j0 += tile) {
            const std::size_t j1 = std::min(j0 + tile, f);
            const bool diagonal = j0 == i0;
            // Sub-block (i0, j0) += sum over staged s of left_s[I] * right_s[J]^T.
            for (std::size_t s = 0; s < count; ++s) {
                const float* l = left + s * f;
                const float* r = right + s * f;
                for (std::size_t i = i0; i < i1; ++i) {
                    const float li = l[i];
                    const std::size_t jend = diagonal ? i + 1 : j1;
                    float* arow = acc + i * f;
#pragma omp simd
                    for (std::size_t j = j0; j < jend; ++j) {
                        arow[j] += li * r[j];
                    }
                }
            }
        }
    }
}

void GramAssembler::assemble(std::span<const index_t> cols, std::span<const float> weights,
                             const FactorMatrix& fixed, std::span<const float> base,
                             float diag_shift, Precision precision, GramSystem& out,
                             HermitianTimes* times) {
    const std::size_t f = f_;
    if (fixed.f() != f) {
        throw ConfigError("fixed factor matrix has f=" + std::to_string(fixed.f()) +
                          ", assembler expects " + std::to_string(f));
    }
    const bool weighted = !weights.empty();
    const std::size_t row = out.row();
    out.reset(f, row);
    std::fill(acc_.begin(), acc_.end(), 0.0f);

    const std::size_t batch = cfg_.batch;
    for (std::size_t start = 0; start < cols.size(); start += batch) {
        const std::size_t count = std::min(batch, cols.size() - start);

        auto t0 = times ? clock_type::now() : clock_type::time_point{};
        for (std::size_t s = 0; s < count; ++s) {
            const auto src = fixed.row(cols[start + s]);
            std::copy(src.begin(), src.end(), stage_.begin() + static_cast<std::ptrdiff_t>(s * f));
            if (weighted) {
                const float w = weights[start + s];
                float* dst = stage_weighted_.data() + s * f;
                for (std::size_t k = 0; k < f; ++k) {
                    dst[k] = w * src[k];
                }
            }
        }
        if (times) {
            times->stage += seconds_since(t0);
            t0 = clock_type::now();
        }

        accumulate_batch(count, weighted);
        if (times) {
            times->accumulate += seconds_since(t0);
        }
    }

    const auto t0 = times ? clock_type::now() : clock_type::time_point{};
    std::span<float> lower = out.lower_mut();
    for (std::size_t i = 0; i < f; ++i) {
        const float* arow = acc_.data() + i * f;
        float* dst = lower.data() + packed_index(i, 0);
        if (base.empty()) {
            std::copy(arow, arow + i + 1, dst);
        } else {
            const float* brow = base.data() + packed_index(i, 0);
            for (std::size_t j = 0; j <= i; ++j) {
                dst[j] = brow[j] + arow[j];
            }
        }
        dst[i] += diag_shift;
    }
    out.set_count(cols.size());
    if (precision == Precision::fp16) {
        out.pack_half();
    }
    if (times) {
        times->store += seconds_since(t0);
    }
}

GramSystem get_hermitian(const CompressedView& view, std::size_t row, const FactorMatrix& theta,
                         float lambda, TileConfig cfg, Precision precision, Regularization reg) {
    if (lambda < 0.0f) {
        throw ConfigError("lambda must be non-negative");
    }
    const auto cols = view.inner_of(row);
    const float shift = reg == Regularization::weighted
                            ? lambda * static_cast<float>(cols.size())
                            : lambda;
    GramAssembler assembler(theta.f(), cfg);
    GramSystem out;
    out.reset(theta.f(), row);
    assembler.assemble(cols, {}, theta, {}, shift, precision, out);
    return out;
}

void get_bias(const CompressedView& view, std::size_t row, const FactorMatrix& theta,
              std::span<float> b) {
    const std::size_t f = theta.f();
    std::fill(b.begin(), b.end(), 0.0f);
    const auto cols = view.inner_of(row);
    const auto vals = view.values_of(row);
    for (std::size_t k = 0; k < cols.size(); ++k) {
        const float r = vals[k];
        const float* t = theta.row(cols[k]).data();
#pragma omp simd
        for (std::size_t d = 0; d < f; ++d) {
            b[d] += r * t[d];
        }
    }
}

std::vector<float> get_bias(const CompressedView& view, std::size_t row,
                            const FactorMatrix& theta) {
    std::vector<float> b(theta.f());
    get_bias(view, row, theta, b);
    return b;
}

double RooflineEstimate::als_flops(bool cg) const {
    const auto side = [cg](const HalfUpdateCost& c) {
        return c.hermitian_flops + c.bias_flops + (cg ? c.solve_flops_cg : c.solve_flops_exact);
    };
    return side(update_x) + side(update_theta);
}

HalfUpdateCost half_update_cost(std::size_t rows, std::size_t nnz, std::size_t f,
                                std::size_t cg_iters, Precision precision) {
    const double fd = static_cast<double>(f);
    const double nz = static_cast<double>(nnz);
    const double r = static_cast<double>(rows);
    const double packed = static_cast<double>(packed_size(f));
    const double a_elem_bytes = precision == Precision::fp16 ? 2.0 : 4.0;

    HalfUpdateCost c;
    c.rows = rows;
    c.hermitian_flops = nz * fd * (fd + 1.0);
    c.hermitian_bytes = 4.0 * (nz * fd + r * packed) + 8.0 * nz;
    c.bias_flops = 2.0 * nz * fd;
    c.solve_flops_exact = r * fd * fd * fd / 3.0;
    c.solve_flops_cg = r * static_cast<double>(cg_iters) * (2.0 * fd * fd + 10.0 * fd);
    c.solve_bytes_exact = r * packed * 4.0;
    c.solve_bytes_cg = r * static_cast<double>(cg_iters + 1) * packed * a_elem_bytes;
    return c;
}

RooflineEstimate roofline_estimate(std::size_t m, std::size_t n, std::size_t nnz, std::size_t f,
                                   std::size_t cg_iters, Precision precision) {
    if (m == 0 || n == 0 || nnz == 0 || f == 0) {
        throw ConfigError("roofline inputs must be positive");
    }
    RooflineEstimate e;
    e.update_x = half_update_cost(m, nnz, f, cg_iters, precision);
    e.update_theta = half_update_cost(n, nnz, f, cg_iters, precision);
    const double fd = static_cast<double>(f);
    const double nz = static_cast<double>(nnz);
    e.sgd_flops = nz * 12.0 * fd;
    e.sgd_bytes = nz * (16.0 * fd + 12.0);
    return e;
}

}  // namespace mfals
