// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace headkv::tensor {

/// Dense row-major matrix of finite doubles. Immutable once built, apart from
/// the explicit element setter used by builders.
class Matrix {
public:
    Matrix() = default;

    /// Zero-filled rows x cols matrix.
    Matrix(std::size_t rows, std::size_t cols);

    /// Takes ownership of row-major data; throws InvalidInput if the length
    /// does not equal rows*cols or any value is not finite.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    bool empty() const noexcept { return m_data.empty(); }

    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }
    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }

    std::span<const double> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<double> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }

    const std::vector<double>& data() const noexcept { return m_data; }

    /// Copy of the row range [first, first + count).
    Matrix slice_rows(std::size_t first, std::size_t count) const;

    bool operator==(const Matrix&) const = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// Causal admissibility: query at absolute position i may see key j iff j <= i.
struct CausalMask {
    static constexpr bool admits(std::size_t query_position, std::size_t key_position) noexcept {
        return key_position <= query_position;
    }
};

/// 1/sqrt(d).
double inv_sqrt_dim(std::size_t head_dim);

/// result[i][j] = scale * <q_i, k_j>. Shapes (q.rows x k.rows).
Matrix matmul_scaled(const Matrix& q, const Matrix& k, double scale);

/// Row softmax under the causal mask. Row i of `scores` is the query at
/// absolute position row_offset + i; columns are absolute key positions.
/// Masked entries are exactly 0. Stabilized by subtracting the row max.
Matrix softmax_row_masked(const Matrix& scores, CausalMask mask, std::size_t row_offset);

/// Plain inner product; spans must have equal length.
double dot(std::span<const double> a, std::span<const double> b);

/// Index of the maximum; lowest index wins ties.
std::size_t argmax_row(std::span<const double> row);

}  // namespace headkv::tensor
