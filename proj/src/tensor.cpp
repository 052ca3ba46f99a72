// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#include "headkv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "headkv/error.hpp"

namespace headkv::tensor {

Matrix::Matrix(std::size_t rows, std::size_t cols) : m_rows(rows), m_cols(cols), m_data(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    HEADKV_CHECK(m_data.size() == rows * cols, InvalidInput,
                 "matrix data length " + std::to_string(m_data.size()) + " != " + std::to_string(rows) + "x" +
                     std::to_string(cols));
    for (double v : m_data) {
        HEADKV_CHECK(std::isfinite(v), InvalidInput, "matrix entries must be finite");
    }
}

Matrix Matrix::slice_rows(std::size_t first, std::size_t count) const {
    HEADKV_CHECK(first + count <= m_rows, InvalidInput, "row slice out of range");
    std::vector<double> out(m_data.begin() + static_cast<std::ptrdiff_t>(first * m_cols),
                            m_data.begin() + static_cast<std::ptrdiff_t>((first + count) * m_cols));
    return Matrix(count, m_cols, std::move(out));
}

double inv_sqrt_dim(std::size_t head_dim) {
    HEADKV_CHECK(head_dim > 0, InvalidInput, "head_dim must be positive");
    return 1.0 / std::sqrt(static_cast<double>(head_dim));
}

Matrix matmul_scaled(const Matrix& q, const Matrix& k, double scale) {
    HEADKV_CHECK(q.cols() == k.cols(), InvalidInput,
                 "matmul_scaled: q.cols (" + std::to_string(q.cols()) + ") != k.cols (" + std::to_string(k.cols()) +
                     ")");
    Matrix out(q.rows(), k.rows());
    const std::size_t d = q.cols();
    for (std::size_t i = 0; i < q.rows(); ++i) {
        const auto qi = q.row(i);
        for (std::size_t j = 0; j < k.rows(); ++j) {
            const auto kj = k.row(j);
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                acc += qi[c] * kj[c];
            }
            out(i, j) = scale * acc;
        }
    }
    return out;
}

Matrix softmax_row_masked(const Matrix& scores, CausalMask mask, std::size_t row_offset) {
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t i = 0; i < scores.rows(); ++i) {
        const std::size_t position = row_offset + i;
        // Columns admitted by the causal mask form the prefix [0, visible).
        std::size_t visible = 0;
        while (visible < scores.cols() && mask.admits(position, visible)) {
            ++visible;
        }
        HEADKV_CHECK(visible > 0, InvalidInput, "softmax row " + std::to_string(i) + " is fully masked");

        const auto in = scores.row(i);
        const double peak = *std::max_element(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(visible));
        auto dst = out.row(i);
        double total = 0.0;
        for (std::size_t j = 0; j < visible; ++j) {
            dst[j] = std::exp(in[j] - peak);
            total += dst[j];
        }
        for (std::size_t j = 0; j < visible; ++j) {
            dst[j] /= total;
        }
    }
    return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
    HEADKV_CHECK(a.size() == b.size(), InvalidInput, "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

std::size_t argmax_row(std::span<const double> row) {
    HEADKV_CHECK(!row.empty(), InvalidInput, "argmax of an empty row");
    std::size_t best = 0;
    for (std::size_t i = 1; i < row.size(); ++i) {
        if (row[i] > row[best]) {
            best = i;
        }
    }
    return best;
}

}  // namespace headkv::tensor
