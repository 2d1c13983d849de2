#include <algorithm>
#include <cmath>
#include <limits>
#include <stack>

#include "vpv/error.hpp"
#include "vpv/runtime.hpp"

namespace vpv {

TemporalSegment locate_temporal_segment(const std::vector<double> &h) {
    if (h.empty()) {
        throw EmptyInput("no frame scores");
    }
    const std::size_t n = h.size();
    for (double x : h) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument("frame scores must be finite");
        }
    }

    // With no positive score every interval longer than one frame scores no better than its
    // best single frame, so the answer is the earliest maximum.
    const auto best = std::max_element(h.begin(), h.end());
    if (!(*best > 0.0)) {
        const auto i = static_cast<std::size_t>(best - h.begin());
        return {i, i, *best};
    }

    // For a positive minimum the optimal interval is the maximal run around that frame in which
    // it stays the minimum: left[i] .. right[i] bounded by the nearest strictly smaller scores.
    std::vector<std::size_t> left(n), right(n);
    std::vector<std::size_t> stack;
    stack.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        while (!stack.empty() && h[stack.back()] >= h[i]) {
            stack.pop_back();
        }
        left[i] = stack.empty() ? 0 : stack.back() + 1;
        stack.push_back(i);
    }
    stack.clear();
    for (std::size_t k = n; k-- > 0;) {
        while (!stack.empty() && h[stack.back()] >= h[k]) {
            stack.pop_back();
        }
        right[k] = stack.empty() ? n - 1 : stack.back() - 1;
        stack.push_back(k);
    }

    TemporalSegment out{0, 0, -std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i < n; ++i) {
        if (!(h[i] > 0.0)) {
            continue;
        }
        const double area = static_cast<double>(right[i] - left[i] + 1) * h[i];
        const bool better = area > out.score || (area == out.score && (left[i] < out.start ||
                                                                       (left[i] == out.start && right[i] < out.end)));
        if (better) {
            out = {left[i], right[i], area};
        }
    }
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> max_weight_assignment(const std::vector<std::vector<double>> &weights) {
    const std::size_t rows = weights.size();
    if (rows == 0) {
        return {};
    }
    const std::size_t cols = weights[0].size();
    for (const auto &r : weights) {
        if (r.size() != cols) {
            throw DimensionMismatch("ragged weight matrix");
        }
    }
    if (cols == 0) {
        return {};
    }

    // Hungarian algorithm with potentials on an n x m cost matrix, n <= m (O(n^2 m)).
    const bool transposed = rows > cols;
    const std::size_t n = transposed ? cols : rows;
    const std::size_t m = transposed ? rows : cols;
    auto cost = [&](std::size_t i, std::size_t j) { // 1-based
        return transposed ? -weights[j - 1][i - 1] : -weights[i - 1][j - 1];
    };

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) {
                    continue;
                }
                const double cur = cost(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t j = 1; j <= m; ++j) {
        if (p[j] != 0) {
            if (transposed) {
                out.emplace_back(j - 1, p[j] - 1);
            } else {
                out.emplace_back(p[j] - 1, j - 1);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

PartAlignment part_alignment_score(const std::vector<std::vector<double>> &text_parts,
                                   const std::vector<std::vector<double>> &visual_parts) {
    if (text_parts.empty() || visual_parts.empty()) {
        throw EmptyInput("part alignment needs parts on both sides");
    }
    const std::size_t dim = text_parts[0].size();
    auto check = [&](const std::vector<std::vector<double>> &side) {
        for (const auto &v : side) {
            if (v.size() != dim) {
                throw DimensionMismatch("part embeddings differ in dimension");
            }
        }
    };
    check(text_parts);
    check(visual_parts);

    std::vector<std::vector<double>> sim(text_parts.size(), std::vector<double>(visual_parts.size()));
    for (std::size_t i = 0; i < text_parts.size(); ++i) {
        for (std::size_t j = 0; j < visual_parts.size(); ++j) {
            sim[i][j] = inner_product(text_parts[i], visual_parts[j]);
        }
    }
    PartAlignment out;
    out.matching = max_weight_assignment(sim);
    double total = 0.0;
    for (const auto &[i, j] : out.matching) {
        total += sim[i][j];
    }
    out.score = total / static_cast<double>(out.matching.size());
    return out;
}

} // namespace vpv
