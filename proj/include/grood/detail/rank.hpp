#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace grood::detail {

// Smallest m in [1, n] with double(m) / double(n) >= fraction (n if none).
// Every nearest-rank quantile and every "fraction >= target" comparison in the
// library goes through this, so a count c satisfies c / n >= fraction exactly
// when c >= nearest_rank(fraction, n).
inline std::size_t nearest_rank(double fraction, std::size_t n) {
    if (n == 0) return 0;
    const double nd = static_cast<double>(n);
    double guess = std::ceil(fraction * nd);
    std::size_t m = guess < 1.0 ? 1 : (guess > nd ? n : static_cast<std::size_t>(guess));
    while (m > 1 && static_cast<double>(m - 1) / nd >= fraction) --m;
    while (m < n && static_cast<double>(m) / nd < fraction) ++m;
    return m;
}

// Nearest-rank quantile of an ascending-sorted range.
template <typename Range>
auto sorted_quantile(const Range& sorted, double q) {
    return sorted[nearest_rank(q, sorted.size()) - 1];
}

} // namespace grood::detail
