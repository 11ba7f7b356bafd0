#pragma once

#include <cstdint>
#include <string>

namespace mmlens {

// Pooled success rate with its score-interval bounds, all in percentage
// points. p_bar is the raw rate k/n; the deltas are distances from p_bar to
// the interval endpoints, so [p_bar - delta_lo, p_bar + delta_hi] stays in
// [0, 100] by construction.
struct WilsonInterval {
    double p_bar = 0.0;
    double delta_lo = 0.0;
    double delta_hi = 0.0;
    long n = 0;
    double z = 1.96;
};

// Score interval: bounds = (p + z^2/2n -/+ z*sqrt(p(1-p)/n + z^2/4n^2)) / (1 + z^2/n).
// Throws EmptyPool when n == 0.
WilsonInterval wilson(long successes, long n, double z = 1.96);

// "100.0_{-1.2}^{+0.0}" — deltas rounded half-away-from-zero to one decimal,
// only here at render time.
std::string render_cell(const WilsonInterval& w);

} // namespace mmlens
