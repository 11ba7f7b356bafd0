#include "mmlens/wilson.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmlens/errors.hpp"

namespace mmlens {

WilsonInterval wilson(long successes, long n, double z) {
    if (n == 0) throw EmptyPool("wilson interval over an empty pool");
    if (successes < 0 || successes > n)
        throw EmptyPool("successes must lie in [0, n]");

    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / nn;
    const double center = p + z2 / (2.0 * nn);
    const double radius = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn));
    double lo = (center - radius) / denom;
    double hi = (center + radius) / denom;
    if (lo < 0.0) lo = 0.0;
    if (hi > 1.0) hi = 1.0;

    WilsonInterval w;
    w.p_bar = 100.0 * p;
    w.delta_lo = std::max(0.0, w.p_bar - 100.0 * lo);
    w.delta_hi = std::max(0.0, 100.0 * hi - w.p_bar);
    w.n = n;
    w.z = z;
    return w;
}

namespace {

// one-decimal fixed string, rounding half away from zero
std::string one_decimal(double v) {
    long long tenths = std::llround(v * 10.0);
    if (tenths < 0) tenths = 0;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld.%lld", tenths / 10, tenths % 10);
    return buf;
}

} // namespace

std::string render_cell(const WilsonInterval& w) {
    return one_decimal(w.p_bar) + "_{-" + one_decimal(w.delta_lo) + "}^{+" +
           one_decimal(w.delta_hi) + "}";
}

} // namespace mmlens
