#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace fsk {

// Floating-point value with a widened exponent: value = mant * 2^exp2 with
// mant in [0.5, 1) (or exactly 0). Mantissa arithmetic stays in ordinary
// doubles; only the exponent range is extended. This carries kernel entries
// like e^{-3000} through the plain Sinkhorn recursion, which a raw double
// cannot represent at all.
struct XDouble {
    double mant = 0.0;
    std::int64_t exp2 = 0;

    XDouble() = default;

    static XDouble from_double(double v) {
        XDouble x;
        if (v == 0.0) return x;
        int e = 0;
        x.mant = std::frexp(v, &e);
        x.exp2 = e;
        return x;
    }

    /// e^y for arbitrary y (including y << -745 where double exp underflows).
    static XDouble exp_of(double y) {
        constexpr double kLn2 = 0.6931471805599453;
        double t = y / kLn2;
        double fl = std::floor(t);
        XDouble x;
        x.mant = std::exp2(t - fl);
        x.exp2 = static_cast<std::int64_t>(fl);
        x.normalize();
        return x;
    }

    void normalize() {
        if (mant == 0.0) { exp2 = 0; return; }
        int e = 0;
        mant = std::frexp(mant, &e);
        exp2 += e;
    }

    bool is_zero() const { return mant == 0.0; }

    double to_double() const {
        if (mant == 0.0) return 0.0;
        if (exp2 > 1024) return mant > 0 ? std::numeric_limits<double>::infinity()
                                         : -std::numeric_limits<double>::infinity();
        if (exp2 < -1073) return 0.0;
        return std::ldexp(mant, static_cast<int>(exp2));
    }

    double log() const {
        constexpr double kLn2 = 0.6931471805599453;
        return std::log(mant) + static_cast<double>(exp2) * kLn2;
    }

    friend XDouble operator*(XDouble a, XDouble b) {
        XDouble r;
        r.mant = a.mant * b.mant;
        r.exp2 = a.exp2 + b.exp2;
        r.normalize();
        return r;
    }

    friend XDouble operator/(XDouble a, XDouble b) {
        XDouble r;
        r.mant = a.mant / b.mant;
        r.exp2 = a.exp2 - b.exp2;
        r.normalize();
        return r;
    }

    friend XDouble operator+(XDouble a, XDouble b) {
        if (a.is_zero()) return b;
        if (b.is_zero()) return a;
        if (a.exp2 < b.exp2) std::swap(a, b);
        std::int64_t shift = b.exp2 - a.exp2;  // <= 0
        XDouble r;
        if (shift < -1070) {
            r = a;  // b vanishes relative to a
        } else {
            r.mant = a.mant + std::ldexp(b.mant, static_cast<int>(shift));
            r.exp2 = a.exp2;
            r.normalize();
        }
        return r;
    }

    bool less_than(const XDouble& o) const {
        // assumes both positive, the only case the solver needs
        if (is_zero()) return !o.is_zero();
        if (o.is_zero()) return false;
        if (exp2 != o.exp2) return exp2 < o.exp2;
        return mant < o.mant;
    }
};

} // namespace fsk
