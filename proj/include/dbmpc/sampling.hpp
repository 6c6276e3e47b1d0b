#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "dbmpc/lti.hpp"
#include "dbmpc/matrix.hpp"
#include "dbmpc/rng.hpp"

namespace dbmpc {

/// Seeded generators for batch property runs. All draw exclusively from the
/// supplied SplitMix64 stream, so a (seed, call-order) pair fixes every value.

inline Mat random_vector(SplitMix64& rng, std::size_t n, double mag = 1.0) {
    Mat v(n, 1);
    for (std::size_t i = 0; i < n; ++i) v(i, 0) = rng.symmetric(mag);
    return v;
}

inline Mat random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols, double mag = 1.0) {
    Mat m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.symmetric(mag);
    return m;
}

/// Symmetric positive definite matrix M'M + I.
inline Mat random_spd(SplitMix64& rng, std::size_t n, double mag = 1.0) {
    const Mat m = random_matrix(rng, n, n, mag);
    return m.transpose() * m + Mat::identity(n);
}

/// Max-norm condition proxy |S| * |S^{-1}| of a square invertible matrix.
inline double condition_proxy(const Mat& s) {
    try {
        const Mat inv = lu_solve(s, Mat::identity(s.rows()));
        return s.max_abs() * inv.max_abs();
    } catch (const SingularMatrix&) {
        return std::numeric_limits<double>::infinity();
    }
}

/// Controllable pair with a controllability matrix whose condition proxy is
/// below cond_cap; draws are rejected until one qualifies. The cap keeps the
/// deadbeat gain well scaled so closed-loop roundoff stays far below the
/// property tolerances.
inline LinearSystem random_controllable_system(SplitMix64& rng, std::size_t n,
                                               double cond_cap = 1e4) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const Mat a = random_matrix(rng, n, n);
        const Mat b = random_matrix(rng, n, 1);
        try {
            LinearSystem sys(a, b);
            if (condition_proxy(controllability_matrix(sys)) <= cond_cap) return sys;
        } catch (const UncontrollablePair&) {
            // resample
        }
    }
    throw Error("random_controllable_system: rejection sampling exhausted");
}

/// Schur-stable matrix R D R^{-1} with diagonal |d_i| <= 0.9 and a
/// well-conditioned similarity R.
inline Mat random_schur_stable(SplitMix64& rng, std::size_t n, double max_eig = 0.9) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const Mat r = random_matrix(rng, n, n);
        if (condition_proxy(r) > 100.0) continue;
        Mat d(n, n);
        for (std::size_t i = 0; i < n; ++i) d(i, i) = rng.symmetric(max_eig);
        return r * d * lu_solve(r, Mat::identity(n));
    }
    throw Error("random_schur_stable: rejection sampling exhausted");
}

} // namespace dbmpc
