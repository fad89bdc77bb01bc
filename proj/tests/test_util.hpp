#pragma once

#include <gtest/gtest.h>

#include "wfdiff/wfdiff.hpp"

namespace wfdiff::testing {

inline std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

template <class T>
Tensor<T> rand_uniform(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
    return Tensor<T>::uniform(std::move(s), rng, static_cast<T>(lo), static_cast<T>(hi));
}

/// Sum of squares in double precision.
template <class T>
double energy(const Tensor<T>& t) {
    double e = 0.0;
    for (auto v : t.data()) e += double(v) * double(v);
    return e;
}

/// Sets every parameter of a collection to a constant.
template <class T>
void fill_all(const NamedParams<T>& params, T value) {
    for (auto [name, t] : params) fill(t, value);
}

/// Random weights so that blocks are not trivially zero in gradient checks.
template <class T>
void randomize(const NamedParams<T>& params, Rng& rng, double scale = 0.5) {
    for (auto [name, t] : params)
        for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-scale, scale));
}

}  // namespace wfdiff::testing
