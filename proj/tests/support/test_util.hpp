#pragma once

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "aprnet/aprnet.hpp"
#include "oracles.hpp"

namespace testutil {

using aprnet::Shape;
using aprnet::Tensor;

template <class T = double>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.storage()) v = static_cast<T>(u(rng));
  return t;
}

/// max |a - b| / (1 + |b|)
template <class A, class B>
double rel_err(const Tensor<A>& a, const Tensor<B>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double e = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double bv = static_cast<double>(b[i]);
    e = std::max(e, std::abs(static_cast<double>(a[i]) - bv) / (1 + std::abs(bv)));
  }
  return e;
}

}  // namespace testutil
