#pragma once

// Small statistical oracles for sampling tests.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace xmodal::testing {

// |count - n p| within k standard deviations of a binomial(n, p).
inline bool within_binomial(double count, double n, double p, double k = 3.0) {
  return std::abs(count - n * p) <= k * std::sqrt(n * p * (1.0 - p));
}

// One-sided Mann-Whitney U test that `a` tends to exceed `b`, normal
// approximation with midranks and tie correction. Returns the z score.
inline double mann_whitney_z(const std::vector<double>& a, const std::vector<double>& b) {
  struct Item {
    double v;
    bool from_a;
  };
  std::vector<Item> all;
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size()), n = n1 + n2;
  double rank_sum_a = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    for (std::size_t k = i; k < j; ++k)
      if (all[k].from_a) rank_sum_a += midrank;
    i = j;
  }
  const double u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
  const double mean = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  return (u - mean) / std::sqrt(var);
}

// Upper-tail normal probability.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace xmodal::testing
