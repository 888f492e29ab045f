#pragma once

#include <string>
#include <utility>
#include <vector>

#include "onestream/tensor.hpp"

namespace onestream {

/// Cosine between two flattened gradients, clamped to [-1, 1]; 0 if either
/// has zero norm.
double grad_cosine(const GradSet& a, const GradSet& b);

/// Cosine per parameter tensor, in layout order.
std::vector<std::pair<std::string, double>> grad_cosine_per_layer(const GradSet& a, const GradSet& b);

double grad_norm(const GradSet& g);

struct Summary {
  std::vector<std::size_t> counts;  // `bins` equal-width bins over [lo, hi]
  double lo = 0;
  double hi = 0;
  double mean = 0;
  double variance = 0;  // population variance
};

/// Histogram and moments. With lo == hi == 0 the range is the data's
/// min/max; values outside an explicit range are clamped into the edge bins.
/// Throws std::invalid_argument for no values or zero bins.
Summary summarize(const std::vector<double>& values, std::size_t bins, double lo = 0, double hi = 0);

}  // namespace onestream
