#include "onestream/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace onestream {

namespace {

double cosine(double dot_ab, double aa, double bb) {
  if (aa == 0 || bb == 0) return 0;
  return std::clamp(dot_ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

}  // namespace

double grad_cosine(const GradSet& a, const GradSet& b) {
  a.require_same_layout(b, "grad_cosine");
  return cosine(double(dot(a, b)), double(squared_norm(a)), double(squared_norm(b)));
}

std::vector<std::pair<std::string, double>> grad_cosine_per_layer(const GradSet& a, const GradSet& b) {
  a.require_same_layout(b, "grad_cosine_per_layer");
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& [name, ta] = a.entry(i);
    const Tensor& tb = b.entry(i).second;
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < ta.size(); ++j) {
      ab += double(ta[j]) * double(tb[j]);
      aa += double(ta[j]) * double(ta[j]);
      bb += double(tb[j]) * double(tb[j]);
    }
    out.emplace_back(name, cosine(ab, aa, bb));
  }
  return out;
}

double grad_norm(const GradSet& g) { return std::sqrt(double(squared_norm(g))); }

Summary summarize(const std::vector<double>& values, std::size_t bins, double lo, double hi) {
  if (bins == 0) throw std::invalid_argument("summarize needs at least one bin");
  if (values.empty()) throw std::invalid_argument("summarize needs at least one value");
  Summary s;
  s.counts.assign(bins, 0);
  if (lo == 0 && hi == 0) {
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    lo = *mn;
    hi = *mx;
  }
  if (hi < lo) throw std::invalid_argument("summarize range is inverted");
  s.lo = lo;
  s.hi = hi;
  const double width = (hi - lo) / double(bins);
  double sum = 0;
  for (double v : values) {
    sum += v;
    std::size_t k = 0;
    if (width > 0) {
      const double pos = std::floor((v - lo) / width);
      k = pos < 0 ? 0 : std::min(bins - 1, std::size_t(pos));
    }
    ++s.counts[k];
  }
  s.mean = sum / double(values.size());
  double sq = 0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.variance = sq / double(values.size());
  return s;
}

}  // namespace onestream
