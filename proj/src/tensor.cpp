#include "onestream/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onestream/errors.hpp"

namespace onestream {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + ")";
}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive");
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_string(shape_));
}

void Tensor::fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

void TensorMap::insert(std::string name, Tensor value) {
  if (contains(name)) throw ShapeError("duplicate tensor name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
}

Tensor& TensorMap::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no tensor named '" + name + "'");
  return entries_[it->second].second;
}

const Tensor& TensorMap::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no tensor named '" + name + "'");
  return entries_[it->second].second;
}

std::size_t TensorMap::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

TensorMap TensorMap::zeros_like() const {
  TensorMap out;
  for (const auto& [name, t] : entries_) out.insert(name, Tensor::zeros_like(t));
  return out;
}

bool TensorMap::same_layout(const TensorMap& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first ||
        entries_[i].second.shape() != other.entries_[i].second.shape())
      return false;
  }
  return true;
}

void TensorMap::require_same_layout(const TensorMap& other, const char* what) const {
  if (entries_.size() != other.entries_.size())
    throw ShapeError(std::string(what) + ": tensor count " +
                     std::to_string(other.entries_.size()) + " != " +
                     std::to_string(entries_.size()));
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [name, t] = entries_[i];
    const auto& [oname, ot] = other.entries_[i];
    if (name != oname)
      throw ShapeError(std::string(what) + ": expected '" + name + "', got '" +
                       oname + "'");
    if (t.shape() != ot.shape())
      throw ShapeError(std::string(what) + ": '" + name + "' has shape " +
                       shape_string(ot.shape()) + ", expected " +
                       shape_string(t.shape()));
  }
}

double squared_norm(const TensorMap& map) {
  double s = 0;
  for (const auto& [name, t] : map)
    for (Real v : t.data()) s += double(v) * double(v);
  return s;
}

double dot(const TensorMap& a, const TensorMap& b) {
  a.require_same_layout(b, "dot");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a.entry(i).second.data();
    auto y = b.entry(i).second.data();
    for (std::size_t j = 0; j < x.size(); ++j) s += double(x[j]) * double(y[j]);
  }
  return s;
}

}  // namespace onestream
