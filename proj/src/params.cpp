#include "limn/params.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>

#include "limn/error.hpp"

namespace limn {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name " + name);
  t.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFound("no parameter named " + name);
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFound("no parameter named " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& e : entries_) {
    Tensor t = Tensor::from(e.second.shape(), std::vector<double>(e.second.data().begin(), e.second.data().end()));
    out.add(e.first, t);
  }
  return out;
}

void ParamStore::assign(const ParamStore& other) {
  for (auto& e : entries_) {
    const Tensor& src = other.get(e.first);
    if (src.shape() != e.second.shape())
      throw DimensionError("parameter " + e.first + " has shape " + shape_str(src.shape()) + ", expected " +
                           shape_str(e.second.shape()));
    std::copy(src.data().begin(), src.data().end(), e.second.mutable_data().begin());
  }
}

namespace {
constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;
constexpr std::uint64_t kFnvPrime = 1099511628211ull;

void fnv(std::uint64_t& h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= kFnvPrime;
  }
}
}  // namespace

std::uint64_t ParamStore::hash() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : entries_) {
    fnv(h, name.data(), name.size());
    for (auto d : t.shape()) {
      const auto d64 = static_cast<std::uint64_t>(d);
      fnv(h, &d64, sizeof d64);
    }
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      fnv(h, &bits, sizeof bits);
    }
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace limn
