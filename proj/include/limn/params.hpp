#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "limn/tensor.hpp"

namespace limn {

// Named, insertion-ordered set of trainable tensors.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor& add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& mutable_entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  void zero_grad();
  // Deep copy: same names and values, independent storage.
  ParamStore clone() const;
  // Copies values from `other` (matching names and shapes).
  void assign(const ParamStore& other);
  // FNV-1a over names, shapes and the raw value bytes.
  std::uint64_t hash() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string hash_hex(std::uint64_t h);

}  // namespace limn
