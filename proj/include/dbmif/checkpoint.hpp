#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dbmif/tensor.hpp"

namespace dbmif {

// Ordered name -> parameter map.  Order is the serialization order and is
// fixed by construction, which keeps checkpoints byte-stable across runs.
class ParamRegistry {
  public:
    void add(const std::string& name, const Tensor& t);
    const Tensor& find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    std::vector<Tensor> tensors() const;
    int64_t total_values() const;

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Binary format: magic "DBMIF1", u64 record count, then per record
//   u64 name length, UTF-8 name, u64 rank, u64 dims[rank], float32 values.
// All integers little-endian.  Loading is strict: the file must carry exactly
// the registry's names with exactly the registry's shapes.
void save_checkpoint(const std::string& path, const ParamRegistry& params);
void load_checkpoint(const std::string& path, ParamRegistry& params);

}  // namespace dbmif
