#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgseg/tensor.hpp"

namespace lgseg {

// Flat tensor container: a JSON manifest listing {name, shape, byte offset}
// followed by one little-endian f64 blob. The manifest also carries a blob
// checksum and an open `extra` object for whatever the caller wants to store
// alongside the tensors.
class TensorArchive {
 public:
  void add(const std::string& name, const std::vector<int>& shape,
           const std::vector<double>& data);

  void save(std::ostream& os) const;
  static TensorArchive load(std::istream& is);  // throws on checksum mismatch

  void save_file(const std::string& path) const;
  static TensorArchive load_file(const std::string& path);

  bool has(const std::string& name) const;
  const std::vector<double>& data(const std::string& name) const;
  const std::vector<int>& shape(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return entries_.size(); }

  nlohmann::json extra;

 private:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> data;
  };
  const Entry& entry(const std::string& name) const;
  std::vector<Entry> entries_;
};

uint64_t fnv1a64(const void* data, size_t n);

}  // namespace lgseg
