#include "lgseg/archive.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lgseg {

namespace {

constexpr char kMagic[8] = {'L', 'G', 'A', 'R', '0', '1', '\n', '\0'};

void put_u64(std::ostream& os, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

uint64_t fnv1a64(const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void TensorArchive::add(const std::string& name, const std::vector<int>& shape,
                        const std::vector<double>& data) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  if (n != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("TensorArchive::add: shape/data mismatch for " + name);
  for (const Entry& e : entries_)
    if (e.name == name)
      throw std::invalid_argument("TensorArchive::add: duplicate name " + name);
  entries_.push_back({name, shape, data});
}

void TensorArchive::save(std::ostream& os) const {
  // assemble blob first so offsets and checksum are known
  size_t total = 0;
  for (const Entry& e : entries_) total += e.data.size();
  std::vector<double> blob;
  blob.reserve(total);
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const Entry& e : entries_) {
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    blob.insert(blob.end(), e.data.begin(), e.data.end());
    offset += e.data.size() * sizeof(double);
  }
  const size_t blob_bytes = blob.size() * sizeof(double);
  nlohmann::json manifest = {
      {"tensors", tensors},
      {"blob_bytes", blob_bytes},
      {"blob_fnv1a64", fnv1a64(blob.data(), blob_bytes)},
      {"extra", extra},
  };
  const std::string mtxt = manifest.dump();
  os.write(kMagic, 8);
  put_u64(os, mtxt.size());
  os.write(mtxt.data(), static_cast<std::streamsize>(mtxt.size()));
  os.write(reinterpret_cast<const char*>(blob.data()),
           static_cast<std::streamsize>(blob_bytes));
  if (!os) throw std::runtime_error("TensorArchive::save: write failed");
}

TensorArchive TensorArchive::load(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("TensorArchive::load: bad magic");
  const uint64_t mlen = get_u64(is);
  std::string mtxt(mlen, '\0');
  is.read(mtxt.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw std::runtime_error("TensorArchive::load: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(mtxt);
  const size_t blob_bytes = manifest.at("blob_bytes").get<size_t>();
  std::vector<double> blob(blob_bytes / sizeof(double));
  is.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(blob_bytes));
  if (!is) throw std::runtime_error("TensorArchive::load: truncated blob");
  const uint64_t want = manifest.at("blob_fnv1a64").get<uint64_t>();
  const uint64_t got = fnv1a64(blob.data(), blob_bytes);
  if (want != got)
    throw std::runtime_error("TensorArchive::load: blob checksum mismatch");
  TensorArchive ar;
  ar.extra = manifest.value("extra", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<int>>();
    int64_t n = 1;
    for (int d : e.shape) n *= d;
    const uint64_t off = t.at("offset").get<uint64_t>() / sizeof(double);
    if (off + n > blob.size())
      throw std::runtime_error("TensorArchive::load: entry out of range: " + e.name);
    e.data.assign(blob.begin() + off, blob.begin() + off + n);
    ar.entries_.push_back(std::move(e));
  }
  return ar;
}

void TensorArchive::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("TensorArchive: cannot open for write: " + path);
  save(os);
}

TensorArchive TensorArchive::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("TensorArchive: cannot open: " + path);
  return load(is);
}

const TensorArchive::Entry& TensorArchive::entry(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return e;
  throw std::out_of_range("TensorArchive: no tensor named " + name);
}

bool TensorArchive::has(const std::string& name) const {
  for (const Entry& e : entries_)
    if (e.name == name) return true;
  return false;
}

const std::vector<double>& TensorArchive::data(const std::string& name) const {
  return entry(name).data;
}

const std::vector<int>& TensorArchive::shape(const std::string& name) const {
  return entry(name).shape;
}

std::vector<std::string> TensorArchive::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.name);
  return out;
}

}  // namespace lgseg
