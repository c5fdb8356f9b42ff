#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dcasr/nn/tensor.hpp"

namespace dcasr::nn {

// Named tensors of one model. Iteration is lexicographic by name.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  void erase(const std::string& name);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;

  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }
  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }

  std::uint64_t version() const noexcept { return version_; }
  void bump_version() noexcept { ++version_; }

  // Same names, shapes and bit patterns. The version counter is ignored.
  bool bit_equal(const ParamStore& other) const;

  // Zero-filled store with the same names and shapes.
  ParamStore zeros_like() const;

 private:
  Map entries_;
  std::uint64_t version_ = 0;
};

// Checkpoint container:
//   "DCASR-CKPT" <version byte> '\n'
//   one manifest line per tensor: <name> f64 <dims...> <offset> <length> '\n'
//   '\n'
//   concatenated little-endian IEEE-754 payloads
inline constexpr char kCheckpointMagic[] = "DCASR-CKPT";
inline constexpr std::uint8_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const ParamStore& store);
ParamStore deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace dcasr::nn
