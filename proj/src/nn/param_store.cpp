#include "dcasr/nn/param_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dcasr/error.hpp"

namespace dcasr::nn {

void ParamStore::set(const std::string& name, Tensor value) {
  if (name.empty()) throw InvalidInputError("parameter name must be non-empty");
  for (char c : name) {
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') {
      throw InvalidInputError("parameter name contains whitespace: '" + name + "'");
    }
  }
  entries_[name] = std::move(value);
  ++version_;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConsistencyError("missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConsistencyError("missing parameter '" + name + "'");
  return it->second;
}

void ParamStore::erase(const std::string& name) {
  entries_.erase(name);
  ++version_;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

bool ParamStore::bit_equal(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.bit_equal(b->second)) return false;
  }
  return true;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) out.set(name, Tensor(t.shape()));
  return out;
}

namespace {

void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

bool parse_u64(const std::string& token, std::uint64_t& out) {
  if (token.empty() || token.size() > 19) return false;
  std::uint64_t v = 0;
  for (char c : token) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  // Canonical decimal only: no leading zeros.
  if (token.size() > 1 && token[0] == '0') return false;
  out = v;
  return true;
}

}  // namespace

std::string serialize_checkpoint(const ParamStore& store) {
  std::string manifest;
  std::string payload;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : store) {
    std::ostringstream line;
    line << name << " f64";
    for (auto d : tensor.shape()) line << ' ' << d;
    const std::uint64_t length = tensor.size() * 8;
    line << ' ' << offset << ' ' << length << '\n';
    manifest += line.str();
    for (double v : tensor.values()) append_le(payload, v);
    offset += length;
  }
  std::string out(kCheckpointMagic);
  out.push_back(static_cast<char>(kCheckpointVersion));
  out.push_back('\n');
  out += manifest;
  out.push_back('\n');
  out += payload;
  return out;
}

ParamStore deserialize_checkpoint(const std::string& bytes) {
  const std::size_t magic_len = std::strlen(kCheckpointMagic);
  if (bytes.size() < magic_len + 2 || bytes.compare(0, magic_len, kCheckpointMagic) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  if (static_cast<std::uint8_t>(bytes[magic_len]) != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " +
                      std::to_string(static_cast<unsigned>(static_cast<std::uint8_t>(bytes[magic_len]))));
  }
  if (bytes[magic_len + 1] != '\n') throw FormatError("checkpoint: missing newline after version byte");

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
    std::uint64_t length;
  };
  std::vector<Entry> entries;
  std::size_t pos = magic_len + 2;
  std::size_t line_no = 0;
  while (true) {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("checkpoint: truncated manifest");
    const std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.empty()) break;

    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start <= line.size()) {
      const std::size_t sp = line.find(' ', start);
      const std::size_t end = sp == std::string::npos ? line.size() : sp;
      tokens.push_back(line.substr(start, end - start));
      if (sp == std::string::npos) break;
      start = sp + 1;
    }
    const std::string where = "checkpoint manifest line " + std::to_string(line_no);
    if (tokens.size() < 5) throw FormatError(where + ": too few fields");
    for (const auto& t : tokens) {
      if (t.empty()) throw FormatError(where + ": empty field");
    }
    if (tokens[1] != "f64") throw FormatError(where + ": unsupported dtype '" + tokens[1] + "'");
    Entry e;
    e.name = tokens[0];
    for (std::size_t i = 2; i + 2 < tokens.size(); ++i) {
      std::uint64_t d;
      if (!parse_u64(tokens[i], d) || d == 0) throw FormatError(where + ": bad dimension '" + tokens[i] + "'");
      e.shape.push_back(static_cast<std::size_t>(d));
    }
    if (!parse_u64(tokens[tokens.size() - 2], e.offset)) throw FormatError(where + ": bad offset");
    if (!parse_u64(tokens[tokens.size() - 1], e.length)) throw FormatError(where + ": bad length");
    if (e.length != element_count(e.shape) * 8) throw FormatError(where + ": byte length disagrees with shape");
    const std::uint64_t expected_offset = entries.empty() ? 0 : entries.back().offset + entries.back().length;
    if (e.offset != expected_offset) throw FormatError(where + ": non-contiguous offset");
    if (!entries.empty() && !(entries.back().name < e.name)) {
      throw FormatError(where + ": names not strictly increasing");
    }
    entries.push_back(std::move(e));
  }

  const std::uint64_t payload_size = entries.empty() ? 0 : entries.back().offset + entries.back().length;
  if (bytes.size() - pos != payload_size) {
    throw FormatError("checkpoint: payload size " + std::to_string(bytes.size() - pos) + " != manifest total " +
                      std::to_string(payload_size));
  }
  ParamStore store;
  for (const auto& e : entries) {
    std::vector<double> values(e.length / 8);
    const char* p = bytes.data() + pos + e.offset;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = read_le(p + 8 * i);
    store.set(e.name, Tensor(e.shape, std::move(values)));
  }
  return store;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DependencyError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace dcasr::nn
