#include "onestream/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "onestream/errors.hpp"

namespace onestream {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr const char* kMagic = "ONESTREAM-CKPT 1";

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      out += s[i + 1] == 'n' ? '\n' : s[i + 1];
      ++i;
    } else {
      out += s[i];
    }
  }
  return out;
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated checkpoint");
  return v;
}

}  // namespace

void Checkpoint::set(const std::string& key, std::string value) {
  for (auto& [k, v] : header)
    if (k == key) {
      v = std::move(value);
      return;
    }
  header.emplace_back(key, std::move(value));
}

std::optional<std::string> Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : header)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& Checkpoint::require(const std::string& key) const {
  for (const auto& [k, v] : header)
    if (k == key) return v;
  throw IoError("checkpoint header lacks '" + key + "'");
}

TensorMap Checkpoint::with_prefix(const std::string& prefix) const {
  TensorMap out;
  for (const auto& [name, t] : tensors)
    if (name.compare(0, prefix.size(), prefix) == 0) out.insert(name.substr(prefix.size()), t);
  return out;
}

void Checkpoint::insert_with_prefix(const std::string& prefix, const TensorMap& map) {
  for (const auto& [name, t] : map) tensors.insert(prefix + name, t);
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << kMagic << '\n' << "precision " << kPrecisionName << '\n';
    for (const auto& [k, v] : ckpt.header) {
      if (k.empty() || k.find_first_of(" \n") != std::string::npos)
        throw IoError("invalid checkpoint header key '" + k + "'");
      out << k << ' ' << escape(v) << '\n';
    }
    out << "end_header\n";
    put<std::uint32_t>(out, std::uint32_t(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      put<std::uint32_t>(out, std::uint32_t(name.size()));
      out.write(name.data(), std::streamsize(name.size()));
      put<std::uint32_t>(out, std::uint32_t(t.rank()));
      for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.raw()), std::streamsize(t.size() * sizeof(Real)));
    }
    if (!out.flush()) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IoError(path.string() + " is not a checkpoint");
  if (!std::getline(in, line) || line.rfind("precision ", 0) != 0)
    throw IoError("checkpoint lacks a precision line");
  const std::string precision = line.substr(10);
  if (precision != "f32" && precision != "f64") throw IoError("unknown precision " + precision);

  Checkpoint ckpt;
  while (true) {
    if (!std::getline(in, line)) throw IoError("checkpoint header is not terminated");
    if (line == "end_header") break;
    const auto space = line.find(' ');
    if (space == std::string::npos) throw IoError("malformed checkpoint header line");
    ckpt.header.emplace_back(line.substr(0, space), unescape(line.substr(space + 1)));
  }
  const auto count = take<std::uint32_t>(in);
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = take<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("truncated checkpoint");
    const auto rank = take<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = std::size_t(take<std::uint64_t>(in));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = precision == "f64" ? Real(take<double>(in)) : Real(take<float>(in));
    ckpt.tensors.insert(std::move(name), std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint records");
  return ckpt;
}

}  // namespace onestream
