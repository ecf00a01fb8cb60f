#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cfq/config.hpp"
#include "cfq/tensor.hpp"

namespace cfq {

// A checkpoint is the full training state: every parameter, every optimizer
// moment, RNG states, counters, and the exact config text it was produced
// with. Entries are stored sorted by name, so save -> load -> save is
// byte-identical.
class Checkpoint {
 public:
  using Entry = std::variant<Tensor, long long, double, std::string, std::vector<double>>;

  static constexpr char kMagic[8] = {'C', 'F', 'Q', 'C', 'K', 'P', 'T', '\n'};
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;

  void put_tensor(const std::string& name, Tensor t) { insert(name, Entry(std::move(t))); }
  void put_i64(const std::string& name, long long v) { insert(name, Entry(v)); }
  void put_f64(const std::string& name, double v) { insert(name, Entry(v)); }
  void put_string(const std::string& name, std::string s) { insert(name, Entry(std::move(s))); }
  void put_f64vec(const std::string& name, std::vector<double> v) {
    insert(name, Entry(std::move(v)));
  }

  const Tensor& tensor(const std::string& name) const { return get<Tensor>(name); }
  long long i64(const std::string& name) const { return get<long long>(name); }
  double f64(const std::string& name) const { return get<double>(name); }
  const std::string& string(const std::string& name) const { return get<std::string>(name); }
  const std::vector<double>& f64vec(const std::string& name) const {
    return get<std::vector<double>>(name);
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  std::size_t entry_count() const { return entries_.size(); }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, kVersion);
    write_u64(out, fnv1a64(config_text));
    write_str(out, config_text);
    write_u64(out, entries_.size());
    for (const auto& [name, entry] : entries_) {
      write_str(out, name);
      write_u8(out, static_cast<std::uint8_t>(entry.index()));
      std::visit([&](const auto& v) { write_payload(out, v); }, entry);
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[sizeof(kMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kVersion)
      throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                               " in " + path);
    const std::uint64_t stored_hash = read_u64(in, path);
    Checkpoint ck;
    ck.config_text = read_str(in, path);
    if (fnv1a64(ck.config_text) != stored_hash)
      throw std::runtime_error("checkpoint: config hash mismatch in " + path);
    const std::uint64_t n = read_u64(in, path);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::string name = read_str(in, path);
      const std::uint8_t tag = read_u8(in, path);
      switch (tag) {
        case 0: ck.entries_.emplace(name, read_tensor(in, path)); break;
        case 1: ck.entries_.emplace(name, static_cast<long long>(read_u64(in, path))); break;
        case 2: ck.entries_.emplace(name, read_f64(in, path)); break;
        case 3: ck.entries_.emplace(name, read_str(in, path)); break;
        case 4: ck.entries_.emplace(name, read_f64vec(in, path)); break;
        default:
          throw std::runtime_error("checkpoint: unknown entry tag " + std::to_string(tag) +
                                   " in " + path);
      }
    }
    // any trailing bytes mean the file does not match what save() produces
    in.peek();
    if (!in.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return ck;
  }

 private:
  void insert(const std::string& name, Entry e) {
    if (!entries_.emplace(name, std::move(e)).second)
      throw std::logic_error("checkpoint: duplicate entry " + name);
  }

  template <class T>
  const T& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("checkpoint: missing entry " + name);
    const T* p = std::get_if<T>(&it->second);
    if (!p) throw std::runtime_error("checkpoint: wrong type for entry " + name);
    return *p;
  }

  static void write_u8(std::ostream& out, std::uint8_t v) {
    out.write(reinterpret_cast<const char*>(&v), 1);
  }
  static void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
  static void write_str(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

  static void write_payload(std::ostream& out, const Tensor& t) {
    write_u64(out, t.rank());
    for (std::size_t i = 0; i < t.rank(); ++i) write_u64(out, t.dim(i));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  static void write_payload(std::ostream& out, long long v) {
    write_u64(out, static_cast<std::uint64_t>(v));
  }
  static void write_payload(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  }
  static void write_payload(std::ostream& out, const std::string& s) { write_str(out, s); }
  static void write_payload(std::ostream& out, const std::vector<double>& v) {
    write_u64(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

  static void read_bytes(std::istream& in, char* dst, std::size_t n, const std::string& path) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw std::runtime_error("checkpoint: truncated file " + path);
  }
  static std::uint8_t read_u8(std::istream& in, const std::string& path) {
    std::uint8_t v;
    read_bytes(in, reinterpret_cast<char*>(&v), 1, path);
    return v;
  }
  static std::uint32_t read_u32(std::istream& in, const std::string& path) {
    std::uint32_t v;
    read_bytes(in, reinterpret_cast<char*>(&v), 4, path);
    return v;
  }
  static std::uint64_t read_u64(std::istream& in, const std::string& path) {
    std::uint64_t v;
    read_bytes(in, reinterpret_cast<char*>(&v), 8, path);
    return v;
  }
  static double read_f64(std::istream& in, const std::string& path) {
    double v;
    read_bytes(in, reinterpret_cast<char*>(&v), 8, path);
    return v;
  }
  static std::string read_str(std::istream& in, const std::string& path) {
    const std::uint64_t n = read_u64(in, path);
    if (n > (1ULL << 32)) throw std::runtime_error("checkpoint: absurd string size in " + path);
    std::string s(n, '\0');
    read_bytes(in, s.data(), n, path);
    return s;
  }
  static Tensor read_tensor(std::istream& in, const std::string& path) {
    const std::uint64_t rank = read_u64(in, path);
    if (rank > 8) throw std::runtime_error("checkpoint: absurd tensor rank in " + path);
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(read_u64(in, path));
      total *= d;
    }
    if (total > (1ULL << 30)) throw std::runtime_error("checkpoint: absurd tensor size in " + path);
    Tensor t(std::move(shape));
    read_bytes(in, reinterpret_cast<char*>(t.data()), t.size() * sizeof(double), path);
    return t;
  }
  static std::vector<double> read_f64vec(std::istream& in, const std::string& path) {
    const std::uint64_t n = read_u64(in, path);
    if (n > (1ULL << 30)) throw std::runtime_error("checkpoint: absurd vector size in " + path);
    std::vector<double> v(n);
    read_bytes(in, reinterpret_cast<char*>(v.data()), n * sizeof(double), path);
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace cfq
