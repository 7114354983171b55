#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clutter4d/tensor.hpp"

namespace clutter4d {

/// T6D container: "T6D1", six u64 LE extents (B,C,Lx,Ly,Lz,T), one dtype
/// byte (0x01 = f32), then the row-major LE payload.
void write_t6d(const std::filesystem::path& path, const Tensor6D& x);
Tensor6D read_t6d(const std::filesystem::path& path);

/// Complex volumes live in two T6D files, `<base>.re` and `<base>.im`.
void write_complex(const std::filesystem::path& base, const ComplexVolumeF& v);
ComplexVolumeF read_complex(const std::filesystem::path& base);

/// Ordered flat key-value text: `key = value` per line, `#` starts a comment.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile load(const std::filesystem::path& path);
  static KeyValueFile parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  std::string str() const;

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, long long value);
  void set(const std::string& key, int value) { set(key, static_cast<long long>(value)); }

  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

void ensure_directory(const std::filesystem::path& dir);

}  // namespace clutter4d
