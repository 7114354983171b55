#include "clutter4d/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace clutter4d {

namespace {

constexpr char kMagic[4] = {'T', '6', 'D', '1'};
constexpr std::uint8_t kDtypeF32 = 0x01;

void put_u64_le(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> bytes;
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes.data(), 8);
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

void write_t6d(const std::filesystem::path& path, const Tensor6D& x) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  for (Index e : x.shape()) put_u64_le(os, static_cast<std::uint64_t>(e));
  os.put(static_cast<char>(kDtypeF32));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(x.data()), static_cast<std::streamsize>(x.size() * sizeof(float)));
  } else {
    for (Index i = 0; i < x.size(); ++i) {
      auto bits = std::bit_cast<std::uint32_t>(x.data()[i]);
      for (int k = 0; k < 4; ++k) os.put(static_cast<char>((bits >> (8 * k)) & 0xff));
    }
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor6D read_t6d(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::array<unsigned char, 4 + 48 + 1> header{};
  in.read(reinterpret_cast<char*>(header.data()), header.size());
  if (in.gcount() != static_cast<std::streamsize>(header.size()))
    throw FormatError("malformed T6D header (truncated): " + path.string());
  if (std::memcmp(header.data(), kMagic, 4) != 0)
    throw FormatError("malformed T6D header (bad magic): " + path.string());
  Shape6 shape;
  std::uint64_t count = 1;
  for (int i = 0; i < 6; ++i) {
    const std::uint64_t e = get_u64_le(header.data() + 4 + 8 * i);
    if (e > (std::uint64_t{1} << 40)) throw FormatError("malformed T6D header (extent): " + path.string());
    shape[i] = static_cast<Index>(e);
    count *= e;
  }
  if (header[52] != kDtypeF32)
    throw FormatError("malformed T6D header (dtype " + std::to_string(header[52]) + "): " + path.string());
  const auto here = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload = static_cast<std::uint64_t>(in.tellg() - here);
  if (payload != count * sizeof(float))
    throw FormatError("T6D payload size " + std::to_string(payload) + " does not match header: " +
                      path.string());
  in.seekg(here);
  Tensor6D out(shape);
  std::vector<unsigned char> raw(count * sizeof(float));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int k = 3; k >= 0; --k) bits = (bits << 8) | raw[4 * i + k];
    out.data()[i] = std::bit_cast<float>(bits);
  }
  return out;
}

void write_complex(const std::filesystem::path& base, const ComplexVolumeF& v) {
  write_t6d(base.string() + ".re", v.real());
  write_t6d(base.string() + ".im", v.imag());
}

ComplexVolumeF read_complex(const std::filesystem::path& base) {
  return ComplexVolumeF::from_parts(read_t6d(base.string() + ".re"), read_t6d(base.string() + ".im"));
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

KeyValueFile KeyValueFile::parse(const std::string& text) {
  KeyValueFile kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

std::string KeyValueFile::str() const {
  std::ostringstream os;
  for (const auto& k : order_) os << k << " = " << values_.at(k) << '\n';
  return os.str();
}

void KeyValueFile::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << str();
}

const std::string& KeyValueFile::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing key `" + key + "`");
  return it->second;
}

std::string KeyValueFile::get_or(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("key `" + key + "`: not a number: " + s);
  return v;
}

long long KeyValueFile::get_int(const std::string& key) const {
  const std::string& s = get(key);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("key `" + key + "`: not an integer: " + s);
  return v;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  if (values_.count(key) == 0) order_.push_back(key);
  values_[key] = value;
}

void KeyValueFile::set(const std::string& key, double value) { set(key, format_double(value)); }

void KeyValueFile::set(const std::string& key, long long value) { set(key, std::to_string(value)); }

std::string format_double(double value) {
  std::array<char, 64> buf;
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace clutter4d
