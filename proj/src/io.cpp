#include "w2p/io.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

#include "w2p/errors.hpp"

namespace w2p::io {

namespace {

constexpr std::array<char, 4> kMagic = {'W', '2', 'P', 'B'};

template <class T>
void put(std::ostream& os, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == EOF) throw IntegrityError("container truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

void put_string(std::ostream& os, const std::string& s, bool wide) {
  if (wide)
    put<std::uint64_t>(os, s.size());
  else
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, bool wide, std::uint64_t limit) {
  const std::uint64_t n = wide ? get<std::uint64_t>(is) : get<std::uint32_t>(is);
  if (n > limit) throw IntegrityError("container field length out of range");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IntegrityError("container truncated");
  return s;
}

}  // namespace

void write_container(const std::filesystem::path& path, const Container& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw UsageError("cannot write " + path.string());
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, kFormatVersion);
  put_string(os, c.kind, false);
  put_string(os, c.header, true);
  put<std::uint64_t>(os, c.arrays.size());
  put<std::uint64_t>(os, c.arrays.checksum());
  for (const auto& p : c.arrays.params()) {
    put_string(os, p.name(), false);
    put<std::uint8_t>(os, p.trainable() ? 1 : 0);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value().rows()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(p.value().cols()));
    for (Eigen::Index i = 0; i < p.value().size(); ++i)
      put<std::uint64_t>(os, std::bit_cast<std::uint64_t>(p.value().data()[i]));
  }
  if (!os) throw UsageError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw IntegrityError(path.string() + ": not a w2p container");
  if (const auto v = get<std::uint32_t>(is); v != kFormatVersion)
    throw IntegrityError(path.string() + ": unsupported version " + std::to_string(v));
  Container c;
  c.kind = get_string(is, false, 256);
  if (c.kind != expected_kind)
    throw IntegrityError(path.string() + ": expected " + expected_kind + ", found " + c.kind);
  c.header = get_string(is, true, 1u << 26);
  const auto count = get<std::uint64_t>(is);
  const auto checksum = get<std::uint64_t>(is);
  if (count > 100000) throw IntegrityError("container array count out of range");
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(is, false, 4096);
    const bool trainable = get<std::uint8_t>(is) != 0;
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (rows > (1u << 24) || cols > (1u << 24) || rows * cols > (1u << 26))
      throw IntegrityError("container array shape out of range");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std::bit_cast<double>(get<std::uint64_t>(is));
    c.arrays.add(std::move(name), std::move(m), trainable);
  }
  if (is.peek() != EOF) throw IntegrityError(path.string() + ": trailing bytes");
  if (c.arrays.checksum() != checksum)
    throw IntegrityError(path.string() + ": checksum mismatch (stored " + hex(checksum) +
                         ", computed " + hex(c.arrays.checksum()) + ")");
  return c;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::istreambuf_iterator<char> it(is), end; it != end; ++it) {
    h ^= static_cast<unsigned char>(*it);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace w2p::io
