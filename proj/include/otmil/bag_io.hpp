#pragma once
// Binary bag files. Layout (all integers little-endian):
//
//   offset 0   magic   "OTMILBAG" (8 bytes)
//   offset 8   version u16 (currently 1)
//   offset 10  N       u32
//   offset 14  D       u32
//   offset 18  time    f64
//   offset 26  event   u8 (0 or 1)
//   offset 27  features N*D f32, row-major
//   tail       crc32   u32 over every preceding byte (IEEE polynomial)
//
// Features are stored in 32-bit precision on disk and widened to 64-bit in
// memory. See docs/FORMATS.md.

#include <otmil/bag.hpp>
#include <otmil/common.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace otmil {

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      }
      t[i] = c;
    }
    return t;
  }();
  return table;
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) {
    c = crc32_table()[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  }
  return c ^ 0xFFFFFFFFu;
}

inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
}

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline float get_f32(const unsigned char* p) {
  const std::uint32_t bits = get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double get_f64(const unsigned char* p) {
  const std::uint64_t bits = get_u64(p);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::vector<unsigned char> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Code::Missing, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_binary_file(const std::string& path,
                              const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoError::Code::Missing, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoError::Code::Malformed, "short write to " + path);
}

}  // namespace detail

inline constexpr char kBagMagic[9] = "OTMILBAG";
inline constexpr std::uint16_t kBagVersion = 1;
inline constexpr std::size_t kBagHeaderSize = 27;

inline std::vector<unsigned char> encode_bag(const Bag& bag) {
  bag.validate();
  const std::uint32_t n = static_cast<std::uint32_t>(bag.features.rows());
  const std::uint32_t d = static_cast<std::uint32_t>(bag.features.cols());
  std::vector<unsigned char> out;
  out.reserve(kBagHeaderSize + 4ull * n * d + 4);
  out.insert(out.end(), kBagMagic, kBagMagic + 8);
  detail::put_u16(out, kBagVersion);
  detail::put_u32(out, n);
  detail::put_u32(out, d);
  detail::put_f64(out, bag.time);
  out.push_back(bag.event ? 1 : 0);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j) {
      detail::put_f32(out, static_cast<float>(bag.features(i, j)));
    }
  }
  detail::put_u32(out, detail::crc32(out.data(), out.size()));
  return out;
}

inline void write_bag(const Bag& bag, const std::string& path) {
  detail::write_binary_file(path, encode_bag(bag));
}

inline Bag decode_bag(const std::vector<unsigned char>& bytes,
                      const std::string& origin) {
  if (bytes.size() < kBagHeaderSize + 4) {
    throw IoError(IoError::Code::Truncated, origin + ": truncated bag file");
  }
  if (std::memcmp(bytes.data(), kBagMagic, 8) != 0) {
    throw IoError(IoError::Code::BadMagic, origin + ": bad magic");
  }
  const std::uint16_t version = detail::get_u16(bytes.data() + 8);
  if (version != kBagVersion) {
    throw IoError(IoError::Code::BadVersion,
                  origin + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t n = detail::get_u32(bytes.data() + 10);
  const std::uint32_t d = detail::get_u32(bytes.data() + 14);
  const std::uint64_t expect = kBagHeaderSize + 4ull * n * d + 4;
  if (bytes.size() < expect) {
    throw IoError(IoError::Code::Truncated, origin + ": truncated bag file");
  }
  if (bytes.size() > expect) {
    throw IoError(IoError::Code::Malformed,
                  origin + ": trailing bytes after checksum");
  }
  const std::uint32_t stored_crc = detail::get_u32(bytes.data() + expect - 4);
  const std::uint32_t actual_crc = detail::crc32(bytes.data(), expect - 4);
  if (stored_crc != actual_crc) {
    throw IoError(IoError::Code::ChecksumMismatch,
                  origin + ": checksum mismatch");
  }
  if (n == 0 || d == 0) {
    throw IoError(IoError::Code::Malformed, origin + ": empty dimensions");
  }
  Bag bag;
  bag.time = detail::get_f64(bytes.data() + 18);
  const unsigned char event_byte = bytes[26];
  if (event_byte > 1) {
    throw IoError(IoError::Code::Malformed, origin + ": bad event byte");
  }
  bag.event = event_byte == 1;
  if (!(bag.time > 0.0) || !std::isfinite(bag.time)) {
    throw IoError(IoError::Code::Malformed, origin + ": nonpositive time");
  }
  bag.features.resize(n, d);
  const unsigned char* p = bytes.data() + kBagHeaderSize;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < d; ++j, p += 4) {
      const float v = detail::get_f32(p);
      if (!std::isfinite(v)) {
        throw IoError(IoError::Code::Malformed,
                      origin + ": non-finite feature value");
      }
      bag.features(i, j) = v;
    }
  }
  return bag;
}

inline Bag read_bag(const std::string& path) {
  Bag bag = decode_bag(detail::read_binary_file(path), path);
  // bag_id and instance ids are not stored on disk; derive them from the path
  std::string stem = path;
  const std::size_t slash = stem.find_last_of("/\\");
  if (slash != std::string::npos) stem = stem.substr(slash + 1);
  const std::size_t dot = stem.find_last_of('.');
  if (dot != std::string::npos) stem = stem.substr(0, dot);
  bag.bag_id = stem;
  bag.instance_ids.reserve(bag.features.rows());
  for (int i = 0; i < bag.features.rows(); ++i) {
    bag.instance_ids.push_back(stem + ":" + std::to_string(i));
  }
  return bag;
}

}  // namespace otmil
