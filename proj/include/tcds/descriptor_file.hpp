#pragma once

// LDPK descriptor files.
//
//   offset 0   "LDPK"
//   offset 4   u32 LE version (1)
//   offset 8   u32 LE header_len
//   offset 12  UTF-8 JSON header {"d", "m", "classes": [{"label", "image_count"}]}
//   then       f32 LE payload, class-major / image-major / descriptor-major /
//              component-minor
//
// Descriptors are widened to double on load and narrowed to float on write.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "tcds/core.hpp"
#include "tcds/train.hpp"

namespace tcds {

inline constexpr char kDescriptorMagic[4] = {'L', 'D', 'P', 'K'};
inline constexpr std::uint32_t kDescriptorVersion = 1;

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

}  // namespace detail

/// Serializes a pool. Values are rounded to float32.
inline std::vector<std::uint8_t> encode_descriptor_file(const EpisodePool& pool) {
  using nlohmann::json;
  json header;
  header["d"] = pool.dim();
  header["m"] = pool.per_image();
  header["classes"] = json::array();
  for (const auto& c : pool.classes()) {
    header["classes"].push_back({{"label", c.label}, {"image_count", c.images.image_count()}});
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kDescriptorMagic), std::end(kDescriptorMagic));
  detail::put_u32(out, kDescriptorVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& c : pool.classes()) {
    for (const auto& desc : c.images.descriptors()) {
      for (double v : desc.values()) detail::put_f32(out, static_cast<float>(v));
    }
  }
  return out;
}

/// Parses and validates an LDPK buffer. Every descriptor must be finite with
/// nonzero norm.
inline EpisodePool decode_descriptor_file(const std::vector<std::uint8_t>& bytes,
                                          Split split = Split::train) {
  using nlohmann::json;
  if (bytes.size() < 12) {
    throw FormatError("file too short for LDPK preamble: " + std::to_string(bytes.size()) +
                          " bytes, need 12",
                      bytes.size());
  }
  if (std::memcmp(bytes.data(), kDescriptorMagic, 4) != 0) throw FormatError("bad magic", 0);
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kDescriptorVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const std::uint32_t header_len = detail::get_u32(bytes.data() + 8);
  if (bytes.size() - 12 < header_len) {
    throw FormatError("header length " + std::to_string(header_len) + " exceeds file size", 8);
  }

  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what(), 12);
  }

  std::size_t d = 0, m = 0;
  struct Entry {
    std::string label;
    std::size_t images;
  };
  std::vector<Entry> entries;
  try {
    d = header.at("d").get<std::size_t>();
    m = header.at("m").get<std::size_t>();
    for (const auto& c : header.at("classes")) {
      entries.push_back({c.at("label").get<std::string>(), c.at("image_count").get<std::size_t>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what(), 12);
  }
  if (d == 0 || m == 0) throw FormatError("header d and m must be >= 1", 12);

  std::size_t total_images = 0;
  for (const auto& e : entries) {
    if (e.images == 0) throw FormatError("class '" + e.label + "' has image_count 0", 12);
    total_images += e.images;
  }
  const std::size_t payload_offset = 12 + header_len;
  const std::size_t expected = 4 * d * m * total_images;
  const std::size_t actual = bytes.size() - payload_offset;
  if (actual != expected) {
    throw FormatError("payload is " + std::to_string(actual) + " bytes, expected " +
                          std::to_string(expected),
                      payload_offset);
  }

  EpisodePool pool(split);
  const std::uint8_t* p = bytes.data() + payload_offset;
  for (const auto& e : entries) {
    std::vector<LocalDescriptor> descs;
    descs.reserve(e.images * m);
    for (std::size_t img = 0; img < e.images; ++img) {
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t offset = static_cast<std::size_t>(p - bytes.data());
        std::vector<double> v(d);
        for (std::size_t t = 0; t < d; ++t, p += 4) v[t] = detail::get_f32(p);
        const std::string where = "class '" + e.label + "', image " + std::to_string(img) +
                                  ", index " + std::to_string(j);
        for (double x : v) {
          if (!std::isfinite(x)) throw FormatError("non-finite value at " + where, offset);
        }
        LocalDescriptor desc(std::move(v));
        require_nonzero(desc, where);
        descs.push_back(std::move(desc));
      }
    }
    try {
      pool.add_class(e.label, DescriptorSet(std::move(descs), e.images, m));
    } catch (const InvalidInput& err) {
      throw FormatError(err.what(), 12);
    }
  }
  return pool;
}

inline void write_descriptor_file(const std::string& path, const EpisodePool& pool) {
  const auto bytes = encode_descriptor_file(pool);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path + "'");
}

inline EpisodePool load_descriptor_file(const std::string& path, Split split = Split::train) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_descriptor_file(bytes, split);
}

}  // namespace tcds
