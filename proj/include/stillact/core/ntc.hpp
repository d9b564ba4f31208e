#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"
#include "stillact/core/tensor.hpp"

// Named tensor container ("NTC1"): the on-disk format for model checkpoints
// and backbone weights.
//
//   bytes 0..3   magic "NTC1"
//   byte  4      endianness tag (1 = little-endian payload)
//   bytes 5..12  u64 little-endian header length H
//   H bytes      UTF-8 JSON header:
//                  {"meta": {...},
//                   "tensors": [{"name","dtype","shape","offset"}...],
//                   "payload_crc32": "xxxxxxxx"}
//   rest         tensor payload, row-major, offsets relative to payload start
//
// dtype is "f32" or "f64". The CRC covers the whole payload; a truncated or
// bit-flipped file fails loudly at load time.

namespace stillact {

inline std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t n, std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = seed ^ 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

namespace detail {
inline bool host_is_little_endian() {
  const std::uint16_t x = 1;
  std::uint8_t b;
  std::memcpy(&b, &x, 1);
  return b == 1;
}
}  // namespace detail

struct NtcEntry {
  std::string dtype;                 // "f32" | "f64"
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> bytes;   // raw little-endian payload

  std::size_t element_count() const { return Tensor<float>::count(shape); }

  template <typename T>
  Tensor<T> as() const {
    const std::string want = sizeof(T) == 4 ? "f32" : "f64";
    require(want == dtype, "ntc: dtype mismatch, stored " + dtype + " requested " + want);
    std::vector<T> data(element_count());
    require(bytes.size() == data.size() * sizeof(T), "ntc: payload size mismatch");
    std::memcpy(data.data(), bytes.data(), bytes.size());
    return Tensor<T>::from(shape, std::move(data));
  }

  template <typename T>
  static NtcEntry of(const Tensor<T>& t) {
    NtcEntry e;
    e.dtype = sizeof(T) == 4 ? "f32" : "f64";
    e.shape = t.shape();
    e.bytes.resize(t.size() * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    return e;
  }
};

struct NtcFile {
  nlohmann::json meta;
  std::vector<std::pair<std::string, NtcEntry>> tensors;  // insertion order preserved

  const NtcEntry& find(const std::string& name) const {
    for (const auto& [n, e] : tensors)
      if (n == name) return e;
    throw Error("ntc: missing tensor '" + name + "'");
  }
  bool contains(const std::string& name) const {
    for (const auto& [n, e] : tensors)
      if (n == name) return true;
    return false;
  }
};

inline void write_ntc(const std::string& path, const NtcFile& file) {
  require(detail::host_is_little_endian(), "ntc: big-endian hosts unsupported");
  nlohmann::json header;
  header["meta"] = file.meta;
  auto tensors = nlohmann::json::array();
  std::size_t offset = 0;
  std::vector<std::uint8_t> payload;
  for (const auto& [name, e] : file.tensors) {
    tensors.push_back({{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", offset}});
    payload.insert(payload.end(), e.bytes.begin(), e.bytes.end());
    offset += e.bytes.size();
  }
  header["tensors"] = tensors;
  char crc_hex[16];
  std::snprintf(crc_hex, sizeof(crc_hex), "%08x", crc32_bytes(payload.data(), payload.size()));
  header["payload_crc32"] = crc_hex;

  const std::string hjson = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "ntc: cannot open for write: " + path);
  out.write("NTC1", 4);
  const std::uint8_t endian = 1;
  out.write(reinterpret_cast<const char*>(&endian), 1);
  const std::uint64_t hlen = hjson.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hjson.data(), static_cast<std::streamsize>(hjson.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  require(out.good(), "ntc: write failed: " + path);
}

inline NtcFile read_ntc(const std::string& path) {
  require(detail::host_is_little_endian(), "ntc: big-endian hosts unsupported");
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "ntc: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "NTC1", 4) == 0, "ntc: bad magic in " + path);
  std::uint8_t endian = 0;
  in.read(reinterpret_cast<char*>(&endian), 1);
  require(endian == 1, "ntc: unsupported endianness tag");
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  require(in.good(), "ntc: truncated header length");
  std::string hjson(hlen, '\0');
  in.read(hjson.data(), static_cast<std::streamsize>(hlen));
  require(in.good(), "ntc: truncated header");
  nlohmann::json header = nlohmann::json::parse(hjson);

  std::vector<std::uint8_t> payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  char crc_hex[16];
  std::snprintf(crc_hex, sizeof(crc_hex), "%08x", crc32_bytes(payload.data(), payload.size()));
  require(header.at("payload_crc32").get<std::string>() == crc_hex,
          "ntc: checksum mismatch (corrupt or truncated file): " + path);

  NtcFile file;
  file.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    NtcEntry e;
    e.dtype = t.at("dtype").get<std::string>();
    e.shape = t.at("shape").get<std::vector<std::size_t>>();
    const std::size_t offset = t.at("offset").get<std::size_t>();
    const std::size_t nbytes = e.element_count() * (e.dtype == "f32" ? 4 : 8);
    require(offset + nbytes <= payload.size(), "ntc: tensor exceeds payload: " + path);
    e.bytes.assign(payload.begin() + offset, payload.begin() + offset + nbytes);
    file.tensors.emplace_back(t.at("name").get<std::string>(), std::move(e));
  }
  return file;
}

}  // namespace stillact
