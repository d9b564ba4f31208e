#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stillact/core/error.hpp"
#include "stillact/core/tensor.hpp"

// Embedding matrix file, bit-exact wire format:
//   "EMB1" | u32 N (LE) | u32 d (LE) | u8 source tag | N*d float32 row-major (LE)
//   | UTF-8 JSON trailer {"row_keys": [...]} running to end of file.
// Source tags: 0 = image embeddings, 1 = text embeddings.

namespace stillact {

enum class EmbeddingSource : std::uint8_t { image = 0, text = 1 };

struct EmbeddingMatrix {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
  EmbeddingSource source = EmbeddingSource::image;
  std::vector<float> values;           // rows*dim, row-major
  std::vector<std::string> row_keys;   // image ids or prompt strings

  const float* row(std::size_t i) const { return values.data() + static_cast<std::size_t>(i) * dim; }
};

inline void write_embedding_file(const std::string& path, const EmbeddingMatrix& m) {
  require(m.values.size() == static_cast<std::size_t>(m.rows) * m.dim,
          "embfile: value count does not match N*d");
  require(m.row_keys.size() == m.rows, "embfile: row_keys length does not match N");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "embfile: cannot open for write: " + path);
  out.write("EMB1", 4);
  out.write(reinterpret_cast<const char*>(&m.rows), 4);
  out.write(reinterpret_cast<const char*>(&m.dim), 4);
  const std::uint8_t tag = static_cast<std::uint8_t>(m.source);
  out.write(reinterpret_cast<const char*>(&tag), 1);
  out.write(reinterpret_cast<const char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * sizeof(float)));
  const std::string trailer = nlohmann::json{{"row_keys", m.row_keys}}.dump();
  out.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  require(out.good(), "embfile: write failed: " + path);
}

inline EmbeddingMatrix read_embedding_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "embfile: cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "EMB1", 4) == 0, "embfile: bad magic in " + path);
  EmbeddingMatrix m;
  in.read(reinterpret_cast<char*>(&m.rows), 4);
  in.read(reinterpret_cast<char*>(&m.dim), 4);
  std::uint8_t tag = 0;
  in.read(reinterpret_cast<char*>(&tag), 1);
  require(in.good() && tag <= 1, "embfile: bad source tag");
  m.source = static_cast<EmbeddingSource>(tag);
  m.values.resize(static_cast<std::size_t>(m.rows) * m.dim);
  in.read(reinterpret_cast<char*>(m.values.data()),
          static_cast<std::streamsize>(m.values.size() * sizeof(float)));
  require(in.good(), "embfile: truncated payload in " + path);
  const std::string trailer{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto j = nlohmann::json::parse(trailer);
  m.row_keys = j.at("row_keys").get<std::vector<std::string>>();
  require(m.row_keys.size() == m.rows, "embfile: row_keys length mismatch in " + path);
  return m;
}

}  // namespace stillact
