// SPDX-License-Identifier: Apache-2.0

#include "binio.hpp"

#include <fmt/format.h>
#include <unistd.h>

#include <fstream>
#include <iterator>
#include <limits>

namespace igds::binio {

void Writer::block(const std::string& name, const RealMatrix& m) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    fail(ErrorKind::format, "block name too long");
  }
  u16(static_cast<std::uint16_t>(name.size()));
  bytes(name);
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.flat()) f32(static_cast<float>(v));
}

std::string Reader::bytes(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

Reader::Block Reader::block() {
  Block b;
  b.name = bytes(u16());
  const std::size_t rows = u32();
  const std::size_t cols = u32();
  need(rows * cols * sizeof(float));
  std::vector<double> values(rows * cols);
  for (auto& v : values) v = static_cast<double>(f32());
  b.value = RealMatrix(rows, cols, std::move(values));
  return b;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += fmt::format(".tmp.{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, fmt::format("cannot write {}", tmp.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::io, fmt::format("short write to {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

}  // namespace igds::binio
