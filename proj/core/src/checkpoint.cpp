// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "container payloads are written as raw little-endian words");

namespace rba {

namespace {

constexpr std::uint8_t kDtypeF32 = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    check(pos + n <= bytes.size(), "container: '", path,
          "': corrupted length while reading ", what, " (need ", n,
          " bytes at offset ", pos, ", file has ", bytes.size(), ")");
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = std::uint16_t(bytes[pos]) |
                      std::uint16_t(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + std::size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(std::size_t n) {
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void write_container(const Container& container, const std::string& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kContainerMagic, kContainerMagic + 8);
  put_u32(out, container.version);
  put_u64(out, container.metadata.size());
  out.insert(out.end(), container.metadata.begin(), container.metadata.end());

  put_u32(out, std::uint32_t(container.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : container.tensors) {
    check(tensor.valid(), "container: tensor '", name, "' is empty");
    check(name.size() <= 0xffff, "container: tensor name too long");
    put_u16(out, std::uint16_t(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF32);
    out.push_back(std::uint8_t(tensor.rank()));
    for (auto e : tensor.shape()) put_u64(out, std::uint64_t(e));
    const std::uint64_t len = std::uint64_t(tensor.numel()) * 4;
    put_u64(out, offset);
    put_u64(out, len);
    offset += len;
  }
  put_u64(out, offset);
  const std::size_t payload_start = out.size();
  out.resize(out.size() + offset);
  // payloads packed sequentially, matching the offsets assigned above
  std::size_t cursor = payload_start;
  for (const auto& [name, tensor] : container.tensors) {
    const auto span = tensor.data();
    std::memcpy(out.data() + cursor, span.data(), span.size() * 4);
    cursor += span.size() * 4;
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "container: cannot open '", path, "' for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          std::streamsize(out.size()));
  check(f.good(), "container: write to '", path, "' failed");
}

Container read_container(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "container: cannot open '", path, "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  Cursor c{bytes, 0, path};

  c.need(8, "magic");
  check(std::memcmp(bytes.data(), kContainerMagic, 8) == 0, "container: '",
        path, "': bad magic (not an rba container)");
  c.pos = 8;

  Container out;
  out.version = c.u32();
  check(out.version == kContainerVersion, "container: '", path,
        "': unsupported format version ", out.version, " (expected ",
        kContainerVersion, ")");

  const std::uint64_t meta_len = c.u64();
  check(meta_len <= bytes.size(), "container: '", path,
        "': corrupted metadata length ", meta_len);
  out.metadata = c.str(std::size_t(meta_len));

  const std::uint32_t count = c.u32();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, len;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = c.str(c.u16());
    const std::uint8_t dtype = (c.need(2, "dtype"), bytes[c.pos]);
    const std::uint8_t rank = bytes[c.pos + 1];
    c.pos += 2;
    check(dtype == kDtypeF32, "container: '", path, "': tensor '", e.name,
          "': unsupported dtype code ", int(dtype));
    check(rank <= kMaxRank, "container: '", path, "': tensor '", e.name,
          "': rank ", int(rank), " out of range");
    for (int r = 0; r < rank; ++r) e.shape.push_back(std::int64_t(c.u64()));
    e.offset = c.u64();
    e.len = c.u64();
    check(e.len == std::uint64_t(shape_numel(e.shape)) * 4, "container: '",
          path, "': tensor '", e.name, "': directory length ", e.len,
          " does not match shape ", shape_str(e.shape));
    entries.push_back(std::move(e));
  }

  const std::uint64_t payload_len = c.u64();
  check(c.pos + payload_len <= bytes.size(), "container: '", path,
        "': corrupted payload length ", payload_len, " (file has ",
        bytes.size() - c.pos, " bytes left)");
  const std::size_t payload_start = c.pos;

  for (auto& e : entries) {
    check(e.offset + e.len <= payload_len, "container: '", path,
          "': tensor '", e.name, "': payload range out of bounds");
    std::vector<float> data(std::size_t(e.len / 4));
    std::memcpy(data.data(), bytes.data() + payload_start + e.offset, e.len);
    out.tensors.emplace_back(e.name,
                             Tensor::from_data(e.shape, std::move(data)));
  }
  return out;
}

void save_tensor(const Tensor& tensor, const std::string& metadata_json,
                 const std::string& path) {
  Container c;
  c.metadata = metadata_json;
  c.tensors.emplace_back("tensor", tensor);
  write_container(c, path);
}

std::pair<Tensor, std::string> load_tensor(const std::string& path) {
  Container c = read_container(path);
  check(c.tensors.size() == 1 && c.tensors[0].first == "tensor",
        "container: '", path, "' is not a single-tensor file");
  return {c.tensors[0].second, c.metadata};
}

}  // namespace rba
