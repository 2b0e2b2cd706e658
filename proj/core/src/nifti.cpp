// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/nifti.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace rba {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr float kVoxOffset = 352.0f;

// NIfTI-1 datatype codes
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

std::int16_t expected_bitpix(std::int16_t datatype) {
  switch (datatype) {
    case kDtUint8: return 8;
    case kDtInt16: return 16;
    case kDtInt32: return 32;
    case kDtFloat32: return 32;
    case kDtFloat64: return 64;
    default: return -1;
  }
}

struct ByteReader {
  std::span<const std::uint8_t> bytes;
  bool swap = false;

  std::uint8_t u8(std::size_t off) const { return bytes[off]; }

  std::int16_t i16(std::size_t off) const {
    std::uint16_t v = std::uint16_t(bytes[off]) |
                      (std::uint16_t(bytes[off + 1]) << 8);
    if (swap) v = std::uint16_t((v >> 8) | (v << 8));
    return std::bit_cast<std::int16_t>(v);
  }

  std::int32_t i32(std::size_t off) const {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[off + std::size_t(i)]) << (8 * i);
    if (swap) v = byteswap32(v);
    return std::bit_cast<std::int32_t>(v);
  }

  float f32(std::size_t off) const {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[off + std::size_t(i)]) << (8 * i);
    if (swap) v = byteswap32(v);
    return std::bit_cast<float>(v);
  }

  static std::uint32_t byteswap32(std::uint32_t v) {
    return ((v & 0x000000ffu) << 24) | ((v & 0x0000ff00u) << 8) |
           ((v & 0x00ff0000u) >> 8) | ((v & 0xff000000u) >> 24);
  }
  static std::uint64_t byteswap64(std::uint64_t v) {
    return (std::uint64_t(byteswap32(std::uint32_t(v))) << 32) |
           byteswap32(std::uint32_t(v >> 32));
  }
};

struct ByteWriter {
  std::vector<std::uint8_t>& out;

  void u8(std::size_t off, std::uint8_t v) { out[off] = v; }
  void i16(std::size_t off, std::int16_t v) {
    auto u = std::bit_cast<std::uint16_t>(v);
    out[off] = std::uint8_t(u & 0xff);
    out[off + 1] = std::uint8_t(u >> 8);
  }
  void i32(std::size_t off, std::int32_t v) {
    auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out[off + std::size_t(i)] = std::uint8_t(u >> (8 * i));
  }
  void f32(std::size_t off, float v) {
    auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) out[off + std::size_t(i)] = std::uint8_t(u >> (8 * i));
  }
  void str(std::size_t off, const char* s, std::size_t n) {
    std::memcpy(out.data() + off, s, n);
  }
};

template <typename Raw>
double payload_value(std::span<const std::uint8_t> payload, std::size_t index,
                     bool swap) {
  Raw raw;
  if constexpr (sizeof(Raw) == 1) {
    std::uint8_t b = payload[index];
    std::memcpy(&raw, &b, 1);
  } else if constexpr (sizeof(Raw) == 2) {
    std::uint16_t v;
    std::memcpy(&v, payload.data() + index * 2, 2);
    if (swap) v = std::uint16_t((v >> 8) | (v << 8));
    std::memcpy(&raw, &v, 2);
  } else if constexpr (sizeof(Raw) == 4) {
    std::uint32_t v;
    std::memcpy(&v, payload.data() + index * 4, 4);
    if (swap) v = ByteReader::byteswap32(v);
    std::memcpy(&raw, &v, 4);
  } else {
    std::uint64_t v;
    std::memcpy(&v, payload.data() + index * 8, 8);
    if (swap) v = ByteReader::byteswap64(v);
    std::memcpy(&raw, &v, 8);
  }
  return double(raw);
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_nifti: cannot open '", path, "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace

bool is_gzip(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  // windowBits 15+16 selects the gzip wrapper; default header has mtime 0
  check(deflateInit2(&zs, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) ==
            Z_OK,
        "gzip: deflate initialization failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, uLong(bytes.size())));
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = uInt(bytes.size());
  zs.next_out = out.data();
  zs.avail_out = uInt(out.size());
  int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  check(rc == Z_STREAM_END, "gzip: compression failed (zlib code ", rc, ")");
  out.resize(zs.total_out);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
  z_stream zs{};
  check(inflateInit2(&zs, 15 + 16) == Z_OK,
        "gzip: inflate initialization failed");
  std::vector<std::uint8_t> out;
  out.resize(std::max<std::size_t>(bytes.size() * 4, 1 << 16));
  zs.next_in = const_cast<Bytef*>(bytes.data());
  zs.avail_in = uInt(bytes.size());
  std::size_t written = 0;
  int rc = Z_OK;
  while (true) {
    zs.next_out = out.data() + written;
    zs.avail_out = uInt(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    written = zs.total_out;
    if (rc == Z_STREAM_END) break;
    if (rc == Z_OK || rc == Z_BUF_ERROR) {
      check(!(rc == Z_BUF_ERROR && zs.avail_in == 0),
            "gzip: truncated stream");
      out.resize(out.size() * 2);
      continue;
    }
    inflateEnd(&zs);
    fail("gzip: corrupt stream (zlib code ", rc, ")");
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

Volume parse_nifti(std::span<const std::uint8_t> bytes,
                   const std::string& origin) {
  check(bytes.size() >= kHeaderSize, "nifti: '", origin,
        "': header truncated (got ", bytes.size(), " bytes, need ",
        kHeaderSize, ")");

  // magic first: it distinguishes the supported single-file form
  const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
  if (std::memcmp(magic, "ni1", 4) == 0)
    fail("nifti: '", origin,
         "': magic 'ni1' is the two-file header/image form, which is "
         "unsupported (single-file 'n+1' only)");
  check(std::memcmp(magic, "n+1", 4) == 0, "nifti: '", origin,
        "': bad magic bytes (not a NIfTI-1 single-file image)");

  // byte order: dim[0] must land in 1..7
  ByteReader r{bytes, false};
  std::int16_t rank = r.i16(40);
  if (rank < 1 || rank > 7) {
    r.swap = true;
    rank = r.i16(40);
    check(rank >= 1 && rank <= 7, "nifti: '", origin, "': dim[0] = ",
          ByteReader{bytes, false}.i16(40),
          " is implausible in either byte order");
  }
  check(r.i32(0) == 348, "nifti: '", origin, "': sizeof_hdr field is ",
        r.i32(0), ", expected 348");

  std::array<std::int64_t, 3> extents{1, 1, 1};
  for (int a = 0; a < 3 && a < rank; ++a) {
    std::int16_t e = r.i16(std::size_t(42 + 2 * a));
    check(e >= 1, "nifti: '", origin, "': dim[", a + 1,
          "] = ", e, " must be at least 1");
    extents[std::size_t(a)] = e;
  }
  for (int a = 4; a <= rank && a <= 7; ++a) {
    std::int16_t e = r.i16(std::size_t(40 + 2 * a));
    check(e <= 1, "nifti: '", origin, "': dim[", a, "] = ", e,
          " (multi-frame/time-series images are unsupported)");
  }

  const std::int16_t datatype = r.i16(70);
  const std::int16_t bitpix = r.i16(72);
  const std::int16_t want_bitpix = expected_bitpix(datatype);
  check(want_bitpix > 0, "nifti: '", origin, "': unsupported datatype code ",
        datatype);
  check(bitpix == want_bitpix, "nifti: '", origin, "': bitpix ", bitpix,
        " inconsistent with datatype ", datatype, " (expected ", want_bitpix,
        ")");

  Volume v;
  v.extents = extents;
  for (int a = 0; a < 3; ++a) {
    float pd = r.f32(std::size_t(76 + 4 * (a + 1)));
    v.spacing[std::size_t(a)] = pd > 0 ? double(pd) : 1.0;
  }

  float vox_offset = r.f32(108);
  check(vox_offset >= float(kHeaderSize), "nifti: '", origin,
        "': vox_offset ", vox_offset, " points inside the header");
  const auto offset = std::size_t(vox_offset);

  double slope = double(r.f32(112));
  double inter = double(r.f32(116));
  if (slope == 0.0) slope = 1.0;

  const std::int64_t n = v.numel();
  const std::size_t voxel_bytes = std::size_t(want_bitpix) / 8;
  check(bytes.size() >= offset + std::size_t(n) * voxel_bytes, "nifti: '",
        origin, "': truncated payload (need ",
        offset + std::size_t(n) * voxel_bytes, " bytes, file has ",
        bytes.size(), ")");

  auto payload = bytes.subspan(offset);
  v.data.resize(std::size_t(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double raw;
    switch (datatype) {
      case kDtUint8: raw = payload_value<std::uint8_t>(payload, std::size_t(i), r.swap); break;
      case kDtInt16: raw = payload_value<std::int16_t>(payload, std::size_t(i), r.swap); break;
      case kDtInt32: raw = payload_value<std::int32_t>(payload, std::size_t(i), r.swap); break;
      case kDtFloat32: raw = payload_value<float>(payload, std::size_t(i), r.swap); break;
      default: raw = payload_value<double>(payload, std::size_t(i), r.swap); break;
    }
    v.data[std::size_t(i)] = float(slope * raw + inter);
  }

  v.source_path = origin;
  v.source_header.assign(bytes.begin(), bytes.begin() + kHeaderSize);
  v.validate();
  return v;
}

Volume read_nifti(const std::string& path) {
  check(std::filesystem::exists(path), "read_nifti: '", path,
        "' does not exist");
  auto bytes = read_file_bytes(path);
  if (is_gzip(bytes)) {
    auto plain = gzip_decompress(bytes);
    return parse_nifti(plain, path);
  }
  return parse_nifti(bytes, path);
}

std::vector<std::uint8_t> serialize_nifti(const Volume& volume) {
  volume.validate();
  const std::int64_t n = volume.numel();
  std::vector<std::uint8_t> bytes(std::size_t(kVoxOffset) +
                                  std::size_t(n) * 4, 0);
  ByteWriter w{bytes};
  w.i32(0, 348);                       // sizeof_hdr
  w.u8(38, std::uint8_t('r'));         // regular
  w.i16(40, 3);                        // dim[0]
  for (int a = 0; a < 3; ++a)
    w.i16(std::size_t(42 + 2 * a), std::int16_t(volume.extents[std::size_t(a)]));
  for (int a = 4; a <= 7; ++a) w.i16(std::size_t(40 + 2 * a), 1);
  w.i16(70, kDtFloat32);               // datatype
  w.i16(72, 32);                       // bitpix
  w.f32(76, 1.0f);                     // pixdim[0] (qfac)
  for (int a = 0; a < 3; ++a)
    w.f32(std::size_t(80 + 4 * a), float(volume.spacing[std::size_t(a)]));
  w.f32(108, kVoxOffset);              // vox_offset
  w.f32(112, 1.0f);                    // scl_slope
  w.f32(116, 0.0f);                    // scl_inter
  w.u8(123, 2);                        // xyzt_units: millimetres
  w.str(148, "rba volumetric engine", 21);  // descrip
  w.str(344, "n+1\0", 4);              // magic
  // bytes 348..351 stay zero: no header extension

  std::size_t off = std::size_t(kVoxOffset);
  for (std::int64_t i = 0; i < n; ++i, off += 4)
    w.f32(off, volume.data[std::size_t(i)]);
  return bytes;
}

void write_nifti(const Volume& volume, const std::string& path,
                 bool compress) {
  auto bytes = serialize_nifti(volume);
  if (compress) bytes = gzip_compress(bytes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "write_nifti: cannot open '", path, "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  check(out.good(), "write_nifti: write to '", path, "' failed");
}

}  // namespace rba
