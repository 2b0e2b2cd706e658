// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rba/volume.hpp"

namespace rba {

/// Reader/writer for NIfTI-1 single-file volumes (.nii, plus gzip-compressed
/// .nii.gz detected by the 0x1F 0x8B signature). Only the single-file form
/// (magic "n+1") is accepted; the two-file form and NIfTI-2/ANALYZE are
/// rejected. Byte order is detected from the plausibility of dim[0].
/// Supported voxel types: unsigned 8-bit, signed 16/32-bit integers, and
/// 32/64-bit floats; values are returned as 32-bit reals with the header's
/// scl_slope/scl_inter applied (slope 0 is treated as 1).
///
/// Orientation (qform/sform) is carried along in the preserved header bytes
/// but never resampled; axes are taken as stored.
Volume read_nifti(const std::string& path);

/// Writes extents/spacing/voxels as a little-endian 32-bit real single-file
/// NIfTI-1 image (348-byte header, 4 filler bytes, vox_offset 352,
/// scl_slope 1). Output bytes are a pure function of the volume, so fixed
/// pipelines reproduce files bit-for-bit.
void write_nifti(const Volume& volume, const std::string& path,
                 bool compress = false);

/// In-memory versions, used by the gzip path and the conformance tests.
Volume parse_nifti(std::span<const std::uint8_t> bytes,
                   const std::string& origin);
std::vector<std::uint8_t> serialize_nifti(const Volume& volume);

/// RFC 1952 gzip via zlib. Compression output is deterministic (fixed level,
/// zero mtime).
bool is_gzip(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

}  // namespace rba
