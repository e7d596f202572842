#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ptq {

// Dense bitstream of fixed-width unsigned fields. Fields are laid down
// LSB-first within each byte, bytes in ascending address order, and the
// final byte is zero-padded. Example: values [1,2,3,4] at 4 bits pack to
// bytes [0x21, 0x43].
struct PackedCodes {
    int bits = 0;
    size_t count = 0;
    std::vector<uint8_t> bytes;
};

// ceil(count * bits / 8)
size_t packed_payload_size(size_t count, int bits);

// bits in [1,8]; every value must fit in the field width.
PackedCodes pack_codes(std::span<const uint32_t> values, int bits);

std::vector<uint32_t> unpack_codes(const PackedCodes & packed);

// 5-bit codes split into a dense 4-bit plane (low nibble) and a dense
// 1-bit plane (top bit): value 22 -> low 6, high 1.
struct OddBitPlanes {
    PackedCodes low;  // 4 bits per field
    PackedCodes high; // 1 bit per field
    size_t count = 0;
};

OddBitPlanes split_odd(std::span<const uint32_t> values);

std::vector<uint32_t> join_odd(const OddBitPlanes & planes);

// Wire form stores codes biased to unsigned: u = code - qmin.
std::vector<uint32_t> codes_to_unsigned(std::span<const int32_t> codes, int qmin, int bits);

std::vector<int32_t> unsigned_to_codes(std::span<const uint32_t> values, int qmin, int bits);

} // namespace ptq
