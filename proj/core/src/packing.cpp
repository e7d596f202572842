#include "ptq/packing.hpp"

#include <stdexcept>
#include <string>

namespace ptq {

namespace {

void check_bits(int bits) {
    if (bits < 1 || bits > 8) {
        throw std::invalid_argument("packing: bits must be in [1,8]");
    }
}

} // namespace

size_t packed_payload_size(size_t count, int bits) {
    check_bits(bits);
    return (count * (size_t) bits + 7) / 8;
}

PackedCodes pack_codes(std::span<const uint32_t> values, int bits) {
    check_bits(bits);
    const uint32_t limit = 1u << bits;

    PackedCodes out;
    out.bits = bits;
    out.count = values.size();
    out.bytes.assign(packed_payload_size(values.size(), bits), 0);

    size_t bitpos = 0;
    for (uint32_t v : values) {
        if (v >= limit) {
            throw std::invalid_argument("pack_codes: value " + std::to_string(v) +
                                        " does not fit in " + std::to_string(bits) + " bits");
        }
        const size_t byte = bitpos >> 3;
        const int shift = (int) (bitpos & 7);
        out.bytes[byte] |= (uint8_t) (v << shift);
        if (shift + bits > 8) {
            out.bytes[byte + 1] |= (uint8_t) (v >> (8 - shift));
        }
        bitpos += (size_t) bits;
    }
    return out;
}

std::vector<uint32_t> unpack_codes(const PackedCodes & packed) {
    check_bits(packed.bits);
    if (packed.bytes.size() != packed_payload_size(packed.count, packed.bits)) {
        throw std::invalid_argument("unpack_codes: payload size mismatch");
    }
    const uint32_t mask = (1u << packed.bits) - 1;

    std::vector<uint32_t> out(packed.count);
    size_t bitpos = 0;
    for (size_t i = 0; i < packed.count; i++) {
        const size_t byte = bitpos >> 3;
        const int shift = (int) (bitpos & 7);
        uint32_t v = (uint32_t) packed.bytes[byte] >> shift;
        if (shift + packed.bits > 8) {
            v |= (uint32_t) packed.bytes[byte + 1] << (8 - shift);
        }
        out[i] = v & mask;
        bitpos += (size_t) packed.bits;
    }
    return out;
}

OddBitPlanes split_odd(std::span<const uint32_t> values) {
    std::vector<uint32_t> low(values.size());
    std::vector<uint32_t> high(values.size());
    for (size_t i = 0; i < values.size(); i++) {
        if (values[i] >= 32) {
            throw std::invalid_argument("split_odd: value does not fit in 5 bits");
        }
        low[i] = values[i] & 0xF;
        high[i] = values[i] >> 4;
    }
    OddBitPlanes planes;
    planes.low = pack_codes(low, 4);
    planes.high = pack_codes(high, 1);
    planes.count = values.size();
    return planes;
}

std::vector<uint32_t> join_odd(const OddBitPlanes & planes) {
    if (planes.low.count != planes.count || planes.high.count != planes.count) {
        throw std::invalid_argument("join_odd: plane lengths disagree");
    }
    const auto low = unpack_codes(planes.low);
    const auto high = unpack_codes(planes.high);
    std::vector<uint32_t> out(planes.count);
    for (size_t i = 0; i < planes.count; i++) {
        out[i] = low[i] | (high[i] << 4);
    }
    return out;
}

std::vector<uint32_t> codes_to_unsigned(std::span<const int32_t> codes, int qmin, int bits) {
    check_bits(bits);
    const int32_t qmax = qmin + (int32_t) ((1u << bits) - 1);
    std::vector<uint32_t> out(codes.size());
    for (size_t i = 0; i < codes.size(); i++) {
        if (codes[i] < qmin || codes[i] > qmax) {
            throw std::out_of_range("codes_to_unsigned: code outside [qmin, qmin + 2^bits - 1]");
        }
        out[i] = (uint32_t) (codes[i] - qmin);
    }
    return out;
}

std::vector<int32_t> unsigned_to_codes(std::span<const uint32_t> values, int qmin, int bits) {
    check_bits(bits);
    const uint32_t limit = 1u << bits;
    std::vector<int32_t> out(values.size());
    for (size_t i = 0; i < values.size(); i++) {
        if (values[i] >= limit) {
            throw std::out_of_range("unsigned_to_codes: value does not fit in field width");
        }
        out[i] = (int32_t) values[i] + qmin;
    }
    return out;
}

} // namespace ptq
