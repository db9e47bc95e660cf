#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace ffabic {

// On-disk container, all integers little-endian:
//   "FFAB" | version u8 = 1 | flags u8 | width u32 | height u32 |
//   down_factor u8 | M u16 | model_hash u64 |
//   z_len u32 | z bytes | 10 x (slice_len u32 | slice bytes)
struct BitstreamHeader {
    uint32_t width = 0;
    uint32_t height = 0;
    uint8_t down_factor = 0;
    uint16_t m = 0;
    uint64_t model_hash = 0;
    uint8_t flags = 0;
};

struct LatentStreams {
    std::vector<uint8_t> z;
    std::array<std::vector<uint8_t>, 10> y;
    size_t total_bytes() const;
};

inline constexpr size_t kHeaderBytes = 25;  // fixed fields before the length prefixes

std::vector<uint8_t> pack_bitstream(const BitstreamHeader& h, const LatentStreams& s);

struct ParsedBitstream {
    BitstreamHeader header;
    LatentStreams streams;
};

// Throws format_error on bad magic, unknown version, truncation, or trailing
// garbage.
ParsedBitstream parse_bitstream(const std::vector<uint8_t>& bytes);

}  // namespace ffabic
