#pragma once

#include <cstdint>
#include <vector>

namespace ffabic {

// Frequency table for one symbol distribution, quantized to 16-bit totals.
// cum has one entry per symbol plus a terminator; cum.back() == 65536 and
// every symbol keeps mass >= 1 so any index stays codable.
struct SymbolTable {
    std::vector<uint32_t> cum;
    int size() const { return (int)cum.size() - 1; }
    uint32_t start(int s) const { return cum[(size_t)s]; }
    uint32_t freq(int s) const { return cum[(size_t)s + 1] - cum[(size_t)s]; }
};

inline constexpr uint32_t kProbTotal = 1u << 16;

SymbolTable quantize_pmf(const std::vector<double>& pmf);

// Carry-counting range coder (64-bit low, 32-bit range, byte renormalization
// below 2^24). The encoder emits one leading byte the decoder skips; flush
// costs five bytes, so per-stream overhead stays in single digits.
class RangeEncoder {
public:
    void encode(uint32_t start, uint32_t freq, uint32_t total);
    void encode_symbol(const SymbolTable& t, int sym) { encode(t.start(sym), t.freq(sym), kProbTotal); }
    void encode_raw16(uint32_t half) { encode(half, 1, kProbTotal); }
    std::vector<uint8_t> finish();

private:
    void shift_low();
    std::vector<uint8_t> out_;
    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    int64_t pending_ = 1;
};

class RangeDecoder {
public:
    RangeDecoder(const uint8_t* data, size_t len);
    uint32_t decode_freq(uint32_t total);
    void decode_update(uint32_t start, uint32_t freq);
    int decode_symbol(const SymbolTable& t);
    uint32_t decode_raw16();

private:
    uint8_t next_byte();
    const uint8_t* data_;
    size_t len_;
    size_t pos_ = 0;
    uint64_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
};

// Integer-latent symbol coding: values in [-64, 64] map to table entries
// directly; anything outside escapes to a raw 32-bit code.
inline constexpr int kAlphabetMin = -64;
inline constexpr int kAlphabetMax = 64;
inline constexpr int kAlphabetSize = kAlphabetMax - kAlphabetMin + 1;  // plus one escape slot

void encode_value(RangeEncoder& enc, const SymbolTable& t, int64_t k);
int64_t decode_value(RangeDecoder& dec, const SymbolTable& t);

// Discretized zero-mean Gaussian over the alphabet plus escape mass.
SymbolTable gaussian_table(float sigma);

}  // namespace ffabic
