#include "coder.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"

namespace ffabic {

SymbolTable quantize_pmf(const std::vector<double>& pmf) {
    size_t n = pmf.size();
    if (n == 0 || n > kProbTotal) throw contract_error("pmf size out of range");
    std::vector<uint32_t> freq(n);
    int64_t total = 0;
    for (size_t i = 0; i < n; ++i) {
        double p = pmf[i];
        if (!(p >= 0.0) || p > 1.0 + 1e-9) throw contract_error("pmf entries must be probabilities");
        freq[i] = (uint32_t)std::max<long>(1, std::lround(p * (double)kProbTotal));
        total += freq[i];
    }
    // force the exact total; the largest bin absorbs the rounding drift and is
    // never driven below 1
    while (total != kProbTotal) {
        size_t big = (size_t)(std::max_element(freq.begin(), freq.end()) - freq.begin());
        int64_t diff = (int64_t)kProbTotal - total;
        int64_t room = (int64_t)freq[big] - 1;
        int64_t step = diff > 0 ? diff : std::max(diff, -room);
        if (step == 0) throw contract_error("pmf cannot be normalized to 16 bits");
        freq[big] = (uint32_t)((int64_t)freq[big] + step);
        total += step;
    }
    SymbolTable t;
    t.cum.resize(n + 1);
    t.cum[0] = 0;
    for (size_t i = 0; i < n; ++i) t.cum[i + 1] = t.cum[i] + freq[i];
    return t;
}

void RangeEncoder::shift_low() {
    if ((uint32_t)(low_ >> 32) != 0 || (uint32_t)low_ < 0xFF000000u) {
        uint8_t carry = (uint8_t)(low_ >> 32);
        uint8_t byte = cache_;
        do {
            out_.push_back((uint8_t)(byte + carry));
            byte = 0xFF;
        } while (--pending_ != 0);
        cache_ = (uint8_t)(low_ >> 24);
    }
    ++pending_;
    low_ = (low_ & 0x00FFFFFFull) << 8;
}

void RangeEncoder::encode(uint32_t start, uint32_t freq, uint32_t total) {
    if (freq == 0 || start + freq > total) throw contract_error("bad coding interval");
    range_ /= total;
    low_ += (uint64_t)start * range_;
    range_ *= freq;
    while (range_ < (1u << 24)) {
        range_ <<= 8;
        shift_low();
    }
}

std::vector<uint8_t> RangeEncoder::finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t len) : data_(data), len_(len) {
    next_byte();  // the encoder's initial cache byte
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
    if (pos_ >= len_) throw integrity_error("range decoder ran past the end of its stream");
    return data_[pos_++];
}

uint32_t RangeDecoder::decode_freq(uint32_t total) {
    range_ /= total;
    uint32_t f = (uint32_t)(code_ / range_);
    return f >= total ? total - 1 : f;
}

void RangeDecoder::decode_update(uint32_t start, uint32_t freq) {
    code_ -= (uint64_t)start * range_;
    range_ *= freq;
    while (range_ < (1u << 24)) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
}

int RangeDecoder::decode_symbol(const SymbolTable& t) {
    uint32_t f = decode_freq(kProbTotal);
    // first entry > f, then step back to the owning symbol
    auto it = std::upper_bound(t.cum.begin(), t.cum.end(), f);
    int sym = (int)(it - t.cum.begin()) - 1;
    decode_update(t.start(sym), t.freq(sym));
    return sym;
}

uint32_t RangeDecoder::decode_raw16() {
    uint32_t f = decode_freq(kProbTotal);
    decode_update(f, 1);
    return f;
}

void encode_value(RangeEncoder& enc, const SymbolTable& t, int64_t k) {
    if (t.size() != kAlphabetSize + 1) throw contract_error("value table has the wrong alphabet");
    if (k >= kAlphabetMin && k <= kAlphabetMax) {
        enc.encode_symbol(t, (int)(k - kAlphabetMin));
        return;
    }
    if (k < INT32_MIN || k > INT32_MAX) throw input_error("latent value out of coding range");
    enc.encode_symbol(t, kAlphabetSize);
    uint32_t u = (uint32_t)(k + 2147483648LL);
    enc.encode_raw16(u >> 16);
    enc.encode_raw16(u & 0xFFFFu);
}

int64_t decode_value(RangeDecoder& dec, const SymbolTable& t) {
    if (t.size() != kAlphabetSize + 1) throw contract_error("value table has the wrong alphabet");
    int sym = dec.decode_symbol(t);
    if (sym < kAlphabetSize) return sym + kAlphabetMin;
    uint32_t hi = dec.decode_raw16();
    uint32_t lo = dec.decode_raw16();
    return (int64_t)((hi << 16) | lo) - 2147483648LL;
}

SymbolTable gaussian_table(float sigma) {
    const double inv = 1.0 / ((double)sigma * 1.4142135623730951);
    std::vector<double> pmf((size_t)kAlphabetSize + 1);
    double inside = 0.0;
    for (int k = kAlphabetMin; k <= kAlphabetMax; ++k) {
        double p = 0.5 * (std::erf((k + 0.5) * inv) - std::erf((k - 0.5) * inv));
        pmf[(size_t)(k - kAlphabetMin)] = p;
        inside += p;
    }
    pmf.back() = std::max(0.0, 1.0 - inside);
    return quantize_pmf(pmf);
}

}  // namespace ffabic
