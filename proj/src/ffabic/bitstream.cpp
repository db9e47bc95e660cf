#include "bitstream.hpp"

#include "errors.hpp"

namespace ffabic {

size_t LatentStreams::total_bytes() const {
    size_t n = z.size();
    for (const auto& s : y) n += s.size();
    return n;
}

namespace {

void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }
void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back((uint8_t)v);
    b.push_back((uint8_t)(v >> 8));
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back((uint8_t)(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back((uint8_t)(v >> (8 * i)));
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > b.size()) throw format_error("truncated bitstream");
    }
    uint8_t u8() {
        need(1);
        return b[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = (uint16_t)(b[pos] | (b[pos + 1] << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= (uint32_t)b[pos + (size_t)i] << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= (uint64_t)b[pos + (size_t)i] << (8 * i);
        pos += 8;
        return v;
    }
    std::vector<uint8_t> bytes(size_t n) {
        need(n);
        std::vector<uint8_t> out(b.begin() + (long)pos, b.begin() + (long)(pos + n));
        pos += n;
        return out;
    }
};

}  // namespace

std::vector<uint8_t> pack_bitstream(const BitstreamHeader& h, const LatentStreams& s) {
    std::vector<uint8_t> b;
    b.reserve(kHeaderBytes + 44 + s.total_bytes());
    b.insert(b.end(), {'F', 'F', 'A', 'B'});
    put_u8(b, 1);
    put_u8(b, h.flags);
    put_u32(b, h.width);
    put_u32(b, h.height);
    put_u8(b, h.down_factor);
    put_u16(b, h.m);
    put_u64(b, h.model_hash);
    put_u32(b, (uint32_t)s.z.size());
    b.insert(b.end(), s.z.begin(), s.z.end());
    for (const auto& seg : s.y) {
        put_u32(b, (uint32_t)seg.size());
        b.insert(b.end(), seg.begin(), seg.end());
    }
    return b;
}

ParsedBitstream parse_bitstream(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (bytes[0] != 'F' || bytes[1] != 'F' || bytes[2] != 'A' || bytes[3] != 'B')
        throw format_error("not a coded-image stream (bad magic)");
    r.pos = 4;
    uint8_t version = r.u8();
    if (version != 1) throw format_error("unsupported bitstream version");

    ParsedBitstream out;
    out.header.flags = r.u8();
    out.header.width = r.u32();
    out.header.height = r.u32();
    out.header.down_factor = r.u8();
    out.header.m = r.u16();
    out.header.model_hash = r.u64();
    if (out.header.width == 0 || out.header.height == 0)
        throw format_error("bitstream header has empty image dimensions");

    out.streams.z = r.bytes(r.u32());
    for (auto& seg : out.streams.y) seg = r.bytes(r.u32());
    if (r.pos != bytes.size()) throw format_error("trailing bytes after bitstream payload");
    return out;
}

}  // namespace ffabic
