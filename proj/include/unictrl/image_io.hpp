#ifndef UNICTRL_IMAGE_IO_HPP
#define UNICTRL_IMAGE_IO_HPP

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "unictrl/errors.hpp"
#include "unictrl/video.hpp"

namespace unictrl {

// 8-bit RGB image buffer.
struct Image8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel
};

inline Image8 frame_to_image(const VideoFrames& v, int frame) {
    Image8 img;
    img.width = v.width;
    img.height = v.height;
    img.rgb.resize(size_t(v.width) * v.height * 3);
    const float* src = v.frame(frame);
    for (size_t i = 0; i < img.rgb.size(); ++i) {
        float x = src[i];
        x = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
        img.rgb[i] = uint8_t(x * 255.0f + 0.5f);
    }
    return img;
}

namespace image_detail {

inline void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v >> 24));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v));
}

inline uint32_t read_u32_be(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

inline void append_chunk(std::vector<uint8_t>& out, const char type[4],
                         const std::vector<uint8_t>& data) {
    put_u32_be(out, uint32_t(data.size()));
    const size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = uint32_t(::crc32(0L, out.data() + type_at, uInt(4 + data.size())));
    put_u32_be(out, crc);
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCategory::io, "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) fail(ErrorCategory::io, "write failed: " + path);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot open for reading: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace image_detail

// ---------------------------------------------------------------------------
// PNG, 8-bit RGB non-interlaced
// ---------------------------------------------------------------------------

inline std::vector<uint8_t> encode_png(const Image8& img) {
    using namespace image_detail;
    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, uint32_t(img.width));
    put_u32_be(ihdr, uint32_t(img.height));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // color type: truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter method
    ihdr.push_back(0);   // interlace
    append_chunk(out, "IHDR", ihdr);

    const size_t stride = size_t(img.width) * 3;
    std::vector<uint8_t> raw;
    raw.reserve((stride + 1) * size_t(img.height));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), img.rgb.begin() + int64_t(y) * int64_t(stride),
                   img.rgb.begin() + int64_t(y + 1) * int64_t(stride));
    }
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK) {
        fail(ErrorCategory::internal, "png: deflate failed");
    }
    compressed.resize(bound);
    append_chunk(out, "IDAT", compressed);
    append_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::string& path, const Image8& img) {
    image_detail::write_file(path, encode_png(img));
}

// Reads the PNG subset this tool writes: 8-bit RGB, non-interlaced, any
// standard scanline filter.
inline Image8 decode_png(const std::vector<uint8_t>& bytes) {
    using namespace image_detail;
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) {
        fail(ErrorCategory::data, "png: bad signature");
    }
    Image8 img;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool seen_ihdr = false;
    while (pos + 8 <= bytes.size()) {
        const uint32_t len = read_u32_be(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) fail(ErrorCategory::data, "png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
        const uint8_t* data = bytes.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) fail(ErrorCategory::data, "png: bad IHDR");
            img.width = int(read_u32_be(data));
            img.height = int(read_u32_be(data + 4));
            if (data[8] != 8 || data[9] != 2 || data[12] != 0) {
                fail(ErrorCategory::data, "png: only 8-bit RGB non-interlaced is supported");
            }
            seen_ihdr = true;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (!seen_ihdr || img.width <= 0 || img.height <= 0) {
        fail(ErrorCategory::data, "png: missing or invalid header");
    }

    const size_t stride = size_t(img.width) * 3;
    std::vector<uint8_t> raw((stride + 1) * size_t(img.height));
    uLongf raw_len = uLongf(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
        raw_len != raw.size()) {
        fail(ErrorCategory::data, "png: inflate failed");
    }

    img.rgb.assign(stride * size_t(img.height), 0);
    std::vector<uint8_t> prev(stride, 0);
    auto paeth = [](int a, int b, int c) {
        const int p = a + b - c;
        const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
        if (pa <= pb && pa <= pc) return a;
        if (pb <= pc) return b;
        return c;
    };
    for (int y = 0; y < img.height; ++y) {
        const uint8_t* line = raw.data() + size_t(y) * (stride + 1);
        const uint8_t filter = line[0];
        uint8_t* cur = img.rgb.data() + size_t(y) * stride;
        for (size_t x = 0; x < stride; ++x) {
            const int rawv = line[1 + x];
            const int left = x >= 3 ? cur[x - 3] : 0;
            const int up = prev[x];
            const int upleft = x >= 3 ? prev[x - 3] : 0;
            int v = 0;
            switch (filter) {
                case 0: v = rawv; break;
                case 1: v = rawv + left; break;
                case 2: v = rawv + up; break;
                case 3: v = rawv + (left + up) / 2; break;
                case 4: v = rawv + paeth(left, up, upleft); break;
                default: fail(ErrorCategory::data, "png: unknown filter type");
            }
            cur[x] = uint8_t(v);
        }
        std::memcpy(prev.data(), cur, stride);
    }
    return img;
}

inline Image8 read_png(const std::string& path) {
    return decode_png(image_detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Animated GIF with a fixed global palette (216-color cube plus 40 grays)
// ---------------------------------------------------------------------------

namespace gif_detail {

inline const std::array<std::array<uint8_t, 3>, 256>& palette() {
    static const auto table = [] {
        std::array<std::array<uint8_t, 3>, 256> p{};
        int i = 0;
        for (int r = 0; r < 6; ++r)
            for (int g = 0; g < 6; ++g)
                for (int b = 0; b < 6; ++b) p[size_t(i++)] = {uint8_t(r * 51), uint8_t(g * 51), uint8_t(b * 51)};
        for (int k = 0; k < 40; ++k) {
            const uint8_t v = uint8_t((k * 255) / 39);
            p[size_t(i++)] = {v, v, v};
        }
        return p;
    }();
    return table;
}

inline uint8_t nearest_index(uint8_t r, uint8_t g, uint8_t b) {
    const auto& p = palette();
    int best = 0;
    int64_t best_d = INT64_MAX;
    for (int i = 0; i < 256; ++i) {
        const int64_t dr = int64_t(r) - p[size_t(i)][0];
        const int64_t dg = int64_t(g) - p[size_t(i)][1];
        const int64_t db = int64_t(b) - p[size_t(i)][2];
        const int64_t d = dr * dr + dg * dg + db * db;
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return uint8_t(best);
}

class BitPacker {
  public:
    void put(uint32_t code, int width) {
        acc_ |= uint64_t(code) << bits_;
        bits_ += width;
        while (bits_ >= 8) {
            bytes_.push_back(uint8_t(acc_ & 0xff));
            acc_ >>= 8;
            bits_ -= 8;
        }
    }
    std::vector<uint8_t> finish() {
        if (bits_ > 0) bytes_.push_back(uint8_t(acc_ & 0xff));
        return std::move(bytes_);
    }

  private:
    std::vector<uint8_t> bytes_;
    uint64_t acc_ = 0;
    int bits_ = 0;
};

// Variable-width LZW over 8-bit palette indices, per the GIF89a spec.
inline std::vector<uint8_t> lzw_encode(const std::vector<uint8_t>& indices) {
    constexpr int kMinCode = 8;
    const uint32_t clear = 1u << kMinCode;
    const uint32_t end = clear + 1;

    std::unordered_map<uint32_t, uint32_t> dict;
    uint32_t next_code = end + 1;
    int width = kMinCode + 1;
    BitPacker packer;
    packer.put(clear, width);

    uint32_t cur = 0xffffffff;
    for (uint8_t byte : indices) {
        if (cur == 0xffffffff) {
            cur = byte;
            continue;
        }
        const uint32_t key = (cur << 8) | byte;
        auto it = dict.find(key);
        if (it != dict.end()) {
            cur = it->second;
            continue;
        }
        packer.put(cur, width);
        if (next_code < 4096) {
            dict.emplace(key, next_code);
            if (next_code == (1u << width) && width < 12) ++width;
            ++next_code;
        } else {
            packer.put(clear, width);
            dict.clear();
            next_code = end + 1;
            width = kMinCode + 1;
        }
        cur = byte;
    }
    if (cur != 0xffffffff) packer.put(cur, width);
    packer.put(end, width);
    return packer.finish();
}

inline void put_u16_le(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(uint8_t(v & 0xff));
    out.push_back(uint8_t(v >> 8));
}

}  // namespace gif_detail

// Animated GIF, one global palette, fixed delay in hundredths of a second.
inline std::vector<uint8_t> encode_gif(const VideoFrames& video, int delay_cs = 12) {
    using namespace gif_detail;
    if (video.frame_count < 1) fail(ErrorCategory::data, "gif: need at least one frame");
    std::vector<uint8_t> out;
    out.insert(out.end(), {'G', 'I', 'F', '8', '9', 'a'});
    put_u16_le(out, uint16_t(video.width));
    put_u16_le(out, uint16_t(video.height));
    out.push_back(0xf7);  // global color table, 256 entries, 8 bits
    out.push_back(0);     // background color index
    out.push_back(0);     // aspect ratio
    for (const auto& c : palette()) out.insert(out.end(), c.begin(), c.end());

    // Netscape looping extension: loop forever.
    out.insert(out.end(), {0x21, 0xff, 0x0b});
    const char* ns = "NETSCAPE2.0";
    out.insert(out.end(), ns, ns + 11);
    out.insert(out.end(), {0x03, 0x01, 0x00, 0x00, 0x00});

    for (int f = 0; f < video.frame_count; ++f) {
        out.insert(out.end(), {0x21, 0xf9, 0x04, 0x04});
        put_u16_le(out, uint16_t(delay_cs));
        out.push_back(0);  // no transparency
        out.push_back(0);
        out.push_back(0x2c);  // image descriptor
        put_u16_le(out, 0);
        put_u16_le(out, 0);
        put_u16_le(out, uint16_t(video.width));
        put_u16_le(out, uint16_t(video.height));
        out.push_back(0);  // no local color table

        Image8 img = frame_to_image(video, f);
        std::vector<uint8_t> indices(size_t(video.width) * video.height);
        for (size_t i = 0; i < indices.size(); ++i) {
            indices[i] = nearest_index(img.rgb[i * 3], img.rgb[i * 3 + 1], img.rgb[i * 3 + 2]);
        }
        std::vector<uint8_t> lzw = lzw_encode(indices);
        out.push_back(8);  // LZW minimum code size
        size_t pos = 0;
        while (pos < lzw.size()) {
            const size_t n = std::min<size_t>(255, lzw.size() - pos);
            out.push_back(uint8_t(n));
            out.insert(out.end(), lzw.begin() + int64_t(pos), lzw.begin() + int64_t(pos + n));
            pos += n;
        }
        out.push_back(0);  // block terminator
    }
    out.push_back(0x3b);  // trailer
    return out;
}

inline void write_gif(const std::string& path, const VideoFrames& video, int delay_cs = 12) {
    image_detail::write_file(path, encode_gif(video, delay_cs));
}

}  // namespace unictrl

#endif
