#ifndef UNICTRL_CHECKPOINT_HPP
#define UNICTRL_CHECKPOINT_HPP

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "unictrl/denoiser.hpp"
#include "unictrl/errors.hpp"

namespace unictrl {

// Checkpoint layout (all integers little-endian):
//   magic "UCTL" | u32 version | 11 x u32 config fields |
//   u32 param_count | per param: u32 name_len, name bytes,
//                     u32 ndim, ndim x i64 extents, u64 payload offset |
//   u64 payload byte size | payload (float32 little-endian)
// Parameter extents and offsets must tile the payload exactly, with no gaps
// and no overlaps.

constexpr uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline void put_i64(std::vector<uint8_t>& out, int64_t v) { put_u64(out, uint64_t(v)); }

inline void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Reader {
  public:
    Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(data_[pos_ + size_t(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(data_[pos_ + size_t(i)]) << (8 * i);
        pos_ += 8;
        return v;
    }
    int64_t i64() { return int64_t(u64()); }
    float f32() {
        uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    const uint8_t* raw(size_t n) {
        need(n);
        const uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    size_t remaining() const { return size_ - pos_; }

  private:
    void need(size_t n) const {
        if (pos_ + n > size_) {
            fail(ErrorCategory::checkpoint_truncated, "checkpoint: file ends mid-record");
        }
    }
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

inline std::vector<uint32_t> config_fields(const DenoiserConfig& c) {
    return {uint32_t(c.frames),     uint32_t(c.height),     uint32_t(c.width),
            uint32_t(c.channels),   uint32_t(c.patch),      uint32_t(c.model_dim),
            uint32_t(c.head_count), uint32_t(c.block_count), uint32_t(c.cond_dim),
            uint32_t(c.vocab_size), uint32_t(c.max_text_tokens)};
}

}  // namespace ckpt_detail

inline void save_checkpoint(const DenoiserModel& model, const std::string& path) {
    using namespace ckpt_detail;
    std::vector<uint8_t> out;
    out.insert(out.end(), {'U', 'C', 'T', 'L'});
    put_u32(out, kCheckpointVersion);
    for (uint32_t f : config_fields(model.config)) put_u32(out, f);

    put_u32(out, uint32_t(model.params.size()));
    uint64_t offset = 0;
    for (size_t i = 0; i < model.params.size(); ++i) {
        const std::string& name = model.param_names[i];
        const Tensor& t = model.params[i];
        put_u32(out, uint32_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, uint32_t(t.rank()));
        for (int64_t d : t.shape()) put_i64(out, d);
        put_u64(out, offset);
        offset += uint64_t(t.numel()) * 4;
    }
    put_u64(out, offset);
    for (const Tensor& t : model.params) {
        for (int64_t j = 0; j < t.numel(); ++j) put_f32(out, t.data()[j]);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCategory::io, "cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), std::streamsize(out.size()));
    if (!f) fail(ErrorCategory::io, "write failed: " + path);
}

inline DenoiserModel load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCategory::io, "cannot open for reading: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    Reader r(bytes.data(), bytes.size());

    if (r.str(4) != "UCTL") {
        fail(ErrorCategory::checkpoint_bad_magic, "not a checkpoint: " + path);
    }
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        fail(ErrorCategory::checkpoint_version,
             "checkpoint version " + std::to_string(version) + ", expected " +
                 std::to_string(kCheckpointVersion));
    }
    DenoiserConfig cfg;
    cfg.frames = int(r.u32());
    cfg.height = int(r.u32());
    cfg.width = int(r.u32());
    cfg.channels = int(r.u32());
    cfg.patch = int(r.u32());
    cfg.model_dim = int(r.u32());
    cfg.head_count = int(r.u32());
    cfg.block_count = int(r.u32());
    cfg.cond_dim = int(r.u32());
    cfg.vocab_size = int(r.u32());
    cfg.max_text_tokens = int(r.u32());
    try {
        cfg.validate();
    } catch (const Error&) {
        fail(ErrorCategory::checkpoint_integrity, "checkpoint: config fields are invalid");
    }

    struct Entry {
        std::string name;
        Shape shape;
        uint64_t offset;
        uint64_t bytes;
    };
    const uint32_t count = r.u32();
    std::vector<Entry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        const uint32_t name_len = r.u32();
        if (name_len > 4096) {
            fail(ErrorCategory::checkpoint_integrity, "checkpoint: unreasonable name length");
        }
        e.name = r.str(name_len);
        const uint32_t ndim = r.u32();
        if (ndim > 8) fail(ErrorCategory::checkpoint_integrity, "checkpoint: unreasonable rank");
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            const int64_t ext = r.i64();
            if (ext <= 0 || ext > (int64_t(1) << 32)) {
                fail(ErrorCategory::checkpoint_integrity, "checkpoint: bad extent");
            }
            e.shape.push_back(ext);
            numel *= ext;
        }
        e.offset = r.u64();
        e.bytes = uint64_t(numel) * 4;
        entries.push_back(std::move(e));
    }
    const uint64_t payload_bytes = r.u64();

    // Offsets must tile [0, payload) exactly.
    std::vector<size_t> order(entries.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return entries[a].offset < entries[b].offset; });
    uint64_t cursor = 0;
    for (size_t i : order) {
        if (entries[i].offset != cursor) {
            fail(ErrorCategory::checkpoint_integrity,
                 "checkpoint: parameter table has gaps or overlaps");
        }
        cursor += entries[i].bytes;
    }
    if (cursor != payload_bytes) {
        fail(ErrorCategory::checkpoint_integrity,
             "checkpoint: parameter table does not tile the payload");
    }
    if (r.remaining() < payload_bytes) {
        fail(ErrorCategory::checkpoint_truncated, "checkpoint: payload shorter than declared");
    }

    // Model skeleton defines the canonical parameter set for the config; the
    // file must provide exactly those names with matching shapes.
    DenoiserModel model = DenoiserModel::random_init(cfg, 0);
    if (entries.size() != model.params.size()) {
        fail(ErrorCategory::checkpoint_integrity,
             "checkpoint: parameter count does not match the architecture");
    }
    const uint8_t* payload = r.raw(size_t(payload_bytes));
    std::vector<char> seen(model.params.size(), 0);
    for (const Entry& e : entries) {
        auto it = std::find(model.param_names.begin(), model.param_names.end(), e.name);
        if (it == model.param_names.end()) {
            fail(ErrorCategory::checkpoint_integrity,
                 "checkpoint: unknown parameter '" + e.name + "'");
        }
        const size_t idx = size_t(it - model.param_names.begin());
        if (seen[idx]) {
            fail(ErrorCategory::checkpoint_integrity,
                 "checkpoint: duplicate parameter '" + e.name + "'");
        }
        seen[idx] = 1;
        if (model.params[idx].shape() != e.shape) {
            fail(ErrorCategory::checkpoint_integrity,
                 "checkpoint: shape mismatch for '" + e.name + "'");
        }
        Tensor t(e.shape);
        float* dst = t.mutable_data();
        const uint8_t* src = payload + e.offset;
        for (int64_t j = 0; j < t.numel(); ++j) {
            uint32_t bits = uint32_t(src[j * 4]) | (uint32_t(src[j * 4 + 1]) << 8) |
                            (uint32_t(src[j * 4 + 2]) << 16) | (uint32_t(src[j * 4 + 3]) << 24);
            float v;
            std::memcpy(&v, &bits, 4);
            dst[j] = v;
        }
        model.params[idx] = std::move(t);
    }
    return model;
}

}  // namespace unictrl

#endif
