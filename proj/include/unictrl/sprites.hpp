#ifndef UNICTRL_SPRITES_HPP
#define UNICTRL_SPRITES_HPP

#include <array>
#include <string>
#include <vector>

#include "unictrl/rng.hpp"
#include "unictrl/tensor.hpp"
#include "unictrl/video.hpp"

namespace unictrl {

// Synthetic moving-sprite clips: one solid shape on a black background,
// translating with reflective bounces at the borders.

constexpr int kSpriteCanvas = 64;

enum class SpriteKind { square, circle };

struct SpriteColor {
    const char* name;
    std::array<float, 3> rgb;
};

inline const std::array<SpriteColor, 3>& sprite_palette() {
    static const std::array<SpriteColor, 3> palette{{
        {"red", {1.0f, 0.0f, 0.0f}},
        {"green", {0.0f, 1.0f, 0.0f}},
        {"blue", {0.0f, 0.0f, 1.0f}},
    }};
    return palette;
}

struct SpriteSpec {
    SpriteKind kind = SpriteKind::square;
    int size = 20;
    int color_index = 0;  // into sprite_palette()
    float shade = 1.0f;   // brightness within the named color, constant per clip
    int vx = 0, vy = 0;   // pixels per frame
    int x0 = 8, y0 = 8;   // top-left of the bounding box in frame 0

    // Deterministic textual rendering, e.g. "red square moving right". The
    // prompt names the color family only; the shade stays unspecified, so
    // text underdetermines the exact appearance the way captions do.
    std::string prompt() const {
        std::string s = sprite_palette()[size_t(color_index)].name;
        s += kind == SpriteKind::square ? " square" : " circle";
        if (vx == 0 && vy == 0) return s + " staying still";
        s += " moving";
        std::string h = vx > 0 ? "right" : (vx < 0 ? "left" : "");
        std::string v = vy > 0 ? "down" : (vy < 0 ? "up" : "");
        if (!h.empty() && !v.empty()) return s + " " + h + "-" + v;
        return s + " " + (h.empty() ? v : h);
    }
};

inline SpriteSpec random_sprite_spec(RngStream& stream) {
    SpriteSpec spec;
    spec.kind = next_int(stream, 0, 1) == 0 ? SpriteKind::square : SpriteKind::circle;
    spec.size = int(14 + 2 * next_int(stream, 0, 6));  // 14..26
    spec.color_index = int(next_int(stream, 0, int64_t(sprite_palette().size()) - 1));
    spec.shade = float(0.55 + 0.45 * next_unit(stream));
    spec.vx = int(next_int(stream, -3, 3));
    spec.vy = int(next_int(stream, -3, 3));
    const int limit = kSpriteCanvas - spec.size - 2;
    spec.x0 = int(next_int(stream, 2, limit));
    spec.y0 = int(next_int(stream, 2, limit));
    return spec;
}

namespace sprite_detail {

// Reflect pos into [0, limit], flipping the velocity on each bounce.
inline void advance(int& pos, int& vel, int limit) {
    pos += vel;
    if (pos < 0) {
        pos = -pos;
        vel = -vel;
    }
    if (pos > limit) {
        pos = 2 * limit - pos;
        vel = -vel;
    }
}

inline void draw(VideoFrames& v, int f, const SpriteSpec& spec, int x, int y) {
    const auto& base = sprite_palette()[size_t(spec.color_index)].rgb;
    const std::array<float, 3> rgb = {base[0] * spec.shade, base[1] * spec.shade,
                                      base[2] * spec.shade};
    if (spec.kind == SpriteKind::square) {
        for (int py = y; py < y + spec.size; ++py) {
            for (int px = x; px < x + spec.size; ++px) {
                for (int c = 0; c < 3; ++c) v.at(f, py, px, c) = rgb[size_t(c)];
            }
        }
    } else {
        const float cx = float(x) + float(spec.size) * 0.5f - 0.5f;
        const float cy = float(y) + float(spec.size) * 0.5f - 0.5f;
        const float r2 = 0.25f * float(spec.size) * float(spec.size);
        for (int py = y; py < y + spec.size; ++py) {
            for (int px = x; px < x + spec.size; ++px) {
                const float dx = float(px) - cx;
                const float dy = float(py) - cy;
                if (dx * dx + dy * dy <= r2) {
                    for (int c = 0; c < 3; ++c) v.at(f, py, px, c) = rgb[size_t(c)];
                }
            }
        }
    }
}

}  // namespace sprite_detail

inline VideoFrames render_sprite_video(const SpriteSpec& spec, int frames) {
    if (spec.size < 2 || spec.size > kSpriteCanvas) {
        fail_config("sprite: size out of range");
    }
    if (spec.x0 < 0 || spec.y0 < 0 || spec.x0 + spec.size > kSpriteCanvas ||
        spec.y0 + spec.size > kSpriteCanvas) {
        fail_config("sprite: start position out of bounds");
    }
    VideoFrames v = VideoFrames::zeros(frames, kSpriteCanvas, kSpriteCanvas);
    const int limit = kSpriteCanvas - spec.size;
    int x = spec.x0, y = spec.y0;
    int vx = spec.vx, vy = spec.vy;
    for (int f = 0; f < frames; ++f) {
        sprite_detail::draw(v, f, spec, x, y);
        sprite_detail::advance(x, vx, limit);
        sprite_detail::advance(y, vy, limit);
    }
    return v;
}

struct SpriteVideo {
    VideoFrames pixels;
    Tensor latent;
    std::string prompt;
};

inline SpriteVideo generate_sprite_video(const SpriteSpec& spec, int frames) {
    SpriteVideo out;
    out.pixels = render_sprite_video(spec, frames);
    out.latent = encode_frames(out.pixels);
    out.prompt = spec.prompt();
    return out;
}

// Prompts used by the evaluation and trend tooling when none are given.
inline const std::vector<std::string>& default_eval_prompts() {
    static const std::vector<std::string> prompts = {
        "red square moving right",
        "green circle moving left",
        "blue square moving down",
        "red circle moving up",
    };
    return prompts;
}

}  // namespace unictrl

#endif
