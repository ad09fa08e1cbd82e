#ifndef UNICTRL_VIDEO_HPP
#define UNICTRL_VIDEO_HPP

#include <algorithm>
#include <cstdint>
#include <vector>

#include "unictrl/tensor.hpp"

namespace unictrl {

// RGB frame stack, values in [0,1], layout [frame][y][x][rgb].
struct VideoFrames {
    int frame_count = 0;
    int height = 0;
    int width = 0;
    std::vector<float> rgb;

    static VideoFrames zeros(int frames, int height, int width) {
        VideoFrames v;
        v.frame_count = frames;
        v.height = height;
        v.width = width;
        v.rgb.assign(size_t(frames) * height * width * 3, 0.0f);
        return v;
    }

    int64_t frame_values() const { return int64_t(height) * width * 3; }

    float* frame(int f) { return rgb.data() + int64_t(f) * frame_values(); }
    const float* frame(int f) const { return rgb.data() + int64_t(f) * frame_values(); }

    float& at(int f, int y, int x, int c) {
        return rgb[size_t(((int64_t(f) * height + y) * width + x) * 3 + c)];
    }
    float at(int f, int y, int x, int c) const {
        return rgb[size_t(((int64_t(f) * height + y) * width + x) * 3 + c)];
    }
};

// Fixed affine latent <-> pixel codec. The first three latent channels carry
// the rgb means of each pixel block rescaled to [-1, 1]; the fourth carries
// overall luminance. Decoding upsamples nearest-neighbor and clamps.
constexpr int kPixelsPerCell = 4;

inline VideoFrames decode_latent(const Tensor& z) {
    if (z.rank() != 4) fail_shape("decode_latent: latent must be [F,C,H,W]");
    check_finite(z, "decode_latent input");
    const int F = int(z.dim(0)), C = int(z.dim(1)), H = int(z.dim(2)), W = int(z.dim(3));
    if (C < 3) fail_shape("decode_latent: need at least 3 latent channels");
    VideoFrames v = VideoFrames::zeros(F, H * kPixelsPerCell, W * kPixelsPerCell);
    const float* pz = z.data();
    const int64_t plane = int64_t(H) * W;
    for (int f = 0; f < F; ++f) {
        for (int y = 0; y < v.height; ++y) {
            for (int x = 0; x < v.width; ++x) {
                const int cy = y / kPixelsPerCell, cx = x / kPixelsPerCell;
                for (int c = 0; c < 3; ++c) {
                    const float zv = pz[(int64_t(f) * C + c) * plane + int64_t(cy) * W + cx];
                    v.at(f, y, x, c) = std::clamp(0.5f * zv + 0.5f, 0.0f, 1.0f);
                }
            }
        }
    }
    return v;
}

inline Tensor encode_frames(const VideoFrames& v) {
    if (v.height % kPixelsPerCell != 0 || v.width % kPixelsPerCell != 0) {
        fail_shape("encode_frames: frame extents must be multiples of the cell size");
    }
    const int F = v.frame_count;
    const int H = v.height / kPixelsPerCell, W = v.width / kPixelsPerCell;
    const int C = 4;
    Tensor z({F, C, H, W});
    float* pz = z.mutable_data();
    const int64_t plane = int64_t(H) * W;
    const float inv = 1.0f / float(kPixelsPerCell * kPixelsPerCell);
    for (int f = 0; f < F; ++f) {
        for (int cy = 0; cy < H; ++cy) {
            for (int cx = 0; cx < W; ++cx) {
                float mean[3] = {0, 0, 0};
                for (int py = 0; py < kPixelsPerCell; ++py) {
                    for (int px = 0; px < kPixelsPerCell; ++px) {
                        for (int c = 0; c < 3; ++c) {
                            mean[c] += v.at(f, cy * kPixelsPerCell + py,
                                            cx * kPixelsPerCell + px, c);
                        }
                    }
                }
                for (int c = 0; c < 3; ++c) mean[c] *= inv;
                const int64_t cell = int64_t(cy) * W + cx;
                for (int c = 0; c < 3; ++c) {
                    pz[(int64_t(f) * C + c) * plane + cell] = 2.0f * mean[c] - 1.0f;
                }
                pz[(int64_t(f) * C + 3) * plane + cell] =
                    2.0f * (mean[0] + mean[1] + mean[2]) / 3.0f - 1.0f;
            }
        }
    }
    return z;
}

}  // namespace unictrl

#endif
