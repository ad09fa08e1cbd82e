#ifndef UNICTRL_METRICS_HPP
#define UNICTRL_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unictrl/rng.hpp"
#include "unictrl/tensor.hpp"
#include "unictrl/video.hpp"

namespace unictrl {

// ---------------------------------------------------------------------------
// Frame embedders for the consistency score
// ---------------------------------------------------------------------------

// pixel_downsample: frames box-filtered to 8x8x3, flattened, mean-subtracted.
// backbone_patch: 8x8 patches projected through a fixed seeded random matrix
// and mean-pooled; a self-contained stand-in for a feature backbone.
struct FrameEmbedder {
    enum class Kind { pixel_downsample, backbone_patch };
    Kind kind = Kind::pixel_downsample;
    int output_dim = 192;

    static FrameEmbedder pixel() { return FrameEmbedder{Kind::pixel_downsample, 192}; }
    static FrameEmbedder backbone() { return FrameEmbedder{Kind::backbone_patch, 32}; }

    std::vector<double> embed(const VideoFrames& v, int frame) const {
        if (kind == Kind::pixel_downsample) return embed_pixel(v, frame);
        return embed_backbone(v, frame);
    }

  private:
    static std::vector<double> embed_pixel(const VideoFrames& v, int frame) {
        constexpr int kGrid = 8;
        std::vector<double> e(size_t(kGrid) * kGrid * 3, 0.0);
        const int by = v.height / kGrid, bx = v.width / kGrid;
        for (int gy = 0; gy < kGrid; ++gy) {
            for (int gx = 0; gx < kGrid; ++gx) {
                double sum[3] = {0, 0, 0};
                for (int y = gy * by; y < (gy + 1) * by; ++y) {
                    for (int x = gx * bx; x < (gx + 1) * bx; ++x) {
                        for (int c = 0; c < 3; ++c) sum[c] += v.at(frame, y, x, c);
                    }
                }
                for (int c = 0; c < 3; ++c) {
                    e[size_t((gy * kGrid + gx) * 3 + c)] = sum[c] / double(by * bx);
                }
            }
        }
        double mean = 0.0;
        for (double x : e) mean += x;
        mean /= double(e.size());
        for (double& x : e) x -= mean;
        return e;
    }

    static std::vector<double> embed_backbone(const VideoFrames& v, int frame) {
        constexpr int kPatch = 8;
        constexpr int kDim = 32;
        const int py = v.height / kPatch, px = v.width / kPatch;
        const int in_dim = kPatch * kPatch * 3;
        // Fixed projection; the constant seed makes the embedder a pure
        // function of the frame.
        static const std::vector<float> proj = [] {
            RngStream stream = derive_stream(0xbacb0e5ULL, 0);
            std::vector<float> w(size_t(kPatch) * kPatch * 3 * kDim);
            for (size_t i = 0; i < w.size(); ++i) w[i] = normal_at(stream, uint64_t(i));
            return w;
        }();
        std::vector<double> pooled(kDim, 0.0);
        std::vector<double> patch(static_cast<size_t>(in_dim));
        for (int gy = 0; gy < py; ++gy) {
            for (int gx = 0; gx < px; ++gx) {
                int k = 0;
                for (int y = gy * kPatch; y < (gy + 1) * kPatch; ++y) {
                    for (int x = gx * kPatch; x < (gx + 1) * kPatch; ++x) {
                        for (int c = 0; c < 3; ++c) patch[size_t(k++)] = v.at(frame, y, x, c);
                    }
                }
                for (int d = 0; d < kDim; ++d) {
                    double acc = 0.0;
                    for (int i = 0; i < in_dim; ++i) {
                        acc += patch[size_t(i)] * double(proj[size_t(i * kDim + d)]);
                    }
                    pooled[size_t(d)] += acc;
                }
            }
        }
        const double inv = 1.0 / double(py * px);
        for (double& x : pooled) x *= inv;
        double mean = 0.0;
        for (double x : pooled) mean += x;
        mean /= double(pooled.size());
        for (double& x : pooled) x -= mean;
        return pooled;
    }
};

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    constexpr double kTiny = 1e-24;
    if (na < kTiny && nb < kTiny) return 1.0;  // both zero: identical directions
    if (na < kTiny || nb < kTiny) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// ---------------------------------------------------------------------------
// Consistency score: frame 0 against each subsequent frame
// ---------------------------------------------------------------------------

struct ConsistencyResult {
    double score = 0.0;                    // mean cosine(frame0, frame i), i in 1..F-1
    double consecutive_score = 0.0;        // secondary: mean cosine over consecutive pairs
    std::vector<double> per_frame;         // anchored scores, one per frame i >= 1
    std::vector<double> per_consecutive;   // consecutive-pair scores
};

inline ConsistencyResult consistency_score(const VideoFrames& v, const FrameEmbedder& embedder) {
    if (v.frame_count < 2) {
        fail(ErrorCategory::data, "consistency_score: need at least 2 frames");
    }
    std::vector<std::vector<double>> feats;
    feats.reserve(size_t(v.frame_count));
    for (int f = 0; f < v.frame_count; ++f) feats.push_back(embedder.embed(v, f));

    ConsistencyResult r;
    double sum = 0.0;
    for (int f = 1; f < v.frame_count; ++f) {
        const double c = cosine_similarity(feats[0], feats[size_t(f)]);
        r.per_frame.push_back(c);
        sum += c;
    }
    r.score = sum / double(v.frame_count - 1);

    double csum = 0.0;
    for (int f = 1; f < v.frame_count; ++f) {
        const double c = cosine_similarity(feats[size_t(f) - 1], feats[size_t(f)]);
        r.per_consecutive.push_back(c);
        csum += c;
    }
    r.consecutive_score = csum / double(v.frame_count - 1);
    return r;
}

// ---------------------------------------------------------------------------
// Block-matching optical flow
// ---------------------------------------------------------------------------

struct FlowBlock {
    int bx = 0, by = 0;  // block grid position
    int dx = 0, dy = 0;  // displacement of this block from frame a into frame b
    float sad = 0.0f;    // sum of absolute differences at the chosen displacement
};

// Only blocks whose full search window lies inside the frame are present;
// border blocks are excluded from all averages.
struct FlowField {
    int block_size = 0;
    int search_radius = 0;
    std::vector<FlowBlock> blocks;
};

// Exhaustive SAD block matching of a into b. Ties break toward the smallest
// displacement magnitude, then lexicographically by (dy, dx).
inline FlowField block_matching_flow(const VideoFrames& v, int frame_a, int frame_b,
                                     int block_size, int search_radius) {
    if (block_size < 1 || v.height % block_size != 0 || v.width % block_size != 0) {
        fail(ErrorCategory::data, "block_matching_flow: block size must divide frame extents");
    }
    if (search_radius < 0 || search_radius >= v.height || search_radius >= v.width) {
        fail(ErrorCategory::data, "block_matching_flow: radius must be smaller than the frame");
    }
    FlowField field;
    field.block_size = block_size;
    field.search_radius = search_radius;
    const int gy = v.height / block_size, gx = v.width / block_size;
    for (int by = 0; by < gy; ++by) {
        for (int bx = 0; bx < gx; ++bx) {
            const int y0 = by * block_size, x0 = bx * block_size;
            if (y0 - search_radius < 0 || x0 - search_radius < 0 ||
                y0 + block_size + search_radius > v.height ||
                x0 + block_size + search_radius > v.width) {
                continue;
            }
            FlowBlock best;
            best.bx = bx;
            best.by = by;
            bool first = true;
            for (int dy = -search_radius; dy <= search_radius; ++dy) {
                for (int dx = -search_radius; dx <= search_radius; ++dx) {
                    float sad = 0.0f;
                    for (int y = 0; y < block_size; ++y) {
                        for (int x = 0; x < block_size; ++x) {
                            for (int c = 0; c < 3; ++c) {
                                sad += std::abs(v.at(frame_a, y0 + y, x0 + x, c) -
                                                v.at(frame_b, y0 + y + dy, x0 + x + dx, c));
                            }
                        }
                    }
                    const int d2 = dx * dx + dy * dy;
                    const int best_d2 = best.dx * best.dx + best.dy * best.dy;
                    const bool better =
                        first || sad < best.sad ||
                        (sad == best.sad &&
                         (d2 < best_d2 ||
                          (d2 == best_d2 &&
                           (dy < best.dy || (dy == best.dy && dx < best.dx)))));
                    if (better) {
                        best.dx = dx;
                        best.dy = dy;
                        best.sad = sad;
                        first = false;
                    }
                }
            }
            field.blocks.push_back(best);
        }
    }
    return field;
}

// ---------------------------------------------------------------------------
// Motion score: mean flow magnitude over consecutive pairs
// ---------------------------------------------------------------------------

// A block is counted when it carries motion evidence: either it moved, or no
// displacement reproduces it exactly. Blocks of a static uniform region
// (best SAD 0 at zero displacement) measurably did not move and are skipped;
// on textured content every block counts.
struct MotionResult {
    double score = 0.0;
    std::vector<double> per_pair;
};

inline MotionResult motion_score(const VideoFrames& v, int block_size, int search_radius) {
    if (v.frame_count < 2) {
        fail(ErrorCategory::data, "motion_score: need at least 2 frames");
    }
    MotionResult r;
    double total = 0.0;
    for (int f = 1; f < v.frame_count; ++f) {
        FlowField field = block_matching_flow(v, f - 1, f, block_size, search_radius);
        double sum = 0.0;
        int64_t counted = 0;
        for (const FlowBlock& b : field.blocks) {
            const bool static_exact = b.sad == 0.0f && b.dx == 0 && b.dy == 0;
            if (static_exact) continue;
            sum += std::sqrt(double(b.dx) * b.dx + double(b.dy) * b.dy);
            ++counted;
        }
        const double pair_score = counted > 0 ? sum / double(counted) : 0.0;
        r.per_pair.push_back(pair_score);
        total += pair_score;
    }
    r.score = total / double(v.frame_count - 1);
    return r;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct MetricReport {
    double consistency = 0.0;
    double consistency_consecutive = 0.0;
    double motion = 0.0;
    std::vector<double> per_frame_consistency;
    std::vector<double> per_pair_motion;
    std::string mode;         // which pipeline variant produced the video
    std::string expectation;  // qualitative expectation recorded by ablation modes
    std::string prompt;
    uint64_t seed = 0;
    std::string embedder = "pixel";
    int flow_block = 4;
    int flow_radius = 4;
};

inline MetricReport evaluate_video(const VideoFrames& v, const FrameEmbedder& embedder,
                                   int flow_block, int flow_radius) {
    MetricReport r;
    ConsistencyResult c = consistency_score(v, embedder);
    MotionResult m = motion_score(v, flow_block, flow_radius);
    r.consistency = c.score;
    r.consistency_consecutive = c.consecutive_score;
    r.motion = m.score;
    r.per_frame_consistency = c.per_frame;
    r.per_pair_motion = m.per_pair;
    r.embedder = embedder.kind == FrameEmbedder::Kind::pixel_downsample ? "pixel" : "backbone";
    r.flow_block = flow_block;
    r.flow_radius = flow_radius;
    return r;
}

}  // namespace unictrl

#endif
