#include "picodiff/factors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace picodiff {

namespace {

constexpr int kRes = Image::kRes;
// Pixels count as foreground when their distance from the background exceeds
// this fraction of the scene contrast; shape templates are binarized at the
// same coverage contour so a clean render reproduces its template exactly.
constexpr float kRelThreshold = 0.35f;

struct Rgb {
    float r = 0, g = 0, b = 0;
};

float dist(const Rgb& a, const std::array<float, 3>& b) {
    float dr = a.r - b[0], dg = a.g - b[1], db = a.b - b[2];
    return std::sqrt(dr * dr + dg * dg + db * db);
}

float dist_px(const Image& img, int x, int y, const Rgb& c) {
    float dr = img.at(0, y, x) - c.r;
    float dg = img.at(1, y, x) - c.g;
    float db = img.at(2, y, x) - c.b;
    return std::sqrt(dr * dr + dg * dg + db * db);
}

// Component-wise median over the one-pixel border.
Rgb border_background(const Image& img) {
    std::vector<float> ch[3];
    for (int c = 0; c < 3; ++c) ch[c].reserve(4 * kRes);
    auto push = [&](int x, int y) {
        for (int c = 0; c < 3; ++c) ch[c].push_back(img.at(c, y, x));
    };
    for (int i = 0; i < kRes; ++i) {
        push(i, 0);
        push(i, kRes - 1);
        push(0, i);
        push(kRes - 1, i);
    }
    Rgb bg;
    for (int c = 0; c < 3; ++c) {
        auto mid = ch[c].begin() + ch[c].size() / 2;
        std::nth_element(ch[c].begin(), mid, ch[c].end());
        (&bg.r)[c] = *mid;
    }
    return bg;
}

// Eroded-interior mean color used both on the input image and, via a one-time
// calibration over rendered scenes, to build the expected per-palette value;
// estimator and expectation match by construction, glyph ink included.
Rgb interior_mean(const Image& img, const Rgb& bg) {
    // Mean over the 50th..95th percentile band of distance-from-background:
    // drops anti-aliased rim pixels (low band) and most glyph ink (top band),
    // and stays well-defined on thin shapes where erosion would fail.
    std::vector<std::pair<float, int>> fgpix;
    for (int y = 0; y < kRes; ++y) {
        for (int x = 0; x < kRes; ++x) {
            float d = dist_px(img, x, y, bg);
            if (d > 0.25f) fgpix.push_back({d, y * kRes + x});
        }
    }
    if (fgpix.empty()) return bg;
    std::sort(fgpix.begin(), fgpix.end());
    size_t lo = fgpix.size() / 2;
    size_t hi = fgpix.size() - 1 - fgpix.size() / 20;
    double fr = 0, fgg = 0, fb = 0, count = 0;
    for (size_t i = lo; i <= hi && i < fgpix.size(); ++i) {
        int x = fgpix[i].second % kRes, y = fgpix[i].second / kRes;
        fr += img.at(0, y, x);
        fgg += img.at(1, y, x);
        fb += img.at(2, y, x);
        count += 1.0;
    }
    if (count == 0.0) return bg;
    return {static_cast<float>(fr / count), static_cast<float>(fgg / count),
            static_cast<float>(fb / count)};
}

// Texture from the pattern phase: stripe bands and the dot lattice sit at
// fixed pixel positions, so comparing mean foreground distance across the two
// phase classes identifies the pattern without knowing any colors.
// The object region carries the palette's fg, fg/bg mix (texture) and accent
// (glyph ink); the palette whose color triple explains those pixels best
// identifies the texture without any positional assumptions, so it works on
// translated crops too.
int fg_model_palette(const Image& img, const Rgb& bg) {
    const auto& pals = palette_table();
    double cost[kNumPalettes] = {};
    double n = 0;
    for (int y = 0; y < kRes; ++y) {
        for (int x = 0; x < kRes; ++x) {
            float d = dist_px(img, x, y, bg);
            if (d <= 0.35f) continue;  // interior-ish pixels only
            n += 1;
            for (int p = 0; p < kNumPalettes; ++p) {
                const Palette& pal = pals[p];
                std::array<float, 3> mix = {0.5f * (pal.fg[0] + pal.bg[0]),
                                            0.5f * (pal.fg[1] + pal.bg[1]),
                                            0.5f * (pal.fg[2] + pal.bg[2])};
                Rgb px{img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)};
                float best = dist(px, pal.fg);
                best = std::min(best, dist(px, mix));
                best = std::min(best, dist(px, pal.accent));
                cost[p] += best;
            }
        }
    }
    int best_p = 0;
    for (int p = 1; p < kNumPalettes; ++p) {
        if (cost[p] < cost[best_p]) best_p = p;
    }
    return best_p;
}

const std::array<std::array<float, 3>, kNumPalettes>& calibrated_fg() {
    static const std::array<std::array<float, 3>, kNumPalettes> calib = [] {
        std::array<std::array<float, 3>, kNumPalettes> out{};
        for (int p = 0; p < kNumPalettes; ++p) {
            const Palette& pal = palette_table()[p];
            Rgb bg{pal.bg[0], pal.bg[1], pal.bg[2]};
            double acc[3] = {0, 0, 0};
            int n = 0;
            for (int id = 0; id < kNumIdentities; ++id) {
                for (auto [shape, scale] : {std::pair{1, 1}, {2, 0}, {0, 0}}) {
                    SceneSpec s{shape, p, 4, scale, id};
                    Rgb m = interior_mean(quantize_u8(render_scene(s)), bg);
                    acc[0] += m.r;
                    acc[1] += m.g;
                    acc[2] += m.b;
                    ++n;
                }
            }
            out[p] = {static_cast<float>(acc[0] / n), static_cast<float>(acc[1] / n),
                      static_cast<float>(acc[2] / n)};
        }
        return out;
    }();
    return calib;
}

struct Templates {
    std::vector<float> data;  // fractional coverage planes
    double mass[kNumShapes][kNumScales] = {};
    double mass_bin[kNumShapes][kNumScales] = {};  // pixels with coverage >= 0.5
    const float* at(int shape, int scale, int cell) const {
        return data.data() +
               (((static_cast<size_t>(shape) * kNumScales) + scale) * kNumCells + cell) * kRes * kRes;
    }
};

const Templates& templates() {
    static const Templates t = [] {
        Templates t;
        t.data.resize(static_cast<size_t>(kNumShapes) * kNumScales * kNumCells * kRes * kRes);
        for (int s = 0; s < kNumShapes; ++s) {
            for (int sc = 0; sc < kNumScales; ++sc) {
                for (int cell = 0; cell < kNumCells; ++cell) {
                    float* dst = t.data.data() +
                                 (((static_cast<size_t>(s) * kNumScales) + sc) * kNumCells + cell) *
                                     kRes * kRes;
                    float cx = cell_center_x(cell), cy = cell_center_y(cell);
                    float r = shape_radius(sc);
                    for (int y = 0; y < kRes; ++y) {
                        for (int x = 0; x < kRes; ++x) {
                            dst[y * kRes + x] = shape_coverage(s, cx, cy, r, x, y);
                        }
                    }
                    if (cell == 4) {
                        double m = 0.0, mb = 0.0;
                        for (int i = 0; i < kRes * kRes; ++i) {
                            if (dst[i] >= 0.25f) m += dst[i];
                            if (dst[i] >= 0.5f) mb += 1.0;
                        }
                        t.mass[s][sc] = m;
                        t.mass_bin[s][sc] = mb;
                    }
                }
            }
        }
        return t;
    }();
    return t;
}

float margin_confidence(float best, float second) {
    if (second <= 0.0f) return best > 0.0f ? 1.0f : 0.0f;
    float m = (second - best) / second;  // for distance-like costs (lower better)
    return std::clamp(m, 0.0f, 1.0f);
}

}  // namespace

FactorEstimate decode_factors(const Image& img) {
    FactorEstimate est;
    Rgb bg = border_background(img);

    Rgb fg = interior_mean(img, bg);

    // Distance scale of the foreground (95th percentile over non-bg pixels).
    float d_ref = 0.0f;
    {
        std::vector<float> ds;
        for (int y = 0; y < kRes; ++y) {
            for (int x = 0; x < kRes; ++x) {
                float d = dist_px(img, x, y, bg);
                if (d > 0.25f) ds.push_back(d);
            }
        }
        if (!ds.empty()) {
            size_t p95 = ds.size() - 1 - ds.size() / 20;
            std::nth_element(ds.begin(), ds.begin() + p95, ds.end());
            d_ref = ds[p95];
        }
    }
    est.texture = palette_table()[fg_model_palette(img, bg)].texture;

    // Palette: joint bg+fg nearest centroid against the calibrated per-palette
    // statistics.
    {
        const auto& pals = palette_table();
        const auto& fgc = calibrated_fg();
        float best = 1e9f, second = 1e9f;
        for (int p = 0; p < kNumPalettes; ++p) {
            float cost = dist(bg, pals[p].bg) + 0.7f * dist(fg, fgc[p]);
            if (cost < best) {
                second = best;
                best = cost;
                est.spec.palette_id = p;
            } else if (cost < second) {
                second = cost;
            }
        }
        est.conf_palette = margin_confidence(best, second);
    }

    // Estimated coverage field. When the border matches the decoded palette's
    // background (ordinary scenes) each pixel is normalized by the palette's
    // expected fill there, reconstructing the true anti-aliased coverage. On
    // foreign backgrounds (random-color crop padding) a scalar scale is used.
    const Palette& pal = palette_table()[est.spec.palette_id];
    bool bg_matches = dist(bg, pal.bg) < 0.15f;
    float contrast = std::max(d_ref, 0.2f);
    std::vector<float> mask(static_cast<size_t>(kRes) * kRes, 0.0f);
    double mx = 0.0, my = 0.0, mass = 0.0, mass2 = 0.0;
    for (int y = 0; y < kRes; ++y) {
        for (int x = 0; x < kRes; ++x) {
            float d = dist_px(img, x, y, bg);
            // absolute gate keeps pixel noise out even where the texture mix
            // halves the local normalization
            if (d < 0.22f * contrast) continue;
            float cov;
            if (bg_matches) {
                auto fill = palette_fill_color(pal, x, y);
                float denom = dist(bg, fill);
                if (denom < 0.2f) continue;
                cov = std::clamp(d / denom, 0.0f, 1.0f);
                if (cov < 0.25f) continue;
            } else {
                // crop padding: copied object pixels form a crisp 0.5-contour
                // boundary, so the mask is binary
                cov = 1.0f;
            }
            mask[static_cast<size_t>(y) * kRes + x] = cov;
            mx += (x + 0.5) * cov;
            my += (y + 0.5) * cov;
            mass += cov;
            mass2 += static_cast<double>(cov) * cov;
        }
    }
    if (mass <= 4.0) {
        est.conf_palette = std::min(est.conf_palette, 0.05f);
        est.conf_shape = est.conf_layout = est.conf_identity = 0.0f;
        return est;
    }

    // Layout cell from the mask centroid.
    float cxm = static_cast<float>(mx / mass), cym = static_cast<float>(my / mass);
    {
        float best = 1e9f, second = 1e9f;
        for (int cell = 0; cell < kNumCells; ++cell) {
            float dx = cxm - cell_center_x(cell), dy = cym - cell_center_y(cell);
            float d = std::sqrt(dx * dx + dy * dy);
            if (d < best) {
                second = best;
                best = d;
                est.spec.layout_cell = cell;
            } else if (d < second) {
                second = d;
            }
        }
        est.conf_layout = margin_confidence(best, second);
    }

    // Shape and scale by zero-mean normalized cross-correlation against the
    // binarized coverage templates at the detected cell; the zero-mean form
    // penalizes templates that spill past the mask, which separates nested
    // shapes (square inside circle, ring inside circle).
    {
        const Templates& tpl = templates();
        constexpr int n = kRes * kRes;
        double mask_var = mass2 - mass * mass / n;
        float best = -2.0f, second = -2.0f;
        for (int s = 0; s < kNumShapes; ++s) {
            for (int sc = 0; sc < kNumScales; ++sc) {
                const float* t = tpl.at(s, sc, est.spec.layout_cell);
                double dot = 0.0, t1 = 0.0, t2 = 0.0;
                for (int i = 0; i < n; ++i) {
                    float tv = bg_matches ? t[i] : (t[i] >= 0.5f ? 1.0f : 0.0f);
                    dot += static_cast<double>(mask[i]) * tv;
                    t1 += tv;
                    t2 += static_cast<double>(tv) * tv;
                }
                double cov = dot - mass * t1 / n;
                double tvar = t2 - t1 * t1 / n;
                float ncc = static_cast<float>(cov / std::sqrt(std::max(1e-9, tvar * mask_var)));
                if (ncc > best) {
                    second = best;
                    best = ncc;
                    est.spec.shape_id = s;
                    est.spec.scale_id = sc;
                } else if (ncc > second) {
                    second = ncc;
                }
            }
        }
        est.conf_shape = std::clamp((best - second) * 4.0f, 0.0f, 1.0f);
        // Total mass separates the two scales far more reliably than the
        // correlation margin once the shape is known.
        double m_small = bg_matches ? tpl.mass[est.spec.shape_id][0] : tpl.mass_bin[est.spec.shape_id][0];
        double m_large = bg_matches ? tpl.mass[est.spec.shape_id][1] : tpl.mass_bin[est.spec.shape_id][1];
        est.spec.scale_id = std::fabs(mass - m_small) <= std::fabs(mass - m_large) ? 0 : 1;
    }

    // Identity: re-render the ten candidates with all other factors fixed and
    // compare pixels around the glyph.
    {
        float cx = cell_center_x(est.spec.layout_cell);
        float cy = cell_center_y(est.spec.layout_cell);
        float r = shape_radius(est.spec.scale_id);
        int x0 = std::max(0, static_cast<int>(cx - r) - 1);
        int x1 = std::min(kRes - 1, static_cast<int>(cx + r) + 1);
        int y0 = std::max(0, static_cast<int>(cy - r) - 1);
        int y1 = std::min(kRes - 1, static_cast<int>(cy + r) + 1);
        float best = 1e18f, second = 1e18f;
        SceneSpec cand = est.spec;
        for (int idn = 0; idn < kNumIdentities; ++idn) {
            cand.identity_id = idn;
            Image ref = quantize_u8(render_scene(cand));
            double d2 = 0.0;
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        double d = static_cast<double>(img.at(c, y, x)) - ref.at(c, y, x);
                        d2 += d * d;
                    }
                }
            }
            if (d2 < best) {
                second = best;
                best = static_cast<float>(d2);
                est.spec.identity_id = idn;
            } else if (d2 < second) {
                second = static_cast<float>(d2);
            }
        }
        est.conf_identity = margin_confidence(best, second);
    }
    return est;
}

}  // namespace picodiff
