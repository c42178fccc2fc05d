#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "picodiff/factors.hpp"
#include "picodiff/scene.hpp"

using namespace picodiff;

TEST(RenderScene, Deterministic) {
    SceneSpec s{3, 5, 4, 1, 7};
    Image a = render_scene(s);
    Image b = render_scene(s);
    EXPECT_TRUE(a == b);
}

TEST(RenderScene, CornerPixelEqualsPaletteBackground) {
    for (int p = 0; p < kNumPalettes; ++p) {
        SceneSpec s{0, p, 4, 0, 0};
        Image img = render_scene(s);
        const Palette& pal = palette_table()[p];
        EXPECT_FLOAT_EQ(img.at(0, 0, 0), pal.bg[0]);
        EXPECT_FLOAT_EQ(img.at(1, 0, 0), pal.bg[1]);
        EXPECT_FLOAT_EQ(img.at(2, 0, 0), pal.bg[2]);
    }
}

TEST(RenderScene, AllSpecsRenderAndStayInRange) {
    // Renderability is total; spot-check a deterministic sweep.
    for (int64_t i = 0; i < kSpecGridSize; i += 97) {
        Image img = render_scene(spec_from_index(i));
        for (float v : img.pixels) {
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(RenderScene, ShapesStayInsideFrame) {
    // Largest radius at corner cells must not clip: border stays background.
    for (int shape = 0; shape < kNumShapes; ++shape) {
        for (int cell : {0, 2, 6, 8}) {
            SceneSpec s{shape, 1, cell, 1, 0};
            Image img = render_scene(s);
            const Palette& pal = palette_table()[1];
            for (int i = 0; i < Image::kRes; ++i) {
                ASSERT_FLOAT_EQ(img.at(0, 0, i), pal.bg[0]);
                ASSERT_FLOAT_EQ(img.at(0, Image::kRes - 1, i), pal.bg[0]);
                ASSERT_FLOAT_EQ(img.at(0, i, 0), pal.bg[0]);
                ASSERT_FLOAT_EQ(img.at(0, i, Image::kRes - 1), pal.bg[0]);
            }
        }
    }
}

TEST(RenderScene, IdentitiesProduceDistinctImages) {
    for (int shape = 0; shape < kNumShapes; ++shape) {
        std::set<std::vector<uint8_t>> seen;
        for (int id = 0; id < kNumIdentities; ++id) {
            SceneSpec s{shape, 0, 4, 0, id};  // small scale is the hardest case
            Image img = quantize_u8(render_scene(s));
            std::vector<uint8_t> key(img.pixels.size());
            for (size_t i = 0; i < key.size(); ++i) key[i] = to_u8(img.pixels[i]);
            seen.insert(key);
        }
        EXPECT_EQ(seen.size(), static_cast<size_t>(kNumIdentities)) << "shape " << shape;
    }
}

TEST(CropPadObject, PaddingColorVariesAcrossSeeds) {
    SceneSpec s{2, 3, 0, 0, 1};
    Philox rng1(7, 0), rng2(8, 0);
    Image a = crop_pad_object(s, rng1);
    Image b = crop_pad_object(s, rng2);
    // corner is padding in both
    bool differs = false;
    for (int c = 0; c < 3; ++c) differs |= a.at(c, 0, 0) != b.at(c, 0, 0);
    EXPECT_TRUE(differs);
}

TEST(CropPadObject, ObjectPixelsMatchSceneUpToTranslation) {
    SceneSpec s{3, 4, 2, 1, 5};
    Philox rng(11, 0);
    Image crop = crop_pad_object(s, rng);
    Image scene = render_scene(s);
    float cx = cell_center_x(s.layout_cell), cy = cell_center_y(s.layout_cell);
    int tx = static_cast<int>(std::lround(cx - 16.0f));
    int ty = static_cast<int>(std::lround(cy - 16.0f));
    int checked = 0;
    for (int y = 0; y < Image::kRes; ++y) {
        for (int x = 0; x < Image::kRes; ++x) {
            int sx = x + tx, sy = y + ty;
            if (sx < 0 || sx >= Image::kRes || sy < 0 || sy >= Image::kRes) continue;
            if (shape_coverage(s.shape_id, cx, cy, shape_radius(s.scale_id), sx, sy) >= 0.5f) {
                for (int c = 0; c < 3; ++c) ASSERT_FLOAT_EQ(crop.at(c, y, x), scene.at(c, sy, sx));
                ++checked;
            }
        }
    }
    EXPECT_GT(checked, 30);
}

TEST(FaceZoom, GlyphIsLargeAndDeterministic) {
    SceneSpec s{0, 2, 4, 1, 3};
    Image a = render_face_zoom(s);
    Image b = render_face_zoom(s);
    EXPECT_TRUE(a == b);
    // accent ink must appear somewhere near the center region
    const Palette& pal = palette_table()[2];
    int accent_px = 0;
    for (int y = 8; y < 24; ++y) {
        for (int x = 8; x < 24; ++x) {
            float d = std::fabs(a.at(0, y, x) - pal.accent[0]) + std::fabs(a.at(1, y, x) - pal.accent[1]) +
                      std::fabs(a.at(2, y, x) - pal.accent[2]);
            if (d < 0.05f) ++accent_px;
        }
    }
    EXPECT_GT(accent_px, 10);
}

TEST(SpecIndex, RoundTripsOverGrid) {
    for (int64_t i = 0; i < kSpecGridSize; i += 31) {
        EXPECT_EQ(spec_index(spec_from_index(i)), i);
    }
}
