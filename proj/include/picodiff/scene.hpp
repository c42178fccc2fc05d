#pragma once

#include <array>
#include <string>

#include "picodiff/image.hpp"
#include "picodiff/rng.hpp"

namespace picodiff {

constexpr int kNumShapes = 8;
constexpr int kNumPalettes = 8;
constexpr int kNumCells = 9;
constexpr int kNumScales = 2;
constexpr int kNumIdentities = 10;

enum class Texture : int { solid = 0, stripes = 1, dots = 2 };

struct Palette {
    std::array<float, 3> bg;
    std::array<float, 3> fg;
    std::array<float, 3> accent;  // face-glyph ink
    Texture texture;
    const char* name;
};

struct IdentityParams {
    float eye_dx;       // eye separation in glyph units
    float mouth_curve;  // >0 smile, <0 frown
    float head_aspect;  // vertical stretch of the glyph
    const char* name;
};

const std::array<Palette, kNumPalettes>& palette_table();
const std::array<IdentityParams, kNumIdentities>& identity_table();

// Ground-truth generative factors of one scene.
struct SceneSpec {
    int shape_id = 0;     // 0..7
    int palette_id = 0;   // 0..7
    int layout_cell = 0;  // 0..8, row-major 3x3 grid
    int scale_id = 0;     // 0 small, 1 large
    int identity_id = 0;  // 0..9

    bool operator==(const SceneSpec&) const = default;
};

void validate_spec(const SceneSpec& spec);
SceneSpec random_spec(Philox& rng);
int64_t spec_index(const SceneSpec& spec);  // dense index over the factor grid
SceneSpec spec_from_index(int64_t index);
constexpr int64_t kSpecGridSize =
    int64_t{kNumShapes} * kNumPalettes * kNumCells * kNumScales * kNumIdentities;

const char* shape_name(int shape_id);
const char* palette_name(int palette_id);
const char* cell_name(int cell);
const char* scale_name(int scale_id);
const char* identity_name(int identity_id);

// Grid geometry shared with the factor oracle.
float cell_center_x(int cell);
float cell_center_y(int cell);
float shape_radius(int scale_id);

// Fractional pixel coverage of the shape outline (no glyph, no texture).
// Used both by rendering and by the oracle templates.
float shape_coverage(int shape_id, float cx, float cy, float radius, int px, int py);

// Fill color the texture pattern paints at a pixel (fg or the fg/bg mix).
std::array<float, 3> palette_fill_color(const Palette& pal, int px, int py);

// Deterministic anti-aliased rasterization; the face glyph is always drawn
// inside the shape so every factor stays decodable.
Image render_scene(const SceneSpec& spec);

// Object condition: the rendered object translated to the image center, all
// other pixels replaced by one uniform random color.
Image crop_pad_object(const SceneSpec& spec, Philox& rng);

// Face condition variant: view zoomed onto the glyph, shape fill as backdrop.
Image render_face_zoom(const SceneSpec& spec);

}  // namespace picodiff
