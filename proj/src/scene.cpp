#include "picodiff/scene.hpp"

#include <cmath>

#include "picodiff/errors.hpp"

namespace picodiff {

const std::array<Palette, kNumPalettes>& palette_table() {
    static const std::array<Palette, kNumPalettes> table = {{
        {{0.99f, 0.92f, 0.84f}, {0.82f, 0.12f, 0.10f}, {0.05f, 0.05f, 0.05f}, Texture::solid, "ember"},
        {{0.70f, 0.85f, 0.99f}, {0.02f, 0.22f, 0.72f}, {0.98f, 0.95f, 0.30f}, Texture::solid, "ocean"},
        {{0.10f, 0.16f, 0.08f}, {0.40f, 0.78f, 0.22f}, {0.97f, 0.92f, 0.88f}, Texture::solid, "moss"},
        {{0.90f, 0.76f, 0.97f}, {0.50f, 0.08f, 0.66f}, {0.99f, 0.85f, 0.10f}, Texture::stripes, "grape"},
        {{0.22f, 0.24f, 0.28f}, {0.78f, 0.80f, 0.84f}, {0.92f, 0.28f, 0.08f}, Texture::stripes, "slate"},
        {{0.44f, 0.27f, 0.06f}, {0.99f, 0.78f, 0.12f}, {0.03f, 0.28f, 0.62f}, Texture::stripes, "honey"},
        {{0.99f, 0.78f, 0.84f}, {0.86f, 0.22f, 0.48f}, {0.06f, 0.22f, 0.18f}, Texture::dots, "rose"},
        {{0.62f, 0.95f, 0.88f}, {0.02f, 0.50f, 0.46f}, {0.95f, 0.45f, 0.06f}, Texture::dots, "teal"},
    }};
    return table;
}

const std::array<IdentityParams, kNumIdentities>& identity_table() {
    static const std::array<IdentityParams, kNumIdentities> table = {{
        {0.26f, 0.55f, 1.00f, "ada"},
        {0.58f, 0.55f, 1.00f, "bo"},
        {0.26f, -0.55f, 1.00f, "cy"},
        {0.58f, -0.55f, 1.00f, "dee"},
        {0.42f, 0.00f, 0.66f, "eko"},
        {0.42f, 0.00f, 1.38f, "fin"},
        {0.26f, 0.55f, 0.66f, "gus"},
        {0.58f, -0.55f, 1.38f, "hana"},
        {0.58f, 0.00f, 0.66f, "ivo"},
        {0.26f, 0.00f, 1.38f, "juno"},
    }};
    return table;
}

namespace {
const char* kShapeNames[kNumShapes] = {"circle", "square", "triangle", "star",
                                       "cross",  "ring",   "diamond",  "bar"};
const char* kCellNames[kNumCells] = {"northwest", "north",     "northeast", "west", "center",
                                     "east",      "southwest", "south",     "southeast"};
const char* kScaleNames[kNumScales] = {"small", "large"};

constexpr float kCellCenters[3] = {7.0f, 16.0f, 25.0f};
constexpr float kRadius[2] = {4.5f, 5.8f};

// Glyph box as a fraction of the shape radius, sized to the shape's interior.
constexpr float kGlyphFraction[kNumShapes] = {0.62f, 0.62f, 0.52f, 0.48f,
                                              0.42f, 0.48f, 0.60f, 0.55f};
}  // namespace

const char* shape_name(int shape_id) { return kShapeNames[shape_id]; }
const char* palette_name(int palette_id) { return palette_table()[palette_id].name; }
const char* cell_name(int cell) { return kCellNames[cell]; }
const char* scale_name(int scale_id) { return kScaleNames[scale_id]; }
const char* identity_name(int identity_id) { return identity_table()[identity_id].name; }

float cell_center_x(int cell) { return kCellCenters[cell % 3]; }
float cell_center_y(int cell) { return kCellCenters[cell / 3]; }
float shape_radius(int scale_id) { return kRadius[scale_id]; }

void validate_spec(const SceneSpec& spec) {
    if (spec.shape_id < 0 || spec.shape_id >= kNumShapes || spec.palette_id < 0 ||
        spec.palette_id >= kNumPalettes || spec.layout_cell < 0 || spec.layout_cell >= kNumCells ||
        spec.scale_id < 0 || spec.scale_id >= kNumScales || spec.identity_id < 0 ||
        spec.identity_id >= kNumIdentities) {
        throw ContractError("scene spec out of range");
    }
}

SceneSpec random_spec(Philox& rng) {
    SceneSpec s;
    s.shape_id = static_cast<int>(rng.uniform_int(kNumShapes));
    s.palette_id = static_cast<int>(rng.uniform_int(kNumPalettes));
    s.layout_cell = static_cast<int>(rng.uniform_int(kNumCells));
    s.scale_id = static_cast<int>(rng.uniform_int(kNumScales));
    s.identity_id = static_cast<int>(rng.uniform_int(kNumIdentities));
    return s;
}

int64_t spec_index(const SceneSpec& s) {
    return (((int64_t{s.shape_id} * kNumPalettes + s.palette_id) * kNumCells + s.layout_cell) *
                kNumScales +
            s.scale_id) *
               kNumIdentities +
           s.identity_id;
}

SceneSpec spec_from_index(int64_t index) {
    SceneSpec s;
    s.identity_id = static_cast<int>(index % kNumIdentities);
    index /= kNumIdentities;
    s.scale_id = static_cast<int>(index % kNumScales);
    index /= kNumScales;
    s.layout_cell = static_cast<int>(index % kNumCells);
    index /= kNumCells;
    s.palette_id = static_cast<int>(index % kNumPalettes);
    index /= kNumPalettes;
    s.shape_id = static_cast<int>(index);
    return s;
}

namespace {

bool point_in_shape(int shape_id, float ux, float uy) {
    switch (shape_id) {
        case 0:  // circle
            return ux * ux + uy * uy <= 1.0f;
        case 1:  // square
            return std::fabs(ux) <= 0.80f && std::fabs(uy) <= 0.80f;
        case 2: {  // triangle, apex up
            // vertices (0,-1), (-0.87, 0.5), (0.87, 0.5)
            if (uy > 0.5f) return false;
            float t = (uy + 1.0f) / 1.5f;  // 0 at apex, 1 at base
            return std::fabs(ux) <= 0.87f * t;
        }
        case 3: {  // five-pointed star
            float ang = std::atan2(ux, -uy);  // 0 at "up"
            if (ang < 0) ang += 6.2831853f;
            float sector = std::fmod(ang, 6.2831853f / 5.0f);
            float a = std::fabs(sector - 6.2831853f / 10.0f);  // 0 at inner vertex direction
            // boundary radius interpolates outer tip (1.0) to inner vertex (0.45)
            float half = 6.2831853f / 10.0f;
            float t = a / half;  // 1 at tip direction, 0 at inner vertex
            float rb = 0.45f + (1.0f - 0.45f) * t * t;
            return ux * ux + uy * uy <= rb * rb;
        }
        case 4:  // cross
            return (std::fabs(ux) <= 0.34f && std::fabs(uy) <= 1.0f) ||
                   (std::fabs(uy) <= 0.34f && std::fabs(ux) <= 1.0f);
        case 5: {  // ring
            float r2 = ux * ux + uy * uy;
            return r2 <= 1.0f && r2 >= 0.62f * 0.62f;
        }
        case 6:  // diamond
            return std::fabs(ux) + std::fabs(uy) <= 1.0f;
        case 7:  // bar
            return std::fabs(ux) <= 1.0f && std::fabs(uy) <= 0.48f;
        default:
            return false;
    }
}

bool point_in_glyph(const IdentityParams& id, float gx, float gy) {
    // gy is already divided by head_aspect.
    float exl = gx + id.eye_dx, exr = gx - id.eye_dx;
    float ey = gy + 0.32f;
    if (exl * exl + ey * ey <= 0.20f * 0.20f) return true;
    if (exr * exr + ey * ey <= 0.20f * 0.20f) return true;
    if (std::fabs(gx) <= 0.55f) {
        float my = 0.38f + id.mouth_curve * (gx * gx - 0.15f);
        if (std::fabs(gy - my) <= 0.13f) return true;
    }
    return false;
}

// Glyph features are subpixel at small scales; 8x8 supersampling keeps every
// identity pair distinct after 8-bit quantization.
float glyph_coverage(const IdentityParams& id, float cx, float cy, float gr, float aspect, int px,
                     int py) {
    if (std::fabs(px + 0.5f - cx) > 0.95f * gr + 1.0f ||
        std::fabs(py + 0.5f - cy) > 0.80f * gr * aspect + 1.0f) {
        return 0.0f;
    }
    float cover = 0.0f;
    for (int sy = 0; sy < 8; ++sy) {
        for (int sx = 0; sx < 8; ++sx) {
            float x = px + (sx + 0.5f) / 8.0f;
            float y = py + (sy + 0.5f) / 8.0f;
            float gx = (x - cx) / gr;
            float gy = (y - cy) / (gr * aspect);
            if (point_in_glyph(id, gx, gy)) cover += 1.0f;
        }
    }
    return cover / 64.0f;
}

std::array<float, 3> texture_color(const Palette& pal, int px, int py) {
    switch (pal.texture) {
        case Texture::solid:
            return pal.fg;
        case Texture::stripes: {
            if ((py / 2) % 2 == 0) return pal.fg;
            return {0.5f * (pal.fg[0] + pal.bg[0]), 0.5f * (pal.fg[1] + pal.bg[1]),
                    0.5f * (pal.fg[2] + pal.bg[2])};
        }
        case Texture::dots: {
            int mx = px % 4, my = py % 4;
            if ((mx == 1 || mx == 2) && (my == 1 || my == 2)) {
                return {0.5f * (pal.fg[0] + pal.bg[0]), 0.5f * (pal.fg[1] + pal.bg[1]),
                        0.5f * (pal.fg[2] + pal.bg[2])};
            }
            return pal.fg;
        }
    }
    return pal.fg;
}

void blend(Image& img, int x, int y, const std::array<float, 3>& color, float alpha) {
    if (alpha <= 0.0f) return;
    for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = img.at(c, y, x) * (1.0f - alpha) + color[c] * alpha;
    }
}

}  // namespace

std::array<float, 3> palette_fill_color(const Palette& pal, int px, int py) {
    return texture_color(pal, px, py);
}

float shape_coverage(int shape_id, float cx, float cy, float radius, int px, int py) {
    float cover = 0.0f;
    for (int sy = 0; sy < 4; ++sy) {
        for (int sx = 0; sx < 4; ++sx) {
            float x = px + (sx + 0.5f) / 4.0f;
            float y = py + (sy + 0.5f) / 4.0f;
            if (point_in_shape(shape_id, (x - cx) / radius, (y - cy) / radius)) cover += 1.0f;
        }
    }
    return cover / 16.0f;
}

Image render_scene(const SceneSpec& spec) {
    validate_spec(spec);
    const Palette& pal = palette_table()[spec.palette_id];
    const IdentityParams& id = identity_table()[spec.identity_id];
    float cx = cell_center_x(spec.layout_cell);
    float cy = cell_center_y(spec.layout_cell);
    float r = shape_radius(spec.scale_id);
    float gr = r * kGlyphFraction[spec.shape_id];

    Image img;
    for (int y = 0; y < Image::kRes; ++y) {
        for (int x = 0; x < Image::kRes; ++x) {
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = pal.bg[c];
            float cover = shape_coverage(spec.shape_id, cx, cy, r, x, y);
            if (cover > 0.0f) blend(img, x, y, texture_color(pal, x, y), cover);
            float gcov = glyph_coverage(id, cx, cy, gr, id.head_aspect, x, y);
            if (gcov > 0.0f) blend(img, x, y, pal.accent, gcov);
        }
    }
    return img;
}

Image crop_pad_object(const SceneSpec& spec, Philox& rng) {
    validate_spec(spec);
    Image scene = render_scene(spec);
    // Random pad color, rejection-sampled away from the object's mean fill so
    // the object never camouflages into its own padding.
    const Palette& pal = palette_table()[spec.palette_id];
    std::array<float, 3> pad;
    for (int tries = 0; tries < 64; ++tries) {
        pad = {rng.uniform(), rng.uniform(), rng.uniform()};
        float d = 0.0f;
        for (int c = 0; c < 3; ++c) {
            float diff = pad[c] - pal.fg[c];
            d += diff * diff;
        }
        if (std::sqrt(d) > 0.50f) break;
    }
    float cx = cell_center_x(spec.layout_cell);
    float cy = cell_center_y(spec.layout_cell);
    float r = shape_radius(spec.scale_id);
    // Integer translation moving the object's cell center onto the image center.
    int tx = static_cast<int>(std::lround(cx - 16.0f));
    int ty = static_cast<int>(std::lround(cy - 16.0f));

    Image img;
    for (int y = 0; y < Image::kRes; ++y) {
        for (int x = 0; x < Image::kRes; ++x) {
            int sx = x + tx;
            int sy = y + ty;
            bool copied = false;
            if (sx >= 0 && sx < Image::kRes && sy >= 0 && sy < Image::kRes) {
                if (shape_coverage(spec.shape_id, cx, cy, r, sx, sy) >= 0.5f) {
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = scene.at(c, sy, sx);
                    copied = true;
                }
            }
            if (!copied) {
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = pad[c];
            }
        }
    }
    return img;
}

Image render_face_zoom(const SceneSpec& spec) {
    validate_spec(spec);
    const Palette& pal = palette_table()[spec.palette_id];
    const IdentityParams& id = identity_table()[spec.identity_id];
    float gr = 10.0f;

    Image img;
    for (int y = 0; y < Image::kRes; ++y) {
        for (int x = 0; x < Image::kRes; ++x) {
            auto fill = texture_color(pal, x, y);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = fill[c];
            float gcov = glyph_coverage(id, 16.0f, 16.0f, gr, id.head_aspect, x, y);
            if (gcov > 0.0f) blend(img, x, y, pal.accent, gcov);
        }
    }
    return img;
}

}  // namespace picodiff
