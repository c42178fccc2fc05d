#pragma once

#include "picodiff/image.hpp"
#include "picodiff/scene.hpp"

namespace picodiff {

// Best-guess factor decode plus a [0,1] confidence per factor. Always returns
// a guess; degenerate inputs land at low confidence.
struct FactorEstimate {
    SceneSpec spec;
    Texture texture = Texture::solid;  // fg-pattern readout, meaningful on crops too
    float conf_palette = 0.0f;
    float conf_shape = 0.0f;
    float conf_layout = 0.0f;
    float conf_identity = 0.0f;
};

// Stages: background from border statistics; palette by nearest fg/bg
// centroid; not-background mask -> centroid cell; shape and scale by
// normalized cross-correlation against rendered templates at that cell;
// identity by re-rendered glyph template match.
FactorEstimate decode_factors(const Image& img);

}  // namespace picodiff
