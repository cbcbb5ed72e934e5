#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "uvdiff/rng.hpp"
#include "uvdiff/tensor.hpp"

namespace uvdiff {

// Coupled texture/reflectance UV maps, all [C,R,R] float:
//   texture  [3] in [0,1]  shaded appearance
//   diffuse  [3] in [0,1]  diffuse albedo
//   specular [1] in [0,1]  specular albedo
//   normal   [3]           unit tangent-space normals (z toward the viewer)
struct ReflectanceQuad {
    Tensor texture;
    Tensor diffuse;
    Tensor specular;
    Tensor normal;

    std::size_t resolution() const { return texture.extent(1); }
    void validate() const; // shapes, value ranges, unit-length normals
};

// Stacked network encoding: [10,R,R] in [-1,1], channels
// [2T-1 (3), 2Ad-1 (3), 2As-1 (1), n (3)]. Normals are already in [-1,1]
// and pass through unscaled.
Tensor stack_quad(const ReflectanceQuad& q);

// Inverse of stack_quad for (possibly out-of-range) sampler output: albedo
// channels are clamped to [0,1], normals renormalized to unit length
// ((0,0,1) is substituted for degenerate near-zero vectors).
ReflectanceQuad unstack_quad(const Tensor& stacked);

// Blinn-Phong shading of the reflectance maps in UV space. `light` and
// `view` point from the surface toward the light/viewer and need not be
// pre-normalized. Output is a [3,R,R] texture clamped to [0,1].
struct ShadeParams {
    Eigen::Vector3d light{0.3, -0.25, 1.0};
    Eigen::Vector3d view{0.0, 0.0, 1.0};
    double ambient = 0.25;
    double diffuse = 0.75;
    double specular = 0.6;
    double shininess = 16.0;
};
Tensor shade_uv(const ReflectanceQuad& q, const ShadeParams& p);

// Single-point Blinn-Phong shared by shade_uv and the mesh renderer, so
// rendered pixels and shaded texels agree exactly for the same inputs.
// n, l and h must be unit vectors; h is the half vector normalize(l + view).
inline Eigen::Vector3d shade_point(const Eigen::Vector3d& albedo_d, double albedo_s,
                                   const Eigen::Vector3d& n, const Eigen::Vector3d& l,
                                   const Eigen::Vector3d& h, const ShadeParams& p) {
    const double ndl = std::max(0.0, n.dot(l));
    const double ndh = std::max(0.0, n.dot(h));
    const double spec = p.specular * albedo_s * std::pow(ndh, p.shininess);
    const Eigen::Vector3d c =
        albedo_d * (p.ambient + p.diffuse * ndl) + Eigen::Vector3d::Constant(spec);
    return c.cwiseMax(0.0).cwiseMin(1.0);
}

// Per-channel histogram matching: remaps `a` so each channel's empirical
// distribution matches the corresponding channel of `ref` (shapes [C,...],
// channel counts must agree).
Tensor histogram_match(const Tensor& a, const Tensor& ref);

// Procedurally generated quad: multi-octave value noise for the albedos and
// a bump-mapped height field for the normals; the texture channel is the
// quad's own reflectance shaded under a random frontal light. Fully
// determined by (seed, index) — no global state.
struct QuadSample {
    ReflectanceQuad quad;
    ShadeParams shading; // parameters used to produce quad.texture
};
QuadSample make_quad(std::uint64_t seed, std::uint32_t index, int resolution);

// Dataset container "UVDS1": text header (count, resolution, channels,
// split, generator, seed), blank line, one NDT1 float tensor [N,10,R,R] of
// stacked quads. File bytes depend only on the header fields.
struct DatasetHeader {
    std::uint64_t count = 0;
    int resolution = 0;
    int channels = 10;
    std::string split = "train";
    std::string generator = "value-noise-v1";
    std::uint64_t seed = 0;
};

Tensor make_dataset(std::uint64_t seed, std::size_t count, int resolution,
                    std::uint32_t index_offset = 0);
void write_dataset(const std::string& path, const DatasetHeader& header,
                   const Tensor& data);
std::pair<DatasetHeader, Tensor> read_dataset(const std::string& path);

// Index offset reserved for held-out evaluation quads so they can never
// collide with training items generated from the same seed.
constexpr std::uint32_t kHeldOutIndexOffset = 1'000'000;

} // namespace uvdiff
