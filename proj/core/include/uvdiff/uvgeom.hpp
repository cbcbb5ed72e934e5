#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <string>
#include <vector>

#include "uvdiff/image.hpp"
#include "uvdiff/inpaint.hpp"
#include "uvdiff/synthdata.hpp"

namespace uvdiff {

// Triangle mesh with per-vertex UVs. Faces are wound counter-clockwise when
// seen from outside the surface; geometric normals therefore point outward.
struct Mesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Eigen::Vector2d> uvs;
    std::vector<std::array<int, 3>> faces;
};

// Weak-perspective camera. Camera space is model space rotated by
// `rotation`; the image point of v is scale * (R v).xy + translation in
// pixel coordinates (x right, y down), and depth is (R v).z with larger
// values closer to the viewer. The viewer looks along -z, so view vectors
// point toward +z.
struct Camera {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector2d translation{0.0, 0.0};

    Eigen::Vector2d project(const Eigen::Vector3d& v) const {
        const Eigen::Vector3d c = rotation * v;
        return scale * c.head<2>() + translation;
    }
    double depth(const Eigen::Vector3d& v) const { return (rotation * v).z(); }
};

// Linear morphable model: vertices(p) = mean + shape_basis * p_s +
// expr_basis * p_e, with column-orthonormal bases over the stacked [3V]
// vertex coordinates.
struct MorphableModel {
    Mesh base;
    Eigen::MatrixXd shape_basis; // [3V, k_shape]
    Eigen::MatrixXd expr_basis;  // [3V, k_expr]
    std::vector<int> landmarks;  // vertex indices

    int k_shape() const { return int(shape_basis.cols()); }
    int k_expr() const { return int(expr_basis.cols()); }

    // Deterministic synthetic stand-in: an ellipsoid patch on a lat-long
    // grid (extending past +-90 degrees of yaw so a frontal camera sees a
    // proper subset of the UV square), cylindrical-style UVs, a spread
    // subgrid of landmark vertices, and smooth random deformation bases
    // orthonormalized jointly by QR.
    static MorphableModel synthetic(std::uint64_t seed, int rings = 24,
                                    int segments = 33, int k_shape = 8,
                                    int k_expr = 4);
};

Mesh instantiate(const MorphableModel& mm, const Eigen::VectorXd& shape_coeffs,
                 const Eigen::VectorXd& expr_coeffs);

struct FitResult {
    Eigen::VectorXd shape_coeffs;
    Eigen::VectorXd expr_coeffs;
    Camera camera;
    double residual = 0.0; // mean 2-D landmark reprojection error (pixels)
    int iterations = 0;
};

// Weak-perspective Procrustes from 2-D/3-D correspondences: the
// unconstrained 2x3 linear map is projected onto scale * orthonormal rows
// via SVD, the third rotation row is the cross product of the first two.
// Throws std::invalid_argument for degenerate (rank-deficient) input.
Camera procrustes_weak(const std::vector<Eigen::Vector2d>& points2d,
                       const std::vector<Eigen::Vector3d>& points3d,
                       double* fit_scale_ratio = nullptr);

// Alternates Procrustes camera fit and a ridge-regularized linear solve for
// the coefficients. Each half-step is accepted only if the reprojection
// residual does not increase, so the residual is non-increasing across
// iterations by construction.
FitResult fit_morphable(const std::vector<Eigen::Vector2d>& landmarks2d,
                        const MorphableModel& mm, double ridge = 1e-3,
                        int max_iters = 50);

// Rasterization callback: pixel (x, y) with barycentric weights (b0, b1, b2)
// of the triangle's three points, evaluated at the pixel center.
using RasterFn = std::function<void(int x, int y, double b0, double b1, double b2)>;
void raster_triangle(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1,
                     const Eigen::Vector2d& p2, int width, int height,
                     const RasterFn& fn);

struct RenderParams {
    int width = 160;
    int height = 160;
    ShadeParams shade; // light/view in camera space
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};
};

// Z-buffered weak-perspective render. Quad normals are model-space; they are
// rotated into camera space and shaded with the shared Blinn-Phong term, so
// a frontal render of a flat patch matches shade_uv texel-for-texel (up to
// resampling).
Image render_mesh(const Mesh& mesh, const Camera& cam, const ReflectanceQuad& quad,
                  const RenderParams& rp);

// Pulls image colors back into UV space: texels whose surface point is
// front-facing, on-screen and unoccluded (z-buffer test against a depth-only
// render) receive the bilinearly sampled image color and mask 1; the mask is
// then eroded by one texel (4-neighborhood). If nothing is visible the
// result is an all-zero mask and a warning on stderr.
Observation unwrap(const Image& image, const Mesh& mesh, const Camera& cam,
                   int resolution);

struct ReconstructConfig {
    InpaintConfig inpaint;
    int resolution = 32;
    double ridge = 1e-3;
};

struct ReconstructResult {
    FitResult fit;
    Mesh mesh;
    Observation observation;
    InpaintResult inpaint;
};

// Full pipeline: landmark fit -> mesh -> unwrap -> diffusion inpaint.
// Deterministic for fixed inputs and cfg.inpaint.seed.
ReconstructResult reconstruct(const Image& image,
                              const std::vector<Eigen::Vector2d>& landmarks2d,
                              const MorphableModel& mm, const ModelFn<float>& model,
                              const NoiseSchedule& s, const ReconstructConfig& cfg);

// Minimal OBJ support: v/vt/f records, triangles only.
void write_obj(const std::string& path, const Mesh& mesh);
Mesh read_obj(const std::string& path);

} // namespace uvdiff
