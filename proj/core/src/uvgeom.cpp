#include "uvdiff/uvgeom.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace uvdiff {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Bilinear lookup of a [C,R,R] map at continuous texel coordinates
// (tx, ty) in [0,R] (texel i centered at i + 0.5), edge-clamped.
double bilinear_map(const Tensor& map, double tx, double ty, std::size_t c) {
    const int r = int(map.extent(1));
    const double fx = std::clamp(tx - 0.5, 0.0, double(r - 1));
    const double fy = std::clamp(ty - 0.5, 0.0, double(r - 1));
    const int x0 = std::clamp(int(fx), 0, std::max(0, r - 2));
    const int y0 = std::clamp(int(fy), 0, std::max(0, r - 2));
    const int x1 = std::min(x0 + 1, r - 1);
    const int y1 = std::min(y0 + 1, r - 1);
    const double wx = fx - x0, wy = fy - y0;
    const std::size_t plane = std::size_t(r) * std::size_t(r);
    const float* p = map.data() + c * plane;
    const double v00 = p[std::size_t(y0) * r + x0], v01 = p[std::size_t(y0) * r + x1];
    const double v10 = p[std::size_t(y1) * r + x0], v11 = p[std::size_t(y1) * r + x1];
    return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
}

Eigen::Vector3d face_normal(const Mesh& mesh, const std::array<int, 3>& f) {
    const Eigen::Vector3d& a = mesh.vertices[std::size_t(f[0])];
    const Eigen::Vector3d& b = mesh.vertices[std::size_t(f[1])];
    const Eigen::Vector3d& c = mesh.vertices[std::size_t(f[2])];
    return (b - a).cross(c - a);
}

Eigen::VectorXd stack_vertices(const std::vector<Eigen::Vector3d>& verts) {
    Eigen::VectorXd out(3 * Eigen::Index(verts.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) out.segment<3>(3 * Eigen::Index(i)) = verts[i];
    return out;
}

} // namespace

MorphableModel MorphableModel::synthetic(std::uint64_t seed, int rings, int segments,
                                         int k_shape, int k_expr) {
    require(rings >= 4 && segments >= 5, "synthetic model: grid too small");
    require(k_shape >= 1 && k_expr >= 1, "synthetic model: need at least one basis each");
    const int v_count = rings * segments;
    require(3 * v_count > k_shape + k_expr, "synthetic model: more bases than DoF");

    MorphableModel mm;
    // Ellipsoid patch: theta (polar) spans [35, 145] degrees, phi (yaw)
    // [-115, 115] degrees — wider than a hemisphere so a frontal camera sees
    // only part of the UV square, like a head scan topology.
    const double th0 = 35.0 * kPi / 180.0, th1 = 145.0 * kPi / 180.0;
    const double ph_max = 115.0 * kPi / 180.0;
    const double ax = 1.0, ay = 1.15, az = 0.9;
    mm.base.vertices.reserve(std::size_t(v_count));
    mm.base.uvs.reserve(std::size_t(v_count));
    for (int i = 0; i < rings; ++i) {
        const double th = th0 + (th1 - th0) * double(i) / double(rings - 1);
        for (int j = 0; j < segments; ++j) {
            const double ph = -ph_max + 2.0 * ph_max * double(j) / double(segments - 1);
            const Eigen::Vector3d dir(std::sin(th) * std::sin(ph), std::cos(th),
                                      std::sin(th) * std::cos(ph));
            mm.base.vertices.emplace_back(ax * dir.x(), ay * dir.y(), az * dir.z());
            // v grows downward (image-row convention), u left to right.
            mm.base.uvs.emplace_back(double(j) / double(segments - 1),
                                     double(i) / double(rings - 1));
        }
    }
    auto vid = [segments](int i, int j) { return i * segments + j; };
    for (int i = 0; i + 1 < rings; ++i)
        for (int j = 0; j + 1 < segments; ++j) {
            mm.base.faces.push_back({vid(i, j), vid(i + 1, j), vid(i, j + 1)});
            mm.base.faces.push_back({vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)});
        }
    // Ensure outward winding (positive projection on the radial direction).
    {
        const auto& f = mm.base.faces.front();
        const Eigen::Vector3d n = face_normal(mm.base, f);
        const Eigen::Vector3d outward = mm.base.vertices[std::size_t(f[0])];
        if (n.dot(outward) < 0)
            for (auto& face : mm.base.faces) std::swap(face[1], face[2]);
    }

    // Landmarks: a 4 x 5 spread subgrid, biased toward the interior.
    for (double fi : {0.2, 0.4, 0.6, 0.8})
        for (double fj : {0.1, 0.3, 0.5, 0.7, 0.9})
            mm.landmarks.push_back(
                vid(int(std::lround(fi * (rings - 1))), int(std::lround(fj * (segments - 1)))));

    // Smooth random displacement fields, jointly orthonormalized so the
    // concatenated [shape | expression] basis has orthonormal columns.
    const int k_total = k_shape + k_expr;
    Eigen::MatrixXd fields(3 * v_count, k_total);
    Rng rng = make_stream(seed, StreamDomain::scene, 0xB0D1);
    for (int k = 0; k < k_total; ++k) {
        double amp[3][3], ph1[3][3], ph2[3][3];
        int f1[3][3], f2[3][3];
        for (int c = 0; c < 3; ++c)
            for (int hrm = 0; hrm < 3; ++hrm) {
                amp[c][hrm] = rng.normal();
                ph1[c][hrm] = rng.uniform() * 2.0 * kPi;
                ph2[c][hrm] = rng.uniform() * 2.0 * kPi;
                f1[c][hrm] = 1 + rng.uniform_int(0, 3);
                f2[c][hrm] = 1 + rng.uniform_int(0, 3);
            }
        for (int i = 0; i < rings; ++i)
            for (int j = 0; j < segments; ++j) {
                const double a = double(i) / double(rings - 1) * kPi;
                const double b = double(j) / double(segments - 1) * kPi;
                for (int c = 0; c < 3; ++c) {
                    double val = 0;
                    for (int hrm = 0; hrm < 3; ++hrm)
                        val += amp[c][hrm] * std::sin(f1[c][hrm] * a + ph1[c][hrm]) *
                               std::sin(f2[c][hrm] * b + ph2[c][hrm]);
                    fields(3 * vid(i, j) + c, k) = val;
                }
            }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(fields);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(3 * v_count, k_total);
    const Eigen::VectorXd rdiag = qr.matrixQR().diagonal().head(k_total);
    for (int k = 0; k < k_total; ++k) {
        require(std::abs(rdiag[k]) > 1e-8, "synthetic model: degenerate basis draw");
        if (rdiag[k] < 0) q.col(k) = -q.col(k); // sign-stabilize
    }
    mm.shape_basis = q.leftCols(k_shape);
    mm.expr_basis = q.middleCols(k_shape, k_expr);
    return mm;
}

Mesh instantiate(const MorphableModel& mm, const Eigen::VectorXd& shape_coeffs,
                 const Eigen::VectorXd& expr_coeffs) {
    require(shape_coeffs.size() == mm.shape_basis.cols(),
            "instantiate: shape coefficient count mismatch");
    require(expr_coeffs.size() == mm.expr_basis.cols(),
            "instantiate: expression coefficient count mismatch");
    Mesh out = mm.base;
    Eigen::VectorXd disp =
        mm.shape_basis * shape_coeffs + mm.expr_basis * expr_coeffs;
    for (std::size_t i = 0; i < out.vertices.size(); ++i)
        out.vertices[i] += disp.segment<3>(3 * Eigen::Index(i));
    return out;
}

Camera procrustes_weak(const std::vector<Eigen::Vector2d>& points2d,
                       const std::vector<Eigen::Vector3d>& points3d,
                       double* fit_scale_ratio) {
    require(points2d.size() == points3d.size(), "procrustes: count mismatch");
    const std::size_t n = points2d.size();
    require(n >= 4, "procrustes: need at least 4 correspondences");
    Eigen::Vector2d cx = Eigen::Vector2d::Zero();
    Eigen::Vector3d cy = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
        cx += points2d[i];
        cy += points3d[i];
    }
    cx /= double(n);
    cy /= double(n);
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();     // Yc^T Yc
    Eigen::Matrix<double, 3, 2> r3x2 = Eigen::Matrix<double, 3, 2>::Zero(); // Yc^T Xc
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d y = points3d[i] - cy;
        g += y * y.transpose();
        r3x2 += y * (points2d[i] - cx).transpose();
    }
    // Collinear 3-D landmarks leave the Gram matrix rank-1. Catch that here:
    // the regularized solve below would amplify roundoff into the null
    // directions and mask the degeneracy from the singular-value test.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(g);
    if (!(es.eigenvalues()(2) > 0.0) ||
        es.eigenvalues()(1) <= 1e-10 * es.eigenvalues()(2))
        fail_arg("procrustes: degenerate configuration (collinear landmarks)");

    // Tiny Tikhonov term keeps the solve defined for planar landmark sets.
    g += Eigen::Matrix3d::Identity() * (1e-12 * g.trace() + 1e-300);
    const Eigen::Matrix<double, 2, 3> m = (g.ldlt().solve(r3x2)).transpose();

    // Dynamic-size SVD: Eigen's thin unitaries are only available for
    // dynamic matrices.
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s1 = svd.singularValues()(0), s2 = svd.singularValues()(1);
    if (fit_scale_ratio) *fit_scale_ratio = s1 > 0 ? s2 / s1 : 0.0;
    if (!(s1 > 0.0) || s2 <= 1e-9 * s1)
        fail_arg("procrustes: degenerate configuration (rank-deficient landmarks)");

    const Eigen::Matrix<double, 2, 3> r2 =
        svd.matrixU() * svd.matrixV().transpose();
    Camera cam;
    cam.scale = 0.5 * (s1 + s2);
    cam.rotation.row(0) = r2.row(0);
    cam.rotation.row(1) = r2.row(1);
    cam.rotation.row(2) = r2.row(0).cross(r2.row(1));
    cam.translation = cx - cam.scale * (cam.rotation * cy).head<2>();
    return cam;
}

namespace {

double reprojection_residual(const std::vector<Eigen::Vector2d>& lm2d,
                             const std::vector<Eigen::Vector3d>& lm3d,
                             const Camera& cam) {
    double sum = 0;
    for (std::size_t i = 0; i < lm2d.size(); ++i)
        sum += (lm2d[i] - cam.project(lm3d[i])).norm();
    return sum / double(lm2d.size());
}

} // namespace

FitResult fit_morphable(const std::vector<Eigen::Vector2d>& landmarks2d,
                        const MorphableModel& mm, double ridge, int max_iters) {
    const std::size_t L = mm.landmarks.size();
    require(landmarks2d.size() == L,
            "fit: expected " + std::to_string(L) + " landmarks, got " +
                std::to_string(landmarks2d.size()));
    require(ridge >= 0, "fit: ridge must be >= 0");
    const int ks = mm.k_shape(), ke = mm.k_expr(), k = ks + ke;

    // Landmark rows of mean and joint basis.
    std::vector<Eigen::Vector3d> mean_lm(L);
    Eigen::MatrixXd basis_lm(3 * L, k); // rows grouped per landmark
    for (std::size_t i = 0; i < L; ++i) {
        const int v = mm.landmarks[i];
        mean_lm[i] = mm.base.vertices[std::size_t(v)];
        basis_lm.middleRows(3 * Eigen::Index(i), 3)
            << mm.shape_basis.middleRows(3 * v, 3), mm.expr_basis.middleRows(3 * v, 3);
    }
    auto landmarks3d = [&](const Eigen::VectorXd& p) {
        std::vector<Eigen::Vector3d> out(L);
        const Eigen::VectorXd d = basis_lm * p;
        for (std::size_t i = 0; i < L; ++i)
            out[i] = mean_lm[i] + d.segment<3>(3 * Eigen::Index(i));
        return out;
    };

    Eigen::VectorXd p = Eigen::VectorXd::Zero(k);
    std::vector<Eigen::Vector3d> lm3d = landmarks3d(p);
    Camera cam = procrustes_weak(landmarks2d, lm3d);
    double residual = reprojection_residual(landmarks2d, lm3d, cam);

    FitResult fr;
    int iter = 0;
    for (; iter < max_iters; ++iter) {
        const double res_before = residual;

        // Camera half-step (keep previous camera if this does not help —
        // the two-step Procrustes projection is not globally optimal).
        {
            Camera cand = procrustes_weak(landmarks2d, lm3d);
            const double r = reprojection_residual(landmarks2d, lm3d, cand);
            if (r <= residual) {
                cam = cand;
                residual = r;
            }
        }

        // Coefficient half-step: ridge LS on x_i ~ sPR (mean_i + B_i p) + t.
        {
            const Eigen::Matrix<double, 2, 3> pr = cam.scale * cam.rotation.topRows<2>();
            Eigen::MatrixXd a(2 * L, k);
            Eigen::VectorXd b(2 * L);
            for (std::size_t i = 0; i < L; ++i) {
                a.middleRows(2 * Eigen::Index(i), 2) =
                    pr * basis_lm.middleRows(3 * Eigen::Index(i), 3);
                b.segment<2>(2 * Eigen::Index(i)) =
                    landmarks2d[i] - pr * mean_lm[i] - cam.translation;
            }
            Eigen::MatrixXd lhs = a.transpose() * a;
            lhs.diagonal().array() += ridge;
            const Eigen::VectorXd cand = lhs.ldlt().solve(a.transpose() * b);
            const std::vector<Eigen::Vector3d> lm_cand = landmarks3d(cand);
            const double r = reprojection_residual(landmarks2d, lm_cand, cam);
            if (r <= residual) {
                p = cand;
                lm3d = lm_cand;
                residual = r;
            }
        }

        if (res_before - residual < 1e-6) {
            ++iter;
            break;
        }
    }

    fr.shape_coeffs = p.head(ks);
    fr.expr_coeffs = p.tail(ke);
    fr.camera = cam;
    fr.residual = residual;
    fr.iterations = iter;
    return fr;
}

void raster_triangle(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1,
                     const Eigen::Vector2d& p2, int width, int height,
                     const RasterFn& fn) {
    const double area = (p1 - p0).x() * (p2 - p0).y() - (p1 - p0).y() * (p2 - p0).x();
    if (std::abs(area) < 1e-12) return;
    const double sign = area > 0 ? 1.0 : -1.0;
    const double min_x = std::min({p0.x(), p1.x(), p2.x()});
    const double max_x = std::max({p0.x(), p1.x(), p2.x()});
    const double min_y = std::min({p0.y(), p1.y(), p2.y()});
    const double max_y = std::max({p0.y(), p1.y(), p2.y()});
    const int x0 = std::max(0, int(std::floor(min_x - 0.5)));
    const int x1 = std::min(width - 1, int(std::ceil(max_x - 0.5)));
    const int y0 = std::max(0, int(std::floor(min_y - 0.5)));
    const int y1 = std::min(height - 1, int(std::ceil(max_y - 0.5)));
    auto edge = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v, double px,
                   double py) {
        return (v.x() - u.x()) * (py - u.y()) - (v.y() - u.y()) * (px - u.x());
    };
    for (int y = y0; y <= y1; ++y) {
        const double cy = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
            const double cx = x + 0.5;
            const double e0 = edge(p1, p2, cx, cy) * sign;
            const double e1 = edge(p2, p0, cx, cy) * sign;
            const double e2 = edge(p0, p1, cx, cy) * sign;
            if (e0 < 0 || e1 < 0 || e2 < 0) continue;
            const double inv = 1.0 / std::abs(area);
            fn(x, y, e0 * inv, e1 * inv, e2 * inv);
        }
    }
}

namespace {

struct ProjectedMesh {
    std::vector<Eigen::Vector3d> cam_pos; // rotated model space
    std::vector<Eigen::Vector2d> screen;
    std::vector<bool> front; // per face, camera-space normal toward viewer
    double depth_range = 0;
};

ProjectedMesh project_mesh(const Mesh& mesh, const Camera& cam) {
    require(mesh.vertices.size() == mesh.uvs.size(),
            "mesh: needs one UV per vertex");
    ProjectedMesh pm;
    pm.cam_pos.resize(mesh.vertices.size());
    pm.screen.resize(mesh.vertices.size());
    double zmin = std::numeric_limits<double>::infinity(), zmax = -zmin;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        pm.cam_pos[i] = cam.rotation * mesh.vertices[i];
        pm.screen[i] = cam.scale * pm.cam_pos[i].head<2>() + cam.translation;
        zmin = std::min(zmin, pm.cam_pos[i].z());
        zmax = std::max(zmax, pm.cam_pos[i].z());
    }
    pm.depth_range = zmax - zmin;
    pm.front.resize(mesh.faces.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& face = mesh.faces[f];
        const Eigen::Vector3d n =
            (pm.cam_pos[std::size_t(face[1])] - pm.cam_pos[std::size_t(face[0])])
                .cross(pm.cam_pos[std::size_t(face[2])] - pm.cam_pos[std::size_t(face[0])]);
        pm.front[f] = n.z() > 0;
    }
    return pm;
}

// Depth-only pass shared by render (as part of shading) and unwrap
// (visibility reference).
std::vector<double> depth_buffer(const Mesh& mesh, const ProjectedMesh& pm, int w,
                                 int h) {
    std::vector<double> zbuf(std::size_t(w) * std::size_t(h),
                             -std::numeric_limits<double>::infinity());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (!pm.front[f]) continue;
        const auto& face = mesh.faces[f];
        const double z0 = pm.cam_pos[std::size_t(face[0])].z();
        const double z1 = pm.cam_pos[std::size_t(face[1])].z();
        const double z2 = pm.cam_pos[std::size_t(face[2])].z();
        raster_triangle(pm.screen[std::size_t(face[0])], pm.screen[std::size_t(face[1])],
                        pm.screen[std::size_t(face[2])], w, h,
                        [&](int x, int y, double b0, double b1, double b2) {
                            const double z = b0 * z0 + b1 * z1 + b2 * z2;
                            double& zb = zbuf[std::size_t(y) * w + std::size_t(x)];
                            if (z > zb) zb = z;
                        });
    }
    return zbuf;
}

} // namespace

Image render_mesh(const Mesh& mesh, const Camera& cam, const ReflectanceQuad& quad,
                  const RenderParams& rp) {
    quad.validate();
    const int w = rp.width, h = rp.height;
    require(w > 0 && h > 0, "render: bad target size");
    const ProjectedMesh pm = project_mesh(mesh, cam);
    Image img = Image::create(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = rp.background[std::size_t(c)];

    std::vector<double> zbuf(std::size_t(w) * std::size_t(h),
                             -std::numeric_limits<double>::infinity());
    const double r = double(quad.resolution());
    const Eigen::Vector3d l = rp.shade.light.normalized();
    const Eigen::Vector3d view = rp.shade.view.normalized();
    const Eigen::Vector3d half = (l + view).normalized();
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (!pm.front[f]) continue;
        const auto& face = mesh.faces[f];
        const Eigen::Vector3d zvec(pm.cam_pos[std::size_t(face[0])].z(),
                                   pm.cam_pos[std::size_t(face[1])].z(),
                                   pm.cam_pos[std::size_t(face[2])].z());
        const Eigen::Vector2d uv0 = mesh.uvs[std::size_t(face[0])];
        const Eigen::Vector2d uv1 = mesh.uvs[std::size_t(face[1])];
        const Eigen::Vector2d uv2 = mesh.uvs[std::size_t(face[2])];
        raster_triangle(
            pm.screen[std::size_t(face[0])], pm.screen[std::size_t(face[1])],
            pm.screen[std::size_t(face[2])], w, h,
            [&](int x, int y, double b0, double b1, double b2) {
                const double z = b0 * zvec[0] + b1 * zvec[1] + b2 * zvec[2];
                double& zb = zbuf[std::size_t(y) * w + std::size_t(x)];
                if (z <= zb) return;
                zb = z;
                const Eigen::Vector2d uv = b0 * uv0 + b1 * uv1 + b2 * uv2;
                const double tx = uv.x() * r, ty = uv.y() * r;
                Eigen::Vector3d albedo(bilinear_map(quad.diffuse, tx, ty, 0),
                                       bilinear_map(quad.diffuse, tx, ty, 1),
                                       bilinear_map(quad.diffuse, tx, ty, 2));
                const double spec_albedo = bilinear_map(quad.specular, tx, ty, 0);
                Eigen::Vector3d n(bilinear_map(quad.normal, tx, ty, 0),
                                  bilinear_map(quad.normal, tx, ty, 1),
                                  bilinear_map(quad.normal, tx, ty, 2));
                const double len = n.norm();
                n = len < 1e-9 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(n / len);
                const Eigen::Vector3d n_cam = cam.rotation * n;
                const Eigen::Vector3d col =
                    shade_point(albedo, spec_albedo, n_cam, l, half, rp.shade);
                img.at(x, y, 0) = float(col.x());
                img.at(x, y, 1) = float(col.y());
                img.at(x, y, 2) = float(col.z());
            });
    }
    return img;
}

Observation unwrap(const Image& image, const Mesh& mesh, const Camera& cam,
                   int resolution) {
    require(resolution >= 4, "unwrap: resolution too small");
    require(image.channels >= 3, "unwrap: need an RGB image");
    const ProjectedMesh pm = project_mesh(mesh, cam);
    const std::vector<double> zbuf = depth_buffer(mesh, pm, image.width, image.height);
    const double eps = 2e-3 * pm.depth_range + 1e-9;

    const int r = resolution;
    const std::size_t plane = std::size_t(r) * std::size_t(r);
    std::vector<float> rgb(3 * plane, 0.0f);
    std::vector<unsigned char> mask(plane, 0);

    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        if (!pm.front[f]) continue; // back side can never be photographed
        const auto& face = mesh.faces[f];
        const Eigen::Vector3d p0 = pm.cam_pos[std::size_t(face[0])];
        const Eigen::Vector3d p1 = pm.cam_pos[std::size_t(face[1])];
        const Eigen::Vector3d p2 = pm.cam_pos[std::size_t(face[2])];
        const Eigen::Vector2d t0 = mesh.uvs[std::size_t(face[0])] * double(r);
        const Eigen::Vector2d t1 = mesh.uvs[std::size_t(face[1])] * double(r);
        const Eigen::Vector2d t2 = mesh.uvs[std::size_t(face[2])] * double(r);
        raster_triangle(t0, t1, t2, r, r, [&](int tx, int ty, double b0, double b1,
                                              double b2) {
            const Eigen::Vector3d pc = b0 * p0 + b1 * p1 + b2 * p2;
            const Eigen::Vector2d sp = cam.scale * pc.head<2>() + cam.translation;
            if (!image.in_bounds(sp.x(), sp.y())) return;
            // Visibility: the texel's depth must reach the most lenient
            // (minimum) z-buffer value among valid 3x3 neighbours; the
            // neighbourhood absorbs rasterization differences between image
            // and UV grids, and the subsequent erosion trims the slack.
            const int ix = std::clamp(int(sp.x()), 0, image.width - 1);
            const int iy = std::clamp(int(sp.y()), 0, image.height - 1);
            double zref = std::numeric_limits<double>::infinity();
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = ix + dx, ny = iy + dy;
                    if (nx < 0 || ny < 0 || nx >= image.width || ny >= image.height)
                        continue;
                    const double zb = zbuf[std::size_t(ny) * image.width + std::size_t(nx)];
                    if (zb != neg_inf) zref = std::min(zref, zb);
                }
            if (!std::isfinite(zref) || pc.z() < zref - eps) return;
            const std::size_t ti = std::size_t(ty) * std::size_t(r) + std::size_t(tx);
            for (int c = 0; c < 3; ++c)
                rgb[std::size_t(c) * plane + ti] =
                    float(sample_bilinear(image, sp.x(), sp.y(), c));
            mask[ti] = 1;
        });
    }

    // One-texel 4-neighbourhood erosion; border texels are always dropped.
    std::vector<unsigned char> eroded(plane, 0);
    for (int y = 1; y + 1 < r; ++y)
        for (int x = 1; x + 1 < r; ++x) {
            const std::size_t i = std::size_t(y) * std::size_t(r) + std::size_t(x);
            eroded[i] = mask[i] && mask[i - 1] && mask[i + 1] &&
                        mask[i - std::size_t(r)] && mask[i + std::size_t(r)];
        }

    Observation obs;
    obs.known = Tensor(Shape{10, std::size_t(r), std::size_t(r)});
    obs.mask = Tensor(Shape{std::size_t(r), std::size_t(r)});
    float* kp = obs.known.mutable_data();
    float* mp = obs.mask.mutable_data();
    std::size_t visible = 0;
    for (std::size_t i = 0; i < plane; ++i) {
        if (eroded[i]) {
            mp[i] = 1.0f;
            ++visible;
            for (std::size_t c = 0; c < 3; ++c)
                kp[c * plane + i] = 2.0f * rgb[c * plane + i] - 1.0f;
        }
    }
    if (visible == 0)
        std::fprintf(stderr, "unwrap: warning: empty projection, all-zero mask\n");
    return obs;
}

ReconstructResult reconstruct(const Image& image,
                              const std::vector<Eigen::Vector2d>& landmarks2d,
                              const MorphableModel& mm, const ModelFn<float>& model,
                              const NoiseSchedule& s, const ReconstructConfig& cfg) {
    ReconstructResult out;
    out.fit = fit_morphable(landmarks2d, mm, cfg.ridge);
    out.mesh = instantiate(mm, out.fit.shape_coeffs, out.fit.expr_coeffs);
    out.observation = unwrap(image, out.mesh, out.fit.camera, cfg.resolution);
    out.inpaint = run_inpaint(model, out.observation, s, cfg.inpaint);
    return out;
}

void write_obj(const std::string& path, const Mesh& mesh) {
    require(mesh.vertices.size() == mesh.uvs.size(), "write_obj: needs per-vertex UVs");
    std::ofstream os(path);
    if (!os) fail_state("write_obj: cannot open " + path);
    os << "# uvdiff mesh\n";
    char line[128];
    for (const auto& v : mesh.vertices) {
        std::snprintf(line, sizeof line, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
        os << line;
    }
    // OBJ vt convention is v-up; internal UVs are v-down (image rows).
    for (const auto& uv : mesh.uvs) {
        std::snprintf(line, sizeof line, "vt %.9g %.9g\n", uv.x(), 1.0 - uv.y());
        os << line;
    }
    for (const auto& f : mesh.faces)
        os << "f " << f[0] + 1 << "/" << f[0] + 1 << " " << f[1] + 1 << "/" << f[1] + 1
           << " " << f[2] + 1 << "/" << f[2] + 1 << "\n";
    if (!os) fail_state("write_obj: write failed");
}

Mesh read_obj(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail_state("read_obj: cannot open " + path);
    Mesh mesh;
    std::vector<Eigen::Vector2d> vts;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Eigen::Vector3d v;
            ls >> v.x() >> v.y() >> v.z();
            mesh.vertices.push_back(v);
        } else if (tag == "vt") {
            Eigen::Vector2d t;
            ls >> t.x() >> t.y();
            vts.emplace_back(t.x(), 1.0 - t.y());
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int i = 0; i < 3; ++i) {
                std::string tok;
                ls >> tok;
                f[std::size_t(i)] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            mesh.faces.push_back(f);
        }
    }
    require(!mesh.vertices.empty() && !mesh.faces.empty(), "read_obj: no geometry");
    require(vts.size() == mesh.vertices.size(),
            "read_obj: expected one vt per vertex");
    mesh.uvs = std::move(vts);
    return mesh;
}

} // namespace uvdiff
