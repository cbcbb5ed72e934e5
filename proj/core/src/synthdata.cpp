#include "uvdiff/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "uvdiff/ndt_io.hpp"

namespace uvdiff {

namespace {

void require_map(const Tensor& t, std::size_t channels, const char* name) {
    require(t.rank() == 3 && t.extent(0) == channels && t.extent(1) == t.extent(2),
            std::string(name) + ": expected [" + std::to_string(channels) +
                ",R,R], got " + shape_str(t.shape()));
}

// Multi-octave value noise in [0,1]: random lattice values, bilinear
// interpolation, octave amplitudes 1, 1/2, 1/4, ...
void fill_value_noise(float* out, int r, Rng& rng, int base_cells, int octaves) {
    std::vector<double> acc(std::size_t(r) * std::size_t(r), 0.0);
    double amp = 1.0, amp_sum = 0.0;
    for (int o = 0; o < octaves; ++o) {
        const int n = base_cells << o;
        std::vector<double> lattice(std::size_t(n + 1) * std::size_t(n + 1));
        for (double& v : lattice) v = rng.uniform();
        for (int y = 0; y < r; ++y) {
            const double fy = (y + 0.5) / r * n;
            const int y0 = std::min(n - 1, int(fy));
            const double wy = fy - y0;
            for (int x = 0; x < r; ++x) {
                const double fx = (x + 0.5) / r * n;
                const int x0 = std::min(n - 1, int(fx));
                const double wx = fx - x0;
                const double v00 = lattice[std::size_t(y0) * (n + 1) + x0];
                const double v01 = lattice[std::size_t(y0) * (n + 1) + x0 + 1];
                const double v10 = lattice[std::size_t(y0 + 1) * (n + 1) + x0];
                const double v11 = lattice[std::size_t(y0 + 1) * (n + 1) + x0 + 1];
                const double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                                 wy * ((1 - wx) * v10 + wx * v11);
                acc[std::size_t(y) * r + x] += amp * v;
            }
        }
        amp_sum += amp;
        amp *= 0.5;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = float(acc[i] / amp_sum);
}

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

} // namespace

void ReflectanceQuad::validate() const {
    const std::size_t r = texture.defined() ? texture.extent(1) : 0;
    require(r > 0, "quad: undefined texture");
    require_map(texture, 3, "quad.texture");
    require_map(diffuse, 3, "quad.diffuse");
    require_map(specular, 1, "quad.specular");
    require_map(normal, 3, "quad.normal");
    require(diffuse.extent(1) == r && specular.extent(1) == r && normal.extent(1) == r,
            "quad: maps disagree on resolution");
    auto in01 = [](const Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i)
            if (!(t[i] >= 0.0f && t[i] <= 1.0f)) return false;
        return true;
    };
    require(in01(texture), "quad.texture: values outside [0,1]");
    require(in01(diffuse), "quad.diffuse: values outside [0,1]");
    require(in01(specular), "quad.specular: values outside [0,1]");
    const std::size_t plane = r * r;
    const float* n = normal.data();
    for (std::size_t i = 0; i < plane; ++i) {
        const double len = std::sqrt(double(n[i]) * n[i] +
                                     double(n[plane + i]) * n[plane + i] +
                                     double(n[2 * plane + i]) * n[2 * plane + i]);
        require(std::abs(len - 1.0) < 1e-4, "quad.normal: non-unit normal");
    }
}

Tensor stack_quad(const ReflectanceQuad& q) {
    q.validate();
    const std::size_t r = q.resolution();
    const std::size_t plane = r * r;
    Tensor out(Shape{10, r, r});
    float* o = out.mutable_data();
    auto put_scaled = [&](const Tensor& src, std::size_t dst_c, std::size_t nch) {
        const float* s = src.data();
        for (std::size_t c = 0; c < nch; ++c)
            for (std::size_t i = 0; i < plane; ++i)
                o[(dst_c + c) * plane + i] = 2.0f * s[c * plane + i] - 1.0f;
    };
    put_scaled(q.texture, 0, 3);
    put_scaled(q.diffuse, 3, 3);
    put_scaled(q.specular, 6, 1);
    std::memcpy(o + 7 * plane, q.normal.data(), 3 * plane * sizeof(float));
    return out;
}

ReflectanceQuad unstack_quad(const Tensor& stacked) {
    require(stacked.rank() == 3 && stacked.extent(0) == 10 &&
                stacked.extent(1) == stacked.extent(2),
            "unstack_quad: expected [10,R,R], got " + shape_str(stacked.shape()));
    const std::size_t r = stacked.extent(1);
    const std::size_t plane = r * r;
    const float* s = stacked.data();
    ReflectanceQuad q;
    q.texture = Tensor(Shape{3, r, r});
    q.diffuse = Tensor(Shape{3, r, r});
    q.specular = Tensor(Shape{1, r, r});
    q.normal = Tensor(Shape{3, r, r});
    auto take_scaled = [&](Tensor& dst, std::size_t src_c, std::size_t nch) {
        float* d = dst.mutable_data();
        for (std::size_t c = 0; c < nch; ++c)
            for (std::size_t i = 0; i < plane; ++i)
                d[c * plane + i] =
                    std::clamp(0.5f * (s[(src_c + c) * plane + i] + 1.0f), 0.0f, 1.0f);
    };
    take_scaled(q.texture, 0, 3);
    take_scaled(q.diffuse, 3, 3);
    take_scaled(q.specular, 6, 1);
    float* n = q.normal.mutable_data();
    for (std::size_t i = 0; i < plane; ++i) {
        const double nx = s[7 * plane + i], ny = s[8 * plane + i], nz = s[9 * plane + i];
        const double len = std::sqrt(nx * nx + ny * ny + nz * nz);
        if (len < 1e-6) {
            n[i] = 0.0f;
            n[plane + i] = 0.0f;
            n[2 * plane + i] = 1.0f;
        } else {
            n[i] = float(nx / len);
            n[plane + i] = float(ny / len);
            n[2 * plane + i] = float(nz / len);
        }
    }
    return q;
}

Tensor shade_uv(const ReflectanceQuad& q, const ShadeParams& p) {
    require_map(q.diffuse, 3, "shade_uv: diffuse");
    require_map(q.specular, 1, "shade_uv: specular");
    require_map(q.normal, 3, "shade_uv: normal");
    const std::size_t r = q.diffuse.extent(1);
    const std::size_t plane = r * r;
    const Eigen::Vector3d l = p.light.normalized();
    const Eigen::Vector3d v = p.view.normalized();
    const Eigen::Vector3d h = (l + v).normalized();
    Tensor out(Shape{3, r, r});
    float* o = out.mutable_data();
    const float* ad = q.diffuse.data();
    const float* as = q.specular.data();
    const float* nm = q.normal.data();
    for (std::size_t i = 0; i < plane; ++i) {
        Eigen::Vector3d n(nm[i], nm[plane + i], nm[2 * plane + i]);
        const double len = n.norm();
        n = len < 1e-9 ? Eigen::Vector3d(0, 0, 1) : Eigen::Vector3d(n / len);
        const Eigen::Vector3d albedo(ad[i], ad[plane + i], ad[2 * plane + i]);
        const Eigen::Vector3d c = shade_point(albedo, double(as[i]), n, l, h, p);
        o[i] = float(c.x());
        o[plane + i] = float(c.y());
        o[2 * plane + i] = float(c.z());
    }
    return out;
}

Tensor histogram_match(const Tensor& a, const Tensor& ref) {
    require(a.rank() >= 1 && ref.rank() >= 1 && a.extent(0) == ref.extent(0),
            "histogram_match: channel counts differ");
    const std::size_t c = a.extent(0);
    const std::size_t na = a.size() / c, nr = ref.size() / c;
    require(na > 0 && nr > 0, "histogram_match: empty input");
    Tensor out(a.shape());
    float* o = out.mutable_data();
    const float *pa = a.data(), *pr = ref.data();
    std::vector<std::size_t> order(na);
    std::vector<float> ref_sorted(nr);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const float* ac = pa + ch * na;
        std::copy(pr + ch * nr, pr + (ch + 1) * nr, ref_sorted.begin());
        std::sort(ref_sorted.begin(), ref_sorted.end());
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t i, std::size_t j) { return ac[i] < ac[j]; });
        for (std::size_t rank = 0; rank < na; ++rank) {
            const std::size_t q =
                na == 1 ? (nr - 1) / 2
                        : std::size_t(std::llround(double(rank) * double(nr - 1) /
                                                   double(na - 1)));
            o[ch * na + order[rank]] = ref_sorted[q];
        }
    }
    return out;
}

QuadSample make_quad(std::uint64_t seed, std::uint32_t index, int resolution) {
    require(resolution >= 4, "make_quad: resolution too small");
    const int r = resolution;
    const std::size_t plane = std::size_t(r) * std::size_t(r);
    Rng rng = make_stream(seed, StreamDomain::data, index);

    ReflectanceQuad q;
    q.diffuse = Tensor(Shape{3, std::size_t(r), std::size_t(r)});
    q.specular = Tensor(Shape{1, std::size_t(r), std::size_t(r)});
    q.normal = Tensor(Shape{3, std::size_t(r), std::size_t(r)});

    // Diffuse albedo: blend two random colors by a noise field, then stamp a
    // few soft elliptical blotches of a third color.
    float* ad = q.diffuse.mutable_data();
    {
        double c0[3], c1[3];
        for (int k = 0; k < 3; ++k) c0[k] = 0.15 + 0.7 * rng.uniform();
        for (int k = 0; k < 3; ++k) c1[k] = 0.15 + 0.7 * rng.uniform();
        std::vector<float> field(plane);
        fill_value_noise(field.data(), r, rng, 4, 3);
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t c = 0; c < 3; ++c)
                ad[c * plane + i] = float(c0[c] + (c1[c] - c0[c]) * double(field[i]));
        const int blotches = rng.uniform_int(2, 6);
        for (int bl = 0; bl < blotches; ++bl) {
            const double cu = rng.uniform(), cv = rng.uniform();
            const double ru = 0.08 + 0.22 * rng.uniform();
            const double rv = 0.08 + 0.22 * rng.uniform();
            const double ang = rng.uniform() * 6.283185307179586;
            const double ca = std::cos(ang), sa = std::sin(ang);
            double col[3];
            for (int k = 0; k < 3; ++k) col[k] = 0.1 + 0.8 * rng.uniform();
            for (int y = 0; y < r; ++y)
                for (int x = 0; x < r; ++x) {
                    const double du = (x + 0.5) / r - cu, dv = (y + 0.5) / r - cv;
                    const double eu = (ca * du + sa * dv) / ru;
                    const double ev = (-sa * du + ca * dv) / rv;
                    const double d2 = eu * eu + ev * ev;
                    const double alpha = 0.7 * smoothstep(1.0, 0.4, d2);
                    if (alpha <= 0) continue;
                    const std::size_t i = std::size_t(y) * r + x;
                    for (std::size_t c = 0; c < 3; ++c)
                        ad[c * plane + i] =
                            float((1 - alpha) * ad[c * plane + i] + alpha * col[c]);
                }
        }
    }

    // Specular albedo: one smooth noise field mapped into [0.05, 0.9].
    {
        std::vector<float> field(plane);
        fill_value_noise(field.data(), r, rng, 4, 2);
        float* as = q.specular.mutable_data();
        for (std::size_t i = 0; i < plane; ++i)
            as[i] = float(0.05 + 0.85 * double(field[i]));
    }

    // Normals: bump-map a smooth height field (central differences, clamped
    // at the borders), mostly facing +z.
    {
        std::vector<float> height(plane);
        fill_value_noise(height.data(), r, rng, 4, 3);
        const double strength = 1.5 + 2.0 * rng.uniform();
        float* nm = q.normal.mutable_data();
        auto h_at = [&](int y, int x) {
            y = std::clamp(y, 0, r - 1);
            x = std::clamp(x, 0, r - 1);
            return double(height[std::size_t(y) * r + x]);
        };
        for (int y = 0; y < r; ++y)
            for (int x = 0; x < r; ++x) {
                const double dhdx = (h_at(y, x + 1) - h_at(y, x - 1)) * 0.5 * r / 8.0;
                const double dhdy = (h_at(y + 1, x) - h_at(y - 1, x)) * 0.5 * r / 8.0;
                Eigen::Vector3d n(-strength * dhdx, -strength * dhdy, 1.0);
                n.normalize();
                const std::size_t i = std::size_t(y) * r + x;
                nm[i] = float(n.x());
                nm[plane + i] = float(n.y());
                nm[2 * plane + i] = float(n.z());
            }
    }

    // Texture: the quad's own reflectance under a random frontal light, so
    // appearance and reflectance are physically coupled by construction.
    ShadeParams sp;
    sp.light = Eigen::Vector3d(0.8 * (rng.uniform() - 0.5), 0.8 * (rng.uniform() - 0.5), 1.0);
    q.texture = shade_uv(q, sp);
    return {std::move(q), sp};
}

Tensor make_dataset(std::uint64_t seed, std::size_t count, int resolution,
                    std::uint32_t index_offset) {
    require(count >= 1, "make_dataset: count must be >= 1");
    const std::size_t r = std::size_t(resolution);
    Tensor out(Shape{count, 10, r, r});
    float* o = out.mutable_data();
    const std::size_t item = 10 * r * r;
    for (std::size_t i = 0; i < count; ++i) {
        const Tensor stacked =
            stack_quad(make_quad(seed, index_offset + std::uint32_t(i), resolution).quad);
        std::memcpy(o + i * item, stacked.data(), item * sizeof(float));
    }
    return out;
}

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const Tensor& data) {
    require(data.rank() == 4 && data.extent(0) == header.count &&
                data.extent(1) == std::size_t(header.channels) &&
                data.extent(2) == std::size_t(header.resolution) &&
                data.extent(3) == std::size_t(header.resolution),
            "write_dataset: header/tensor mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_state("write_dataset: cannot open " + path);
    os << "UVDS1\n";
    os << "count=" << header.count << "\n";
    os << "resolution=" << header.resolution << "\n";
    os << "channels=" << header.channels << "\n";
    os << "split=" << header.split << "\n";
    os << "generator=" << header.generator << "\n";
    os << "seed=" << header.seed << "\n\n";
    write_ndt(os, data);
    if (!os) fail_state("write_dataset: stream write failed");
}

std::pair<DatasetHeader, Tensor> read_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail_state("read_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "UVDS1")
        fail_state("read_dataset: " + path + " is not a UVDS1 file");
    DatasetHeader h;
    while (std::getline(is, line) && !line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail_state("read_dataset: malformed header line '" + line + "'");
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "count") h.count = std::stoull(v);
        else if (k == "resolution") h.resolution = std::stoi(v);
        else if (k == "channels") h.channels = std::stoi(v);
        else if (k == "split") h.split = v;
        else if (k == "generator") h.generator = v;
        else if (k == "seed") h.seed = std::stoull(v);
        else fail_state("read_dataset: unknown header key '" + k + "'");
    }
    Tensor data = read_ndt<float>(is);
    require(data.rank() == 4 && data.extent(0) == h.count,
            "read_dataset: tensor does not match header");
    return {h, std::move(data)};
}

} // namespace uvdiff
