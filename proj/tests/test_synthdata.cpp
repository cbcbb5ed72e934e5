#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "uvdiff/synthdata.hpp"

using namespace uvdiff;

namespace {

ReflectanceQuad flat_quad(int r, float dr, float dg, float db, float spec) {
    ReflectanceQuad q;
    q.diffuse = Tensor(Shape{3, std::size_t(r), std::size_t(r)});
    q.specular = Tensor(Shape{1, std::size_t(r), std::size_t(r)});
    q.normal = Tensor(Shape{3, std::size_t(r), std::size_t(r)});
    const std::size_t plane = std::size_t(r) * std::size_t(r);
    float* d = q.diffuse.mutable_data();
    for (std::size_t i = 0; i < plane; ++i) {
        d[i] = dr;
        d[plane + i] = dg;
        d[2 * plane + i] = db;
    }
    float* s = q.specular.mutable_data();
    std::fill(s, s + plane, spec);
    float* n = q.normal.mutable_data();
    for (std::size_t i = 0; i < plane; ++i) n[2 * plane + i] = 1.0f; // +z
    q.texture = shade_uv(q, ShadeParams{});
    return q;
}

} // namespace

TEST_CASE("shade_point oracles") {
    const ShadeParams p; // ambient .25, diffuse .75, specular .6, shininess 16
    const Eigen::Vector3d n(0, 0, 1), l(0, 0, 1), h(0, 0, 1);

    // Head-on: full diffuse plus full specular, clamped to 1.
    const Eigen::Vector3d c = shade_point({0.5, 0.25, 0.1}, 0.5, n, l, h, p);
    CHECK(c.x() == doctest::Approx(0.5 * (0.25 + 0.75) + 0.6 * 0.5).epsilon(1e-12));
    CHECK(c.y() == doctest::Approx(0.25 + 0.3).epsilon(1e-12));
    CHECK(c.z() == doctest::Approx(0.1 + 0.3).epsilon(1e-12));

    // Light behind the surface: ambient term only, no negative dot products.
    const Eigen::Vector3d c2 =
        shade_point({0.8, 0.8, 0.8}, 1.0, n, {0, 0, -1}, {1, 0, 0}, p);
    CHECK(c2.x() == doctest::Approx(0.8 * 0.25).epsilon(1e-12));

    // Oblique light: n.l = cos(60 deg) = 0.5.
    const Eigen::Vector3d l3 = Eigen::Vector3d(std::sqrt(3.0) / 2.0, 0, 0.5);
    const Eigen::Vector3d c3 = shade_point({1, 1, 1}, 0.0, n, l3, h, p);
    CHECK(c3.x() == doctest::Approx(0.25 + 0.75 * 0.5).epsilon(1e-12));

    // Saturation clamps at 1.
    const Eigen::Vector3d c4 = shade_point({1, 1, 1}, 1.0, n, l, h, p);
    CHECK(c4.x() == 1.0);
}

TEST_CASE("shade_uv agrees with shade_point texel by texel") {
    const ReflectanceQuad q = make_quad(5, 0, 16).quad;
    ShadeParams p;
    p.light = {0.2, -0.4, 1.0};
    const Tensor tex = shade_uv(q, p);
    REQUIRE(tex.shape() == Shape{3, 16, 16});

    const Eigen::Vector3d l = p.light.normalized();
    const Eigen::Vector3d v = p.view.normalized();
    const Eigen::Vector3d h = (l + v).normalized();
    const std::size_t plane = 16 * 16;
    for (std::size_t i : {std::size_t(0), std::size_t(77), std::size_t(255)}) {
        const Eigen::Vector3d albedo(q.diffuse.data()[i], q.diffuse.data()[plane + i],
                                     q.diffuse.data()[2 * plane + i]);
        const Eigen::Vector3d n(q.normal.data()[i], q.normal.data()[plane + i],
                                q.normal.data()[2 * plane + i]);
        const Eigen::Vector3d want = shade_point(albedo, q.specular.data()[i], n, l, h, p);
        CHECK(tex.data()[i] == doctest::Approx(want.x()).epsilon(1e-6));
        CHECK(tex.data()[plane + i] == doctest::Approx(want.y()).epsilon(1e-6));
        CHECK(tex.data()[2 * plane + i] == doctest::Approx(want.z()).epsilon(1e-6));
    }
}

TEST_CASE("stack encoding and roundtrip") {
    const ReflectanceQuad q = flat_quad(8, 0.25f, 0.5f, 0.75f, 0.4f);
    const Tensor st = stack_quad(q);
    REQUIRE(st.shape() == Shape{10, 8, 8});
    const std::size_t plane = 64;
    // Channels: texture*2-1, diffuse*2-1, specular*2-1, raw normal.
    CHECK(st.data()[3 * plane] == doctest::Approx(2.0f * 0.25f - 1.0f));
    CHECK(st.data()[4 * plane] == doctest::Approx(0.0f));
    CHECK(st.data()[5 * plane] == doctest::Approx(0.5f));
    CHECK(st.data()[6 * plane] == doctest::Approx(2.0f * 0.4f - 1.0f));
    CHECK(st.data()[7 * plane] == 0.0f);
    CHECK(st.data()[9 * plane] == 1.0f);

    const ReflectanceQuad back = unstack_quad(st);
    CHECK(bit_equal(back.texture, q.texture));
    CHECK(bit_equal(back.diffuse, q.diffuse));
    CHECK(bit_equal(back.specular, q.specular));
    CHECK(bit_equal(back.normal, q.normal));
}

TEST_CASE("unstack sanitizes out-of-range values") {
    Tensor st(Shape{10, 8, 8});
    float* p = st.mutable_data();
    const std::size_t plane = 64;
    for (std::size_t i = 0; i < plane; ++i) {
        p[3 * plane + i] = 3.0f;  // diffuse overflow -> clamps to 1
        p[6 * plane + i] = -2.0f; // specular underflow -> clamps to 0
        // normal channels left at zero -> falls back to +z
    }
    const ReflectanceQuad q = unstack_quad(st);
    q.validate();
    CHECK(q.diffuse.data()[0] == 1.0f);
    CHECK(q.specular.data()[0] == 0.0f);
    CHECK(q.normal.data()[2 * plane] == 1.0f);

    // Non-unit normals are renormalized.
    for (std::size_t i = 0; i < plane; ++i) {
        p[7 * plane + i] = 3.0f;
        p[8 * plane + i] = 0.0f;
        p[9 * plane + i] = 4.0f;
    }
    const ReflectanceQuad q2 = unstack_quad(st);
    CHECK(q2.normal.data()[0] == doctest::Approx(0.6f).epsilon(1e-6));
    CHECK(q2.normal.data()[2 * plane] == doctest::Approx(0.8f).epsilon(1e-6));
}

TEST_CASE("validate rejects malformed quads") {
    ReflectanceQuad q = flat_quad(8, 0.5f, 0.5f, 0.5f, 0.5f);
    CHECK_NOTHROW(q.validate());

    ReflectanceQuad bad = q;
    bad.specular = Tensor(Shape{1, 4, 4});
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = q;
    bad.diffuse.mutable_data()[0] = 1.5f;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = q;
    bad.normal.mutable_data()[0] = 0.5f; // length no longer 1
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("make_quad determinism and plausibility") {
    const QuadSample a = make_quad(1000, 5, 32);
    const QuadSample b = make_quad(1000, 5, 32);
    CHECK(bit_equal(stack_quad(a.quad), stack_quad(b.quad)));

    const QuadSample c = make_quad(1000, 6, 32);
    CHECK_FALSE(bit_equal(stack_quad(a.quad), stack_quad(c.quad)));
    const QuadSample d = make_quad(1001, 5, 32);
    CHECK_FALSE(bit_equal(stack_quad(a.quad), stack_quad(d.quad)));

    a.quad.validate();
    CHECK(a.quad.resolution() == 32);

    // Maps should actually vary across texels (not constant fields).
    const Tensor& diff = a.quad.diffuse;
    const auto [mn, mx] =
        std::minmax_element(diff.data(), diff.data() + diff.size());
    CHECK(*mx - *mn > 0.05f);

    // Normals lean toward +z on average (bumped height field, not wild).
    const std::size_t plane = 32 * 32;
    double zsum = 0;
    for (std::size_t i = 0; i < plane; ++i)
        zsum += a.quad.normal.data()[2 * plane + i];
    CHECK(zsum / double(plane) > 0.5);
}

TEST_CASE("histogram_match transfers the value distribution") {
    Rng rng(8, 9, 0);
    Tensor a(Shape{1, 8, 8});
    Tensor ref(Shape{1, 8, 8});
    rng.fill_uniform(a.mutable_data(), a.size());
    float* rp = ref.mutable_data();
    for (std::size_t i = 0; i < ref.size(); ++i) rp[i] = 0.25f + 0.005f * float(i);

    const Tensor out = histogram_match(a, ref);
    // Multisets of values match exactly after the rank remap.
    std::vector<float> ov(out.data(), out.data() + out.size());
    std::vector<float> rv(ref.data(), ref.data() + ref.size());
    std::sort(ov.begin(), ov.end());
    std::sort(rv.begin(), rv.end());
    CHECK(ov == rv);

    // Rank order of the input is preserved.
    std::vector<std::size_t> order_a(a.size()), order_o(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) order_a[i] = order_o[i] = i;
    std::stable_sort(order_a.begin(), order_a.end(),
                     [&](std::size_t i, std::size_t j) { return a.data()[i] < a.data()[j]; });
    std::stable_sort(order_o.begin(), order_o.end(),
                     [&](std::size_t i, std::size_t j) {
                         return out.data()[i] < out.data()[j];
                     });
    CHECK(order_a == order_o);
}

TEST_CASE("make_dataset stacks held-out-aware quads deterministically") {
    const Tensor ds = make_dataset(1000, 4, 16, kHeldOutIndexOffset);
    REQUIRE(ds.shape() == Shape{4, 10, 16, 16});
    CHECK(bit_equal(ds, make_dataset(1000, 4, 16, kHeldOutIndexOffset)));

    // Item i is exactly the stacked quad at index offset + i.
    const Tensor item2 = stack_quad(make_quad(1000, kHeldOutIndexOffset + 2, 16).quad);
    const std::size_t one = 10 * 16 * 16;
    Tensor got(Shape{10, 16, 16});
    std::copy_n(ds.data() + 2 * one, one, got.mutable_data());
    CHECK(bit_equal(got, item2));

    // Train and held-out ranges do not overlap.
    const Tensor train = make_dataset(1000, 4, 16, 0);
    Tensor t0(Shape{10, 16, 16}), h0(Shape{10, 16, 16});
    std::copy_n(train.data(), one, t0.mutable_data());
    std::copy_n(ds.data(), one, h0.mutable_data());
    CHECK_FALSE(bit_equal(t0, h0));
}
