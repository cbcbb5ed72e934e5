#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "uvdiff/ndt_io.hpp"
#include "uvdiff/synthdata.hpp"

using namespace uvdiff;

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a(nullptr, 0) == 0xcbf29ce484222325ull);
    CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ull);

    const Tensor t = Tensor::from_data(Shape{4}, {1.0f, 2.0f, -3.5f, 0.0f});
    CHECK(tensor_hash(t) == 0x20c3d076b7b89af8ull);

    // Chaining: hash(ab) == hash(b, seed = hash(a)).
    const std::uint64_t ha = fnv1a("fo", 2);
    CHECK(fnv1a("obar", 4, ha) == 0x85944171f73967e8ull);
}

TEST_CASE("ndt stream roundtrip preserves bits") {
    Rng rng(1, 9, 0);
    const Tensor f32 = Tensor::randn(Shape{2, 3, 4}, rng);
    const Tensor64 f64 = Tensor64::randn(Shape{5}, rng);

    std::stringstream ss;
    write_ndt(ss, f32);
    write_ndt(ss, f64);
    const Tensor back32 = read_ndt<float>(ss);
    const Tensor64 back64 = read_ndt<double>(ss);
    CHECK(back32.shape() == f32.shape());
    CHECK(bit_equal(back32, f32));
    CHECK(bit_equal(back64, f64));
}

TEST_CASE("ndt rejects wrong dtype, magic and truncation") {
    Rng rng(2, 9, 0);
    const Tensor t = Tensor::randn(Shape{3, 3}, rng);

    std::stringstream ss;
    write_ndt(ss, t);
    CHECK_THROWS_AS((void)read_ndt<double>(ss), std::runtime_error);

    std::stringstream bad("XXXXjunkjunkjunk");
    CHECK_THROWS_AS((void)read_ndt<float>(bad), std::runtime_error);

    std::stringstream full;
    write_ndt(full, t);
    const std::string bytes = full.str();
    std::stringstream cut(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS((void)read_ndt<float>(cut), std::runtime_error);
}

TEST_CASE("ndt file helpers") {
    const std::string path = "test_io_tensor.ndt";
    Rng rng(3, 9, 0);
    const Tensor t = Tensor::randn(Shape{7}, rng);
    write_ndt_file(path, t);
    CHECK(bit_equal(read_ndt_file<float>(path), t));
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)read_ndt_file<float>("does_not_exist.ndt"),
                    std::runtime_error);
}

TEST_CASE("checkpoint roundtrip keeps order, names and meta") {
    const std::string path = "test_io_ckpt.bin";
    Rng rng(4, 9, 0);
    Checkpoint ck;
    ck.meta["alpha"] = "1";
    ck.meta["name with space"] = "value=with=equals";
    ck.tensors.emplace_back("z_first", Tensor::randn(Shape{2, 2}, rng));
    ck.tensors.emplace_back("a_second", Tensor::randn(Shape{3}, rng));

    write_checkpoint(path, ck);
    const Checkpoint back = read_checkpoint(path);
    CHECK(back.meta == ck.meta);
    REQUIRE(back.tensors.size() == 2);
    CHECK(back.tensors[0].first == "z_first"); // insertion order, not sorted
    CHECK(back.tensors[1].first == "a_second");
    CHECK(bit_equal(back.tensors[0].second, ck.tensors[0].second));
    CHECK(bit_equal(back.tensors[1].second, ck.tensors[1].second));
    std::remove(path.c_str());
}

TEST_CASE("dataset roundtrip") {
    const std::string path = "test_io_dataset.uvds";
    const Tensor data = make_dataset(11, 3, 16);
    REQUIRE(data.shape() == Shape{3, 10, 16, 16});

    DatasetHeader h;
    h.count = 3;
    h.resolution = 16;
    h.split = "heldout";
    h.seed = 11;
    write_dataset(path, h, data);

    auto [h2, data2] = read_dataset(path);
    CHECK(h2.count == 3);
    CHECK(h2.resolution == 16);
    CHECK(h2.split == "heldout");
    CHECK(h2.generator == h.generator);
    CHECK(h2.seed == 11);
    CHECK(bit_equal(data2, data));
    std::remove(path.c_str());
}
