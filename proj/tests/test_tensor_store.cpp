#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mixquant/model_io.hpp"
#include "mixquant/tensor.hpp"
#include "test_util.hpp"

using namespace mixquant;

TEST_CASE("pack_nibbles: frozen examples") {
    CHECK(pack_nibbles(std::vector<std::uint8_t>{0}) == std::vector<std::uint8_t>{0x00});
    CHECK(pack_nibbles(std::vector<std::uint8_t>{3, 5}) == std::vector<std::uint8_t>{0x53});
    CHECK(pack_nibbles(std::vector<std::uint8_t>{15, 15, 1}) ==
          std::vector<std::uint8_t>{0xFF, 0x01});
}

TEST_CASE("unpack_nibbles: frozen examples") {
    CHECK(unpack_nibbles(std::vector<std::uint8_t>{0x53}, 2) ==
          std::vector<std::uint8_t>{3, 5});
    CHECK(unpack_nibbles(std::vector<std::uint8_t>{0x00}, 1) ==
          std::vector<std::uint8_t>{0});
    CHECK(unpack_nibbles(std::vector<std::uint8_t>{0xFF, 0x01}, 3) ==
          std::vector<std::uint8_t>{15, 15, 1});
}

TEST_CASE("nibble codec: errors") {
    CHECK_THROWS_AS(pack_nibbles(std::vector<std::uint8_t>{16}), DataError);
    CHECK_THROWS_AS(unpack_nibbles(std::vector<std::uint8_t>{0x00}, 3), DataError);
}

TEST_CASE("nibble codec: round trip and size properties") {
    Xoshiro256pp rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const auto len = static_cast<std::size_t>(rng.uniform_int(0, 40));
        std::vector<std::uint8_t> values(len);
        for (auto& v : values) v = static_cast<std::uint8_t>(rng.uniform_int(0, 16));
        const auto packed = pack_nibbles(values);
        CHECK(packed.size() == (len + 1) / 2);
        CHECK(unpack_nibbles(packed, static_cast<std::int64_t>(len)) == values);
    }
}

TEST_CASE("make_tensor: invariants") {
    CHECK_THROWS_AS(make_tensor({}, Dtype::F32, {}), DataError);
    CHECK_THROWS_AS(make_tensor({0}, Dtype::F32, {}), DataError);
    CHECK_THROWS_AS(make_tensor({2}, Dtype::F32, std::vector<std::uint8_t>(7)), DataError);
    // u4-packed: 3 values need 2 bytes
    CHECK_NOTHROW(make_tensor({3}, Dtype::U4Packed, std::vector<std::uint8_t>(2)));
    CHECK_THROWS_AS(make_tensor({3}, Dtype::U4Packed, std::vector<std::uint8_t>(3)),
                    DataError);
}

TEST_CASE("dtype names round trip") {
    for (Dtype d : {Dtype::F64, Dtype::F32, Dtype::I32, Dtype::I8, Dtype::U8,
                    Dtype::U4Packed}) {
        CHECK(dtype_from_name(dtype_name(d)) == d);
    }
    CHECK_THROWS_AS(dtype_from_name("q6"), DataError);
}

TEST_CASE("matrix bridge round trip") {
    Xoshiro256pp rng(3);
    const MatrixRMd m = testutil::random_matrix(4, 7, rng);
    const DenseTensor t = matrix_to_tensor<double>(m);
    CHECK(t.shape == std::vector<std::int64_t>{4, 7});
    CHECK(tensor_to_matrix<double>(t) == m);
}

namespace {

Model one_layer_model() {
    Model model;
    model.manifest.model = "tiny";
    model.manifest.metadata["note"] = "test";
    LayerSpec layer;
    layer.name = "fc0";
    layer.kind = LayerKind::Linear;
    layer.in_features = 3;
    layer.out_features = 2;
    TensorRef ref;
    ref.file = "fc0.weight.bin";
    ref.dtype = Dtype::F64;
    ref.shape = {2, 3};
    layer.tensors["weight"] = ref;
    model.manifest.layers.push_back(layer);

    Xoshiro256pp rng(11);
    model.tensors[ref.file] = matrix_to_tensor<double>(testutil::random_matrix(2, 3, rng));
    return model;
}

} // namespace

TEST_CASE("model save/load round trip is byte-exact") {
    const Model model = one_layer_model();
    testutil::TempDir dir;
    save_model(model, dir.path());
    const Model loaded = load_model(dir.path());

    CHECK(loaded.manifest.model == model.manifest.model);
    CHECK(loaded.manifest.metadata == model.manifest.metadata);
    REQUIRE(loaded.manifest.layers.size() == 1);
    CHECK(loaded.manifest.layers[0].name == "fc0");
    CHECK(loaded.tensors.at("fc0.weight.bin").data ==
          model.tensors.at("fc0.weight.bin").data);

    // Saving the loaded model again reproduces identical files.
    testutil::TempDir dir2;
    save_model(loaded, dir2.path());
    CHECK(testutil::same_dir_bytes(dir.path(), dir2.path()));
}

TEST_CASE("load_model: missing tensor names the layer") {
    const Model model = one_layer_model();
    testutil::TempDir dir;
    save_model(model, dir.path());
    std::filesystem::remove(dir.path() / "fc0.weight.bin");
    try {
        load_model(dir.path());
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("missing tensor") != std::string::npos);
        CHECK(msg.find("fc0") != std::string::npos);
    }
}

TEST_CASE("load_model: declared shape must match file size") {
    const Model model = one_layer_model();
    testutil::TempDir dir;
    save_model(model, dir.path());
    // Truncate the tensor file.
    std::ofstream(dir.path() / "fc0.weight.bin", std::ios::binary | std::ios::trunc)
        << "abc";
    CHECK_THROWS_AS(load_model(dir.path()), DataError);
}

TEST_CASE("load_model: unknown dtype is a descriptive error") {
    const Model model = one_layer_model();
    testutil::TempDir dir;
    save_model(model, dir.path());
    // Corrupt the manifest's dtype.
    const auto manifest = dir.path() / "manifest.json";
    auto bytes = testutil::read_bytes(manifest);
    std::string text(bytes.begin(), bytes.end());
    const auto pos = text.find("\"f64\"");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 5, "\"q77\"");
    std::ofstream(manifest, std::ios::trunc) << text;
    CHECK_THROWS_AS(load_model(dir.path()), DataError);
}

TEST_CASE("validate_manifest: linear layers must chain") {
    Model model = one_layer_model();
    LayerSpec bad;
    bad.name = "fc1";
    bad.kind = LayerKind::Linear;
    bad.in_features = 5; // fc0 produces 2
    bad.out_features = 4;
    model.manifest.layers.push_back(bad);
    CHECK_THROWS_AS(validate_manifest(model.manifest), DataError);
}
