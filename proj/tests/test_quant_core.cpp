#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mixquant/quant.hpp"
#include "test_util.hpp"

using namespace mixquant;

namespace {

// Reference dequantization in f64 (for bound checks against the stored scale).
std::vector<double> dequant_asym(const AsymGroup& g) {
    std::vector<double> out;
    for (auto c : g.codes) {
        out.push_back((static_cast<double>(c) - g.params.zero_point) * g.params.scale);
    }
    return out;
}

// Dequantization in f32, the precision the scales are stored in.
std::vector<float> dequant_asym_f32(const AsymGroup& g) {
    std::vector<float> out;
    for (auto c : g.codes) {
        out.push_back((static_cast<float>(c) - g.params.zero_point) * g.params.scale);
    }
    return out;
}

} // namespace

TEST_CASE("asymmetric group: frozen examples") {
    SUBCASE("[0,1,2,3] b=4") {
        const std::vector<double> x{0.0, 1.0, 2.0, 3.0};
        const auto g = quantize_group_asym<double>(x, 4);
        CHECK(g.params.scale == 0.2f);
        CHECK(g.params.zero_point == 0);
        CHECK(g.codes == std::vector<std::uint8_t>{0, 5, 10, 15});
        const auto back = dequant_asym_f32(g);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(back[i] == static_cast<float>(x[i]));
        }
    }
    SUBCASE("all-zero group") {
        const std::vector<double> x(8, 0.0);
        const auto g = quantize_group_asym<double>(x, 4);
        for (auto c : g.codes) CHECK(c == g.params.zero_point);
        for (double v : dequant_asym(g)) CHECK(v == 0.0);
    }
    SUBCASE("constant group [-2,-2] b=4") {
        const std::vector<double> x{-2.0, -2.0};
        const auto g = quantize_group_asym<double>(x, 4);
        CHECK(g.params.scale == 2.0f);
        CHECK(g.params.zero_point == 1);
        CHECK(g.codes == std::vector<std::uint8_t>{0, 0});
        for (double v : dequant_asym(g)) CHECK(v == -2.0);
    }
}

TEST_CASE("symmetric group: frozen examples") {
    SUBCASE("[-1.0, 0.5] b=8") {
        const std::vector<double> x{-1.0, 0.5};
        const auto g = quantize_group_sym<double>(x, 8);
        CHECK(g.params.scale == doctest::Approx(1.0 / 127).epsilon(1e-12));
        CHECK(g.params.zero_point == 0);
        // round-half-away-from-zero: 0.5 * 127 = 63.5 -> 64
        CHECK(g.codes == std::vector<std::int8_t>{-127, 64});
    }
    SUBCASE("all zeros") {
        const auto g = quantize_group_sym<double>(std::vector<double>(5, 0.0), 8);
        for (auto c : g.codes) CHECK(c == 0);
    }
    SUBCASE("[127.0] b=8 exact round trip") {
        const auto g = quantize_group_sym<double>(std::vector<double>{127.0}, 8);
        CHECK(g.params.scale == 1.0f);
        CHECK(g.codes == std::vector<std::int8_t>{127});
        CHECK(static_cast<double>(g.codes[0]) * g.params.scale == 127.0);
    }
}

TEST_CASE("group quantization: errors") {
    CHECK_THROWS_AS(quantize_group_asym<double>(std::vector<double>{}, 4), UsageError);
    CHECK_THROWS_AS(quantize_group_sym<double>(std::vector<double>{}, 8), UsageError);
    CHECK_THROWS_AS(quantize_group_asym<double>(std::vector<double>{1.0, NAN}, 4),
                    DataError);
    CHECK_THROWS_AS(
        quantize_group_sym<double>(std::vector<double>{INFINITY}, 8), DataError);
    CHECK_THROWS_AS(quantize_group_asym<double>(std::vector<double>{1.0}, 5), UsageError);
}

TEST_CASE("dequantize: frozen examples") {
    // code 3, s=1, z=0 -> 3.0
    QuantizedTensor q;
    q.scheme = QuantScheme{8, false, 4, false};
    q.rows = 1;
    q.cols = 1;
    q.payload = {3};
    q.scales.resize(1, 1);
    q.scales(0, 0) = 1.0f;
    q.zero_points.resize(1, 1);
    q.zero_points(0, 0) = 0;
    CHECK(dequantize_tensor<double>(q)(0, 0) == 3.0);

    // codes [0,5,10,15], s=0.2, z=0 -> [0,1,2,3]
    MatrixRMd row(1, 4);
    row << 0.0, 1.0, 2.0, 3.0;
    const auto q2 = quantize_tensor<double>(row, QuantScheme{4, false, 128, false});
    const MatrixRMd back = dequantize_tensor<double>(q2);
    for (Index c = 0; c < 4; ++c) CHECK(back(0, c) == row(0, c));

    // symmetric code -127, s = 1/127 -> -1.0 (exactly, after f32 scale storage)
    MatrixRMd sym_row(1, 2);
    sym_row << -1.0, 0.5;
    const auto q3 = quantize_tensor<double>(sym_row, QuantScheme{8, true, 128, false});
    CHECK(dequantize_tensor<double>(q3)(0, 0) ==
          -127.0 * static_cast<double>(q3.scales(0, 0)));
}

TEST_CASE("quantize_tensor: group shapes") {
    Xoshiro256pp rng(5);
    SUBCASE("1x128 row, group 128 -> 1 group") {
        const MatrixRMd m = testutil::random_matrix(1, 128, rng);
        const auto q = quantize_tensor<double>(m, QuantScheme{4, false, 128, false});
        CHECK(q.num_groups() == 1);
        CHECK(q.scales.cols() == 1);
    }
    SUBCASE("1x200 row, group 128 -> groups of 128 and 72") {
        const MatrixRMd m = testutil::random_matrix(1, 200, rng);
        const auto q = quantize_tensor<double>(m, QuantScheme{4, false, 128, false});
        CHECK(q.num_groups() == 2);
        CHECK(q.group_len(0) == 128);
        CHECK(q.group_len(1) == 72);
    }
    SUBCASE("4-bit symmetric tensors are rejected") {
        const MatrixRMd m = testutil::random_matrix(1, 8, rng);
        CHECK_THROWS_AS(quantize_tensor<double>(m, QuantScheme{4, true, 128, false}),
                        UsageError);
    }
}

TEST_CASE("quantize_tensor: grid-aligned inputs round trip bit-exactly") {
    // Entries already on the quantization grid: k * s with s = 1.0 (range
    // spans 0..15 for 4-bit asym).
    MatrixRMd m(2, 16);
    for (Index c = 0; c < 16; ++c) {
        m(0, c) = static_cast<double>(c);        // 0..15 on the 4-bit grid
        m(1, c) = static_cast<double>(c) - 8.0;  // -8..7 on the 4-bit grid
    }
    const auto q = quantize_tensor<double>(m, QuantScheme{4, false, 16, false});
    CHECK(dequantize_tensor<double>(q) == m);
}

TEST_CASE("round-trip error bound |x - x'| <= s/2 (1 + 1e-6)") {
    Xoshiro256pp rng(17);
    for (int trial = 0; trial < 500; ++trial) {
        const auto len = rng.uniform_int(1, 129);
        std::vector<double> x(static_cast<std::size_t>(len));
        const double scale = std::exp(rng.normal() * 2.0);
        for (auto& v : x) v = rng.normal() * scale;

        const auto asym = quantize_group_asym<double>(x, trial % 2 ? 4 : 8);
        const auto back = dequant_asym(asym);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(std::abs(x[i] - back[i]) <=
                  0.5 * asym.params.scale * (1.0 + 1e-6));
        }

        const auto sym = quantize_group_sym<double>(x, trial % 2 ? 4 : 8);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double recon = static_cast<double>(sym.codes[i]) * sym.params.scale;
            CHECK(std::abs(x[i] - recon) <= 0.5 * sym.params.scale * (1.0 + 1e-6));
        }
    }
}

TEST_CASE("constant groups reconstruct exactly") {
    Xoshiro256pp rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const double v = rng.normal() * std::exp(rng.normal());
        const std::vector<double> x(static_cast<std::size_t>(rng.uniform_int(1, 20)), v);
        const auto g = quantize_group_asym<double>(x, 4);
        for (double r : dequant_asym(g)) CHECK(r == v);
    }
}

TEST_CASE("symmetric quantization: sign symmetry and range") {
    Xoshiro256pp rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(static_cast<std::size_t>(rng.uniform_int(1, 40)));
        for (auto& v : x) v = rng.normal();
        std::vector<double> neg(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) neg[i] = -x[i];

        const int bits = trial % 2 ? 4 : 8;
        const auto g = quantize_group_sym<double>(x, bits);
        const auto gn = quantize_group_sym<double>(neg, bits);
        CHECK(g.params.scale == gn.params.scale);
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(static_cast<int>(g.codes[i]) == -static_cast<int>(gn.codes[i]));
            CHECK(g.codes[i] >= -((1 << (bits - 1)) - 1)); // never -2^(b-1)
            CHECK(g.codes[i] <= (1 << (bits - 1)) - 1);
        }
    }
}

TEST_CASE("asymmetric codes occupy [0, 2^b - 1]") {
    Xoshiro256pp rng(37);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(static_cast<std::size_t>(rng.uniform_int(1, 40)));
        for (auto& v : x) v = rng.normal() * 3.0;
        const int bits = trial % 2 ? 4 : 8;
        const auto g = quantize_group_asym<double>(x, bits);
        const int qmax = (1 << bits) - 1;
        CHECK(g.params.zero_point <= qmax);
        for (auto c : g.codes) CHECK(static_cast<int>(c) <= qmax);
    }
}

TEST_CASE("f16 scale storage mode rounds scales onto the binary16 grid") {
    Xoshiro256pp rng(41);
    MatrixRMd m = testutil::random_matrix(3, 64, rng);
    const auto q16 = quantize_tensor<double>(m, QuantScheme{4, false, 32, true});
    const auto q32 = quantize_tensor<double>(m, QuantScheme{4, false, 32, false});
    bool any_differs = false;
    for (Index r = 0; r < q16.scales.rows(); ++r) {
        for (Index g = 0; g < q16.scales.cols(); ++g) {
            CHECK(q16.scales(r, g) == round_scale_f16(q16.scales(r, g)));
            if (q16.scales(r, g) != q32.scales(r, g)) any_differs = true;
        }
    }
    CHECK(any_differs); // random scales rarely sit on the f16 grid already

    // The round-trip bound still holds against the stored scale.
    const MatrixRMd back = dequantize_tensor<double>(q16);
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            const float s = q16.scales(r, c / 32);
            CHECK(std::abs(m(r, c) - back(r, c)) <= 0.5 * s * (1.0 + 1e-6));
        }
    }
}

TEST_CASE("round_scale_f16 basics") {
    CHECK(round_scale_f16(1.0f) == 1.0f);          // exactly representable
    CHECK(round_scale_f16(0.2f) != 0.2f);          // 0.2 is not on the f16 grid
    CHECK(round_scale_f16(1e-12f) > 0.0f);         // never collapses to zero
    CHECK(round_scale_f16(0.2f) == doctest::Approx(0.2).epsilon(1e-3));
}

TEST_CASE("quantize_tensor: error location includes row and group") {
    MatrixRMd m(2, 4);
    m << 1.0, 2.0, 3.0, 4.0, 5.0, NAN, 7.0, 8.0;
    try {
        quantize_tensor<double>(m, QuantScheme{4, false, 2, false});
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 1") != std::string::npos);
        CHECK(msg.find("group 0") != std::string::npos);
    }
}
