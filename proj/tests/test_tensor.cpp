#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "testers.hpp"

using namespace lkmn;

namespace {

template <typename S>
ops::ConvParamsT<S> make_conv(TensorT<S> w, TensorT<S> b, int stride = 1, int ph = 0, int pw = 0,
                              int groups = 1) {
    ops::ConvParamsT<S> p;
    p.weight = std::move(w);
    p.bias = std::move(b);
    p.stride = stride;
    p.pad_h = ph;
    p.pad_w = pw;
    p.groups = groups;
    return p;
}

// run one random conv instance against the six-nested-loop oracle
void check_conv_against_oracle(Rng& rng, const Shape& xs, const Shape& ws, int stride, int ph,
                               int pw, int groups, bool with_bias) {
    auto x = oracle::random_tensor<float>(xs, rng);
    auto w = oracle::random_tensor<float>(ws, rng);
    TensorT<float> b;
    std::vector<double> bias_d;
    if (with_bias) {
        b = oracle::random_tensor<float>({1, ws.n, 1, 1}, rng);
        bias_d.assign(b.values().begin(), b.values().end());
    }
    auto y = ops::conv2d(x, make_conv(w, b, stride, ph, pw, groups));

    std::vector<double> xd(x.values().begin(), x.values().end());
    std::vector<double> wd(w.values().begin(), w.values().end());
    Shape os;
    auto ref = oracle::conv2d_ref(xd, xs, wd, ws, with_bias ? &bias_d : nullptr, stride, ph, pw,
                                  groups, os);
    REQUIRE(y.shape() == os);
    for (std::int64_t i = 0; i < os.numel(); ++i) {
        CHECK(std::abs(static_cast<double>(y.data()[i]) - ref[static_cast<std::size_t>(i)]) <
              1e-5);
    }
}

} // namespace

TEST_CASE("conv2d hand-countable all-ones depthwise") {
    auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto w = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto y = ops::conv2d(x, make_conv<float>(w, {}, 1, 1, 1, 1));
    const float expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("conv2d delta kernel is identity") {
    Rng rng(7);
    auto x = oracle::random_tensor<float>({2, 3, 5, 5}, rng);
    auto w = Tensor::zeros({3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) w.at(c, 0, 1, 1) = 1.0f;
    auto y = ops::conv2d(x, make_conv<float>(w, {}, 1, 1, 1, 3));
    REQUIRE(y.shape() == x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d random instances match the sliding-window oracle") {
    Rng rng(11);
    // the spec's grouped example
    check_conv_against_oracle(rng, {2, 4, 7, 7}, {4, 1, 3, 3}, 1, 1, 1, 4, true);
    // assorted shapes, strides, pads, groupings
    for (int it = 0; it < 40; ++it) {
        const int groups = 1 << rng.uniform_int(3); // 1, 2 or 4
        const std::int64_t cing = 1 + rng.uniform_int(3);
        const std::int64_t coutg = 1 + rng.uniform_int(3);
        const std::int64_t kh = 1 + 2 * rng.uniform_int(2);
        const std::int64_t kw = 1 + 2 * rng.uniform_int(2);
        const std::int64_t h = kh + rng.uniform_int(6);
        const std::int64_t w = kw + rng.uniform_int(6);
        const int stride = 1 + static_cast<int>(rng.uniform_int(2));
        check_conv_against_oracle(rng, {1 + rng.uniform_int(2), cing * groups, h, w},
                                  {coutg * groups, cing, kh, kw}, stride,
                                  static_cast<int>(rng.uniform_int(2)),
                                  static_cast<int>(rng.uniform_int(2)), groups,
                                  rng.uniform_int(2) == 0);
    }
}

TEST_CASE("conv2d dimension errors name the offending axis") {
    auto x = Tensor::zeros({1, 3, 4, 4});
    auto w = Tensor::zeros({8, 4, 3, 3});
    CHECK_THROWS_WITH_AS(ops::conv2d(x, make_conv<float>(w, {})),
                         doctest::Contains("channel axis"), DimensionError);
    auto w2 = Tensor::zeros({8, 3, 9, 9});
    CHECK_THROWS_WITH_AS(ops::conv2d(x, make_conv<float>(w2, {})), doctest::Contains("h axis"),
                         DimensionError);
}

TEST_CASE("strip_dwconv constant field and delta kernel") {
    const int k = 31;
    const float c = 0.37f;
    auto x = Tensor::full({1, 2, 3, 40}, c);
    auto w = Tensor::full({2, 1, 1, k}, 1.0f);
    auto p = make_conv<float>(w, Tensor::zeros({1, 2, 1, 1}));
    auto y = ops::strip_dwconv(x, k, ops::StripOrientation::horizontal, p);
    REQUIRE(y.shape() == x.shape());
    // interior columns see all 31 taps
    CHECK(y.at(0, 0, 1, 20) == doctest::Approx(31.0f * c));
    CHECK(y.at(0, 1, 0, 0) == doctest::Approx(16.0f * c)); // edge: half the taps

    auto wd = Tensor::zeros({2, 1, k, 1});
    wd.at(0, 0, k / 2, 0) = 1.0f;
    wd.at(1, 0, k / 2, 0) = 1.0f;
    auto pd = make_conv<float>(wd, {});
    Rng rng(3);
    auto xr = oracle::random_tensor<float>({1, 2, 35, 4}, rng);
    auto yd = ops::strip_dwconv(xr, k, ops::StripOrientation::vertical, pd);
    for (std::int64_t i = 0; i < xr.numel(); ++i) CHECK(yd.data()[i] == xr.data()[i]);
}

TEST_CASE("strip pair equals sequential conv oracle") {
    Rng rng(5);
    const int k = 31;
    const Shape xs{1, 3, 36, 36};
    auto x = oracle::random_tensor<float>(xs, rng);
    auto wh = oracle::random_tensor<float>({3, 1, 1, k}, rng);
    auto wv = oracle::random_tensor<float>({3, 1, k, 1}, rng);
    auto s1 = ops::strip_dwconv(x, k, ops::StripOrientation::horizontal, make_conv<float>(wh, {}));
    auto s2 = ops::strip_dwconv(s1, k, ops::StripOrientation::vertical, make_conv<float>(wv, {}));

    std::vector<double> xd(x.values().begin(), x.values().end());
    std::vector<double> whd(wh.values().begin(), wh.values().end());
    std::vector<double> wvd(wv.values().begin(), wv.values().end());
    Shape mid, os;
    auto m = oracle::conv2d_ref(xd, xs, whd, {3, 1, 1, k}, nullptr, 1, 0, k / 2, 3, mid);
    auto ref = oracle::conv2d_ref(m, mid, wvd, {3, 1, k, 1}, nullptr, 1, k / 2, 0, 3, os);
    REQUIRE(s2.shape() == os);
    for (std::int64_t i = 0; i < os.numel(); ++i) {
        CHECK(std::abs(static_cast<double>(s2.data()[i]) - ref[static_cast<std::size_t>(i)]) <
              1e-5);
    }
}

TEST_CASE("strip_dwconv rejects even kernels") {
    auto x = Tensor::zeros({1, 2, 4, 40});
    auto w = Tensor::zeros({2, 1, 1, 30});
    CHECK_THROWS_AS(ops::strip_dwconv(x, 30, ops::StripOrientation::horizontal,
                                      make_conv<float>(w, {})),
                    ConfigError);
}

TEST_CASE("channel_shuffle definition and inverse") {
    // channels labeled by index, c=4, g=2 -> order [0,2,1,3]
    auto x = Tensor::zeros({1, 4, 1, 1});
    for (int c = 0; c < 4; ++c) x.at(0, c, 0, 0) = static_cast<float>(c);
    auto y = ops::channel_shuffle(x, 2);
    CHECK(y.at(0, 0, 0, 0) == 0.0f);
    CHECK(y.at(0, 1, 0, 0) == 2.0f);
    CHECK(y.at(0, 2, 0, 0) == 1.0f);
    CHECK(y.at(0, 3, 0, 0) == 3.0f);

    // g=1 is the identity
    Rng rng(9);
    auto r = oracle::random_tensor<float>({2, 6, 3, 3}, rng);
    auto id = ops::channel_shuffle(r, 1);
    CHECK(std::memcmp(id.data(), r.data(), sizeof(float) * r.numel()) == 0);

    // shuffling with g then c/g restores the input exactly
    auto big = oracle::random_tensor<float>({1, 36, 4, 5}, rng);
    auto once = ops::channel_shuffle(big, 4);
    auto back = ops::channel_shuffle(once, 36 / 4);
    CHECK(std::memcmp(back.data(), big.data(), sizeof(float) * big.numel()) == 0);

    CHECK_THROWS_AS(ops::channel_shuffle(r, 4), ConfigError);
}

TEST_CASE("channel_shuffle is a bijection on channel indices") {
    for (int c : {4, 8, 36}) {
        for (int g : {1, 2, 4}) {
            auto x = Tensor::zeros({1, c, 1, 1});
            for (int i = 0; i < c; ++i) x.at(0, i, 0, 0) = static_cast<float>(i);
            auto y = ops::channel_shuffle(x, g);
            std::vector<bool> seen(static_cast<std::size_t>(c), false);
            for (int i = 0; i < c; ++i) {
                const int v = static_cast<int>(y.at(0, i, 0, 0));
                REQUIRE(v >= 0);
                REQUIRE(v < c);
                CHECK(!seen[static_cast<std::size_t>(v)]);
                seen[static_cast<std::size_t>(v)] = true;
            }
        }
    }
}

TEST_CASE("channel_split shapes and round trip") {
    Rng rng(13);
    auto x = oracle::random_tensor<float>({2, 36, 3, 4}, rng);
    auto [a, b] = ops::channel_split(x, 9);
    CHECK(a.shape() == Shape{2, 9, 3, 4});
    CHECK(b.shape() == Shape{2, 27, 3, 4});
    auto back = ops::concat_channels<float>({a, b});
    CHECK(std::memcmp(back.data(), x.data(), sizeof(float) * x.numel()) == 0);

    auto [c, d] = ops::channel_split(x, 35);
    CHECK(d.shape().c == 1);

    CHECK_THROWS_AS(ops::channel_split(x, 0), ConfigError);
    CHECK_THROWS_AS(ops::channel_split(x, 36), ConfigError);
}

TEST_CASE("concat_channels basics") {
    Rng rng(17);
    auto a = oracle::random_tensor<float>({1, 1, 2, 2}, rng);
    auto b = oracle::random_tensor<float>({1, 1, 2, 2}, rng);
    auto ab = ops::concat_channels<float>({a, b});
    auto ba = ops::concat_channels<float>({b, a});
    CHECK(ab.shape().c == 2);
    CHECK(std::memcmp(ab.data(), ba.data(), sizeof(float) * ab.numel()) != 0);
    CHECK(ab.at(0, 0, 1, 1) == a.at(0, 0, 1, 1));
    CHECK(ab.at(0, 1, 1, 1) == b.at(0, 0, 1, 1));

    auto wrong = Tensor::zeros({1, 1, 3, 2});
    CHECK_THROWS_AS(ops::concat_channels<float>({a, wrong}), DimensionError);
}

TEST_CASE("global_avg_pool") {
    auto x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto y = ops::global_avg_pool(x);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.data()[0] == doctest::Approx(2.5f));

    auto c = Tensor::full({2, 3, 4, 4}, 0.7f);
    auto yc = ops::global_avg_pool(c);
    for (std::int64_t i = 0; i < yc.numel(); ++i) CHECK(yc.data()[i] == doctest::Approx(0.7f));

    Rng rng(23);
    auto r = oracle::random_tensor<float>({3, 5, 8, 8}, rng);
    auto yr = ops::global_avg_pool(r);
    for (std::int64_t n = 0; n < 3; ++n) {
        for (std::int64_t ch = 0; ch < 5; ++ch) {
            double mean = 0;
            for (std::int64_t p = 0; p < 64; ++p) {
                mean += r.data()[(n * 5 + ch) * 64 + p];
            }
            mean /= 64.0;
            CHECK(std::abs(static_cast<double>(yr.at(n, ch, 0, 0)) - mean) < 1e-6);
        }
    }
}

TEST_CASE("activations") {
    auto x = Tensor::from_data({1, 1, 1, 3}, {0.0f, -1.0f, 1.0f});
    CHECK(ops::sigmoid(x).data()[0] == doctest::Approx(0.5f));
    CHECK(ops::relu(x).data()[1] == 0.0f);

    // gelu(1.0) from an independent evaluation of the tanh-approximation
    const double u = std::sqrt(2.0 / 3.14159265358979323846) * (1.0 + 0.044715);
    const double expect = 0.5 * (1.0 + std::tanh(u));
    CHECK(static_cast<double>(ops::gelu(x).data()[2]) == doctest::Approx(expect).epsilon(1e-6));
    CHECK(static_cast<double>(ops::gelu(x).data()[2]) == doctest::Approx(0.8412).epsilon(1e-3));
}

TEST_CASE("pixel_shuffle definition and properties") {
    auto x = Tensor::from_data({1, 4, 1, 1}, {1, 2, 3, 4});
    auto y = ops::pixel_shuffle(x, 2);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    CHECK(y.at(0, 0, 0, 0) == 1.0f);
    CHECK(y.at(0, 0, 0, 1) == 2.0f);
    CHECK(y.at(0, 0, 1, 0) == 3.0f);
    CHECK(y.at(0, 0, 1, 1) == 4.0f);

    Rng rng(29);
    auto r = oracle::random_tensor<float>({2, 12, 3, 5}, rng);
    auto id = ops::pixel_shuffle(r, 1);
    CHECK(std::memcmp(id.data(), r.data(), sizeof(float) * r.numel()) == 0);

    auto up = ops::pixel_shuffle(r, 2);
    CHECK(up.shape() == Shape{2, 3, 6, 10});
    std::vector<float> a(r.values()), b(up.values());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    CHECK_THROWS_AS(ops::pixel_shuffle(r, 5), ConfigError);
}

TEST_CASE("fft2 constant plane, linearity, oracle, Parseval") {
    const float c = 1.75f;
    auto x = Tensor::full({1, 1, 5, 7}, c);
    auto [re, im] = ops::fft2(x);
    CHECK(re.data()[0] == doctest::Approx(c * 35.0f).epsilon(1e-5));
    for (std::int64_t i = 1; i < 35; ++i) {
        CHECK(std::abs(re.data()[i]) < 1e-4);
        CHECK(std::abs(im.data()[i]) < 1e-4);
    }

    Rng rng(31);
    for (const auto dims : {std::pair<int, int>{8, 8}, {6, 10}, {9, 5}, {16, 12}}) {
        auto a = oracle::random_tensor<float>({1, 1, dims.first, dims.second}, rng);
        auto b = oracle::random_tensor<float>({1, 1, dims.first, dims.second}, rng);

        // linearity
        auto [ra, ia] = ops::fft2(a);
        auto [rb, ib] = ops::fft2(b);
        auto [rs, is] = ops::fft2(ops::add(a, b));
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(rs.data()[i] - (ra.data()[i] + rb.data()[i])) < 1e-4);
            CHECK(std::abs(is.data()[i] - (ia.data()[i] + ib.data()[i])) < 1e-4);
        }

        // direct double-sum oracle
        std::vector<double> ad(a.values().begin(), a.values().end());
        std::vector<double> re_ref, im_ref;
        oracle::dft2_ref(ad, dims.first, dims.second, re_ref, im_ref);
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            CHECK(std::abs(ra.data()[i] - re_ref[static_cast<std::size_t>(i)]) < 1e-4);
            CHECK(std::abs(ia.data()[i] - im_ref[static_cast<std::size_t>(i)]) < 1e-4);
        }

        // Parseval: sum |X|^2 = h*w * sum |x|^2
        double spec = 0, spatial = 0;
        for (std::int64_t i = 0; i < a.numel(); ++i) {
            spec += static_cast<double>(ra.data()[i]) * ra.data()[i] +
                    static_cast<double>(ia.data()[i]) * ia.data()[i];
            spatial += static_cast<double>(a.data()[i]) * a.data()[i];
        }
        CHECK(spec == doctest::Approx(dims.first * dims.second * spatial).epsilon(1e-3));
    }
}

TEST_CASE("backward basics") {
    Rng rng(37);
    auto x = oracle::random_tensor<float>({1, 2, 3, 3}, rng);
    x.set_requires_grad(true);

    SUBCASE("sum gives ones") {
        auto loss = ops::sum_all(x);
        loss.backward();
        for (auto g : x.grad()) CHECK(g == 1.0f);
    }
    SUBCASE("sum of squares gives 2x") {
        auto loss = ops::sum_all(ops::mul(x, x));
        loss.backward();
        for (std::size_t i = 0; i < x.grad().size(); ++i) {
            CHECK(x.grad()[i] == doctest::Approx(2.0f * x.values()[i]));
        }
    }
    SUBCASE("non-scalar loss is a contract error") {
        auto y = ops::mul(x, x);
        CHECK_THROWS_AS(y.backward(), ContractError);
    }
    SUBCASE("gradients accumulate across backward calls until zeroed") {
        ops::sum_all(x).backward();
        ops::sum_all(x).backward();
        for (auto g : x.grad()) CHECK(g == 2.0f);
        x.zero_grad();
        ops::sum_all(x).backward();
        for (auto g : x.grad()) CHECK(g == 1.0f);
    }
    SUBCASE("non-trainable leaves stay untouched") {
        auto y = oracle::random_tensor<float>({1, 2, 3, 3}, rng);
        auto loss = ops::sum_all(ops::mul(x, y));
        loss.backward();
        CHECK(x.has_grad());
        CHECK(!y.has_grad());
    }
}

TEST_CASE("finite-difference gradients for every op (double shadow mode)") {
    Rng rng(41);

    SUBCASE("conv2d dense, grouped, strided, biased") {
        auto x = oracle::random_tensor<double>({2, 4, 5, 5}, rng);
        auto w = oracle::random_tensor<double>({4, 2, 3, 3}, rng);
        auto b = oracle::random_tensor<double>({1, 4, 1, 1}, rng);
        auto proj = oracle::random_tensor<double>({2, 4, 3, 3}, rng);
        auto make_loss = [&] {
            ops::ConvParamsT<double> p;
            p.weight = w;
            p.bias = b;
            p.stride = 2;
            p.pad_h = 1;
            p.pad_w = 1;
            p.groups = 2;
            return ops::mean_all(ops::mul(ops::conv2d(x, p), proj));
        };
        CHECK(oracle::fd_check({&x, &w, &b}, make_loss) < 1e-4);
    }
    SUBCASE("strip pair") {
        auto x = oracle::random_tensor<double>({1, 3, 6, 6}, rng);
        auto wh = oracle::random_tensor<double>({3, 1, 1, 5}, rng);
        auto wv = oracle::random_tensor<double>({3, 1, 5, 1}, rng);
        auto proj = oracle::random_tensor<double>({1, 3, 6, 6}, rng);
        auto make_loss = [&] {
            ops::ConvParamsT<double> ph, pv;
            ph.weight = wh;
            pv.weight = wv;
            auto s1 = ops::strip_dwconv(x, 5, ops::StripOrientation::horizontal, ph);
            auto s2 = ops::strip_dwconv(s1, 5, ops::StripOrientation::vertical, pv);
            return ops::mean_all(ops::mul(s2, proj));
        };
        CHECK(oracle::fd_check({&x, &wh, &wv}, make_loss) < 1e-4);
    }
    SUBCASE("shuffle, split, concat") {
        auto x = oracle::random_tensor<double>({1, 6, 4, 4}, rng);
        auto proj1 = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
        auto proj2 = oracle::random_tensor<double>({1, 4, 4, 4}, rng);
        auto make_loss = [&] {
            auto s = ops::channel_shuffle(x, 3);
            auto [a, b] = ops::channel_split(s, 2);
            auto c = ops::concat_channels<double>({ops::mul(a, proj1), b});
            return ops::mean_all(ops::mul(c, ops::concat_channels<double>({proj1, proj2})));
        };
        CHECK(oracle::fd_check({&x}, make_loss) < 1e-4);
    }
    SUBCASE("pool, activations, pixel shuffle") {
        auto x = oracle::random_tensor<double>({2, 4, 4, 4}, rng);
        auto proj = oracle::random_tensor<double>({2, 4, 1, 1}, rng);
        auto make_pool = [&] { return ops::mean_all(ops::mul(ops::global_avg_pool(x), proj)); };
        CHECK(oracle::fd_check({&x}, make_pool) < 1e-4);

        auto proj2 = oracle::random_tensor<double>({2, 4, 4, 4}, rng);
        auto make_act = [&] {
            auto g = ops::gelu(x);
            auto s = ops::sigmoid(g);
            return ops::mean_all(ops::mul(s, proj2));
        };
        CHECK(oracle::fd_check({&x}, make_act) < 1e-4);

        auto proj3 = oracle::random_tensor<double>({2, 1, 8, 8}, rng);
        auto make_ps = [&] { return ops::mean_all(ops::mul(ops::pixel_shuffle(x, 2), proj3)); };
        CHECK(oracle::fd_check({&x}, make_ps) < 1e-4);
    }
    SUBCASE("relu away from the kink") {
        auto x = oracle::random_tensor<double>({1, 3, 5, 5}, rng);
        for (auto& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
        auto proj = oracle::random_tensor<double>({1, 3, 5, 5}, rng);
        auto make_loss = [&] { return ops::mean_all(ops::mul(ops::relu(x), proj)); };
        CHECK(oracle::fd_check({&x}, make_loss) < 1e-4);
    }
    SUBCASE("fft2 adjoint via random projections") {
        auto x = oracle::random_tensor<double>({1, 2, 6, 5}, rng);
        auto pr = oracle::random_tensor<double>({1, 2, 6, 5}, rng);
        auto pi = oracle::random_tensor<double>({1, 2, 6, 5}, rng);
        auto make_loss = [&] {
            auto [re, im] = ops::fft2(x);
            return ops::add(ops::mean_all(ops::mul(re, pr)), ops::mean_all(ops::mul(im, pi)));
        };
        CHECK(oracle::fd_check({&x}, make_loss) < 1e-4);
    }
    SUBCASE("elementwise arithmetic, abs, channel scale") {
        auto x = oracle::random_tensor<double>({1, 3, 4, 4}, rng);
        auto y = oracle::random_tensor<double>({1, 3, 4, 4}, rng);
        for (std::size_t i = 0; i < x.values().size(); ++i) {
            // keep |x - y| away from the abs kink
            if (std::abs(x.values()[i] - y.values()[i]) < 0.05) y.values()[i] += 0.1;
        }
        auto s = oracle::random_tensor<double>({1, 3, 1, 1}, rng);
        auto make_loss = [&] {
            auto d = ops::abs_val(ops::sub(x, y));
            auto m = ops::scale_channels(ops::mul(d, x), s);
            return ops::add(ops::mean_all(m), ops::mul_scalar(ops::sum_all(ops::add(x, y)), 0.25));
        };
        CHECK(oracle::fd_check({&x, &y, &s}, make_loss) < 1e-4);
    }
    SUBCASE("scale_channels with per-batch gate") {
        auto x = oracle::random_tensor<double>({3, 4, 3, 3}, rng);
        auto gate = oracle::random_tensor<double>({3, 4, 1, 1}, rng);
        auto proj = oracle::random_tensor<double>({3, 4, 3, 3}, rng);
        auto make_loss = [&] {
            return ops::mean_all(ops::mul(ops::scale_channels(x, gate), proj));
        };
        CHECK(oracle::fd_check({&x, &gate}, make_loss) < 1e-4);
    }
    SUBCASE("flips, rotation, crop") {
        auto x = oracle::random_tensor<double>({1, 2, 5, 4}, rng);
        auto proj = oracle::random_tensor<double>({1, 2, 2, 3}, rng);
        auto make_loss = [&] {
            auto t = ops::rot90(ops::flip_v(ops::flip_h(x)), 1);
            return ops::mean_all(ops::mul(ops::crop(t, 1, 1, 2, 3), proj));
        };
        CHECK(oracle::fd_check({&x}, make_loss) < 1e-4);
    }
}

TEST_CASE("tensor shape validation") {
    CHECK_THROWS_AS(Tensor::zeros({0, 1, 1, 1}), DimensionError);
    CHECK_THROWS_AS(Tensor::from_data({1, 1, 2, 2}, {1.0f, 2.0f}), DimensionError);
}
