#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>

#include "rifcn/data_io.hpp"
#include "rifcn/model.hpp"
#include "support/oracles.hpp"

using namespace rifcn;
using oracle::fill_uniform;
using oracle::rel_err;
using oracle::unit_uniform;

namespace {

ForwardStreamSpec tiny_spec() {
    ForwardStreamSpec spec;
    spec.levels = 2;
    spec.block_widths = {4, 8, 16};
    spec.in_channels = 3;
    return spec;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_CASE("build_model is deterministic in the seed") {
    const ForwardStreamSpec spec = tiny_spec();
    Model<float> a = build_model<float>(spec, 3, 1234);
    Model<float> b = build_model<float>(spec, 3, 1234);
    Model<float> c = build_model<float>(spec, 3, 1235);
    auto va = param_views(a), vb = param_views(b), vc = param_views(c);
    bool any_diff = false;
    for (std::size_t i = 0; i < va.size(); ++i) {
        REQUIRE(va[i].size() == vb[i].size());
        for (std::size_t j = 0; j < va[i].size(); ++j) {
            CHECK(va[i][j] == vb[i][j]);
            any_diff |= va[i][j] != vc[i][j];
        }
    }
    CHECK(any_diff);
}

TEST_CASE("parameter count matches the closed form") {
    // frozen from an independent counting script
    ForwardStreamSpec def;
    def.in_channels = 4;
    CHECK(parameter_count(def, 6) == 33120646ull);
    CHECK(parameter_count(tiny_spec(), 3) == 7947ull);

    // the closed form equals the actual allocated element count
    Model<float> m = build_model<float>(tiny_spec(), 3, 7);
    std::uint64_t total = 0;
    for (auto views = param_views(m); const auto& span : views) {
        total += span.size();
    }
    CHECK(total == m.parameter_count());
}

TEST_CASE("initial weights respect the Glorot bound and biases are zero") {
    Model<double> m = build_model<double>(tiny_spec(), 3, 99);
    auto check_kernel = [](const ConvKernel<double>& k, int fan_in, int fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (std::size_t i = 0; i < k.weights.size(); ++i) {
            CHECK(std::abs(k.weights.data()[i]) <= limit);
        }
        for (double b : k.bias) {
            CHECK(b == 0.0);
        }
    };
    for (std::size_t l = 0; l < m.blocks.size(); ++l) {
        check_kernel(m.blocks[l][0], m.blocks[l][0].d1() * 9, m.blocks[l][0].d0() * 9);
        check_kernel(m.blocks[l][1], m.blocks[l][1].d1() * 9, m.blocks[l][1].d0() * 9);
    }
    for (std::size_t l = 0; l < m.fuse_conv.size(); ++l) {
        check_kernel(m.fuse_conv[l], m.fuse_conv[l].d1() * 9, m.fuse_conv[l].d0() * 9);
        check_kernel(m.fuse_deconv[l], m.fuse_deconv[l].d0() * 16, m.fuse_deconv[l].d1() * 16);
    }
    check_kernel(m.head, m.head.d1(), m.head.d0());
}

TEST_CASE("forward_stream produces the level geometry") {
    ForwardStreamSpec spec; // default: L=4, widths 64..1024
    spec = spec.scaled(0.0625);
    spec.in_channels = 4;
    Model<float> m = build_model<float>(spec, 6, 3);
    Tensor4<float> x(1, 4, 32, 32);
    std::mt19937_64 rng(4);
    fill_uniform(x, rng, 0.0, 1.0);
    ActivationCache<float> cache;
    forward_stream(m, x, cache);
    REQUIRE(cache.pyramid.fwd.size() == 5);
    CHECK(cache.pyramid.fwd[4].h() == 2);
    CHECK(cache.pyramid.fwd[4].w() == 2);
    for (int l = 0; l <= 4; ++l) {
        CHECK(cache.pyramid.fwd[l].c() == spec.block_widths[l]);
        CHECK(cache.pyramid.fwd[l].h() == 32 >> l);
    }

    SUBCASE("zero input with zero biases keeps every feature at zero") {
        Tensor4<float> zero(1, 4, 32, 32);
        ActivationCache<float> c2;
        forward_stream(m, zero, c2);
        for (const auto& f : c2.pyramid.fwd) {
            for (std::size_t i = 0; i < f.size(); ++i) {
                CHECK(f.data()[i] == 0.0f);
            }
        }
    }
    SUBCASE("indivisible input dims are rejected") {
        CHECK_THROWS_AS((void)forward_stream(m, Tensor4<float>(1, 4, 40, 32), cache), ShapeError);
        CHECK_THROWS_AS((void)forward_stream(m, Tensor4<float>(1, 5, 32, 32), cache), ShapeError);
    }
}

TEST_CASE("backward stream collapses when the deconv weights are zero") {
    Model<double> m = build_model<double>(tiny_spec(), 3, 5);
    for (auto& k : m.fuse_deconv) {
        k.weights.fill(0.0);
        for (double& b : k.bias) {
            b = 0.0;
        }
    }
    Tensor4<double> x(1, 3, 16, 16);
    std::mt19937_64 rng(6);
    fill_uniform(x, rng, 0.0, 1.0);
    ActivationCache<double> cache;
    forward_stream(m, x, cache);
    const Tensor4<double> fused = backward_stream_fuse(m, cache.pyramid, cache);
    const Tensor4<double> lateral = activation(Activation::Relu, conv2d(cache.pyramid.fwd[0], m.fuse_conv[0]));
    REQUIRE(fused.same_shape(lateral));
    for (std::size_t i = 0; i < fused.size(); ++i) {
        CHECK(fused.data()[i] == lateral.data()[i]);
    }
}

TEST_CASE("two-level fusion matches a hand-unrolled computation") {
    ForwardStreamSpec spec;
    spec.levels = 1;
    spec.block_widths = {3, 5};
    spec.in_channels = 2;
    Model<double> m = build_model<double>(spec, 2, 8);
    Tensor4<double> x(1, 2, 8, 8);
    std::mt19937_64 rng(9);
    fill_uniform(x, rng, 0.0, 1.0);

    ActivationCache<double> cache;
    forward_stream(m, x, cache);
    const Tensor4<double> fused = backward_stream_fuse(m, cache.pyramid, cache);

    // unroll: block0, pool, block1, then one fusion step
    const auto relu = [](const Tensor4<double>& t) { return activation(Activation::Relu, t); };
    const Tensor4<double> f0 = relu(conv2d(relu(conv2d(x, m.blocks[0][0])), m.blocks[0][1]));
    const Tensor4<double> pooled = maxpool2d(f0).y;
    const Tensor4<double> f1 = relu(conv2d(relu(conv2d(pooled, m.blocks[1][0])), m.blocks[1][1]));
    const Tensor4<double> a = relu(conv2d(f0, m.fuse_conv[0]));
    const Tensor4<double> b = relu(deconv2d(f1, m.fuse_deconv[0]));
    REQUIRE(a.same_shape(b));
    for (std::size_t i = 0; i < fused.size(); ++i) {
        CHECK(fused.data()[i] == a.data()[i] + b.data()[i]);
    }
    CHECK(fused.h() == x.h());
    CHECK(fused.w() == x.w());
}

TEST_CASE("fusion recurrence topology: level m feeds only levels <= m") {
    Model<double> m = build_model<double>(tiny_spec(), 3, 11);
    Tensor4<double> x(1, 3, 16, 16);
    std::mt19937_64 rng(12);
    fill_uniform(x, rng, 0.0, 1.0);
    ActivationCache<double> cache;
    forward_stream(m, x, cache);
    FeaturePyramid<double> base = cache.pyramid;
    ActivationCache<double> scratch;
    backward_stream_fuse(m, base, scratch);

    for (int pert = 0; pert <= 2; ++pert) {
        FeaturePyramid<double> mod;
        mod.fwd = cache.pyramid.fwd;
        for (std::size_t i = 0; i < mod.fwd[pert].size(); ++i) {
            mod.fwd[pert].data()[i] += 0.05;
        }
        ActivationCache<double> s2;
        backward_stream_fuse(m, mod, s2);
        for (int l = 0; l <= 2; ++l) {
            bool identical = true;
            for (std::size_t i = 0; i < mod.bwd[l].size(); ++i) {
                identical &= mod.bwd[l].data()[i] == base.bwd[l].data()[i];
            }
            if (l > pert) {
                CHECK(identical); // deeper levels cannot see the perturbation
            } else {
                CHECK_FALSE(identical);
            }
        }
    }
}

TEST_CASE("predict returns normalized probabilities deterministically") {
    Model<float> m = build_model<float>(tiny_spec(), 3, 21);
    Tensor4<float> x(2, 3, 16, 16);
    std::mt19937_64 rng(22);
    fill_uniform(x, rng, 0.0, 1.0);
    const Tensor4<float> p = predict(m, x);
    REQUIRE(p.n() == 2);
    REQUIRE(p.c() == 3);
    REQUIRE(p.h() == 16);
    REQUIRE(p.w() == 16);
    for (int n = 0; n < 2; ++n) {
        for (int s = 0; s < 256; ++s) {
            float sum = 0.0f;
            for (int c = 0; c < 3; ++c) {
                sum += p.plane(n, c)[s];
            }
            CHECK(std::abs(sum - 1.0f) <= 1e-5f);
        }
    }
    const Tensor4<float> p2 = predict(m, x);
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(p.data()[i] == p2.data()[i]);
    }

    SUBCASE("single-class head stays in (0,1)") {
        Model<float> bin = build_model<float>(tiny_spec(), 1, 23);
        CHECK(bin.head_kind == HeadKind::Sigmoid);
        const Tensor4<float> pb = predict(bin, x);
        REQUIRE(pb.c() == 1);
        for (std::size_t i = 0; i < pb.size(); ++i) {
            CHECK(pb.data()[i] > 0.0f);
            CHECK(pb.data()[i] < 1.0f);
        }
    }
}

TEST_CASE("compute_loss values and failure modes") {
    SUBCASE("perfect one-hot probabilities cost only the clamp floor") {
        Tensor4<double> p(1, 3, 2, 2);
        LabelRaster lab(2, 2);
        for (int s = 0; s < 4; ++s) {
            const int t = s % 3;
            lab.v[s] = static_cast<std::uint8_t>(t);
            for (int c = 0; c < 3; ++c) {
                p.plane(0, c)[s] = c == t ? 1.0 : 0.0;
            }
        }
        CHECK(compute_loss(p, lab, HeadKind::Softmax) <= 1e-6);
    }
    SUBCASE("uniform probabilities cost ln M") {
        Tensor4<double> p(1, 4, 4, 4);
        p.fill(0.25);
        LabelRaster lab(4, 4, 2);
        CHECK(compute_loss(p, lab, HeadKind::Softmax) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    }
    SUBCASE("all-ignored supervision is an error") {
        Tensor4<double> p(1, 3, 2, 2);
        p.fill(1.0 / 3.0);
        LabelRaster lab(2, 2, kIgnoreLabel);
        CHECK_THROWS_AS((void)compute_loss(p, lab, HeadKind::Softmax), DataError);
    }
    SUBCASE("out-of-range labels are an error") {
        Tensor4<double> p(1, 3, 2, 2);
        p.fill(1.0 / 3.0);
        LabelRaster lab(2, 2, 7);
        CHECK_THROWS_AS((void)compute_loss(p, lab, HeadKind::Softmax), DataError);
    }
    SUBCASE("loss is permutation invariant and decreases with true-class confidence") {
        std::mt19937_64 rng(31);
        Tensor4<double> p(1, 3, 2, 4);
        LabelRaster lab(2, 4);
        for (int s = 0; s < 8; ++s) {
            double sum = 0.0;
            for (int c = 0; c < 3; ++c) {
                p.plane(0, c)[s] = 0.05 + unit_uniform(rng);
                sum += p.plane(0, c)[s];
            }
            for (int c = 0; c < 3; ++c) {
                p.plane(0, c)[s] /= sum;
            }
            lab.v[s] = static_cast<std::uint8_t>(oracle::uniform_int(rng, 0, 2));
        }
        const double base = compute_loss(p, lab, HeadKind::Softmax);

        // permute pixels identically in probs and labels
        Tensor4<double> pp(1, 3, 2, 4);
        LabelRaster pl(2, 4);
        const int perm[8] = {5, 2, 7, 0, 3, 6, 1, 4};
        for (int s = 0; s < 8; ++s) {
            pl.v[s] = lab.v[perm[s]];
            for (int c = 0; c < 3; ++c) {
                pp.plane(0, c)[s] = p.plane(0, c)[perm[s]];
            }
        }
        CHECK(compute_loss(pp, pl, HeadKind::Softmax) == doctest::Approx(base).epsilon(1e-12));

        Tensor4<double> boosted = p;
        boosted.plane(0, lab.v[3])[3] += 0.1; // more mass on the true class at pixel 3
        CHECK(compute_loss(boosted, lab, HeadKind::Softmax) < base);
    }
}

TEST_CASE("loss gradient vanishes at a perfect prediction") {
    Tensor4<double> p(1, 3, 2, 2);
    LabelRaster lab(2, 2);
    for (int s = 0; s < 4; ++s) {
        const int t = (s * 2) % 3;
        lab.v[s] = static_cast<std::uint8_t>(t);
        for (int c = 0; c < 3; ++c) {
            p.plane(0, c)[s] = c == t ? 1.0 : 0.0;
        }
    }
    const Tensor4<double> g = loss_grad_logits(p, std::span<const LabelRaster>(&lab, 1), HeadKind::Softmax);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(g.data()[i] == 0.0);
    }
}

TEST_CASE("backprop matches finite differences on a small model") {
    ForwardStreamSpec spec;
    spec.levels = 1;
    spec.block_widths = {3, 5};
    spec.in_channels = 2;
    Model<double> m = build_model<double>(spec, 2, 41);
    std::mt19937_64 rng(42);
    // move the zero-initialized biases off the ReLU kink: central differences
    // at an exact kink measure the one-sided average, not the subgradient
    for (auto views = param_views(m); auto& span : views) {
        for (double& v : span) {
            if (v == 0.0) {
                v = 0.1 * (2.0 * unit_uniform(rng) - 1.0);
            }
        }
    }
    Tensor4<double> x(1, 2, 8, 8);
    fill_uniform(x, rng, 0.0, 1.0);
    std::vector<LabelRaster> labels(1, LabelRaster(8, 8));
    for (auto& v : labels[0].v) {
        v = static_cast<std::uint8_t>(oracle::uniform_int(rng, 0, 1));
    }
    const std::span<const LabelRaster> ls(labels);

    ActivationCache<double> cache;
    const Tensor4<double> probs = forward_train(m, x, cache);
    const Gradients<double> grads = backprop(m, cache, probs, ls);
    auto params = param_views(m);
    const auto gv = grad_views(grads);
    auto loss_fn = [&]() {
        ActivationCache<double> c;
        return compute_loss(forward_train(m, x, c), ls, m.head_kind);
    };
    double worst = 0.0;
    for (std::size_t b = 0; b < params.size(); ++b) {
        const std::size_t samples = std::min<std::size_t>(6, params[b].size());
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t i = static_cast<std::size_t>(unit_uniform(rng) * params[b].size());
            worst = std::max(worst, rel_err(oracle::central_fd(&params[b][i], 1e-5, loss_fn), gv[b][i]));
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("dead deep path leaves the upsampling weights without gradient") {
    Model<double> m = build_model<double>(tiny_spec(), 3, 51);
    // zero input and zero biases: every feature is exactly zero, so each
    // deconv sees a zero input with non-positive (zero) pre-activation
    Tensor4<double> x(1, 3, 16, 16);
    std::vector<LabelRaster> labels(1, LabelRaster(16, 16, 1));
    ActivationCache<double> cache;
    const Tensor4<double> probs = forward_train(m, x, cache);
    const Gradients<double> grads = backprop(m, cache, probs, std::span<const LabelRaster>(labels));
    for (const auto& g : grads.fuse_deconv) {
        for (std::size_t i = 0; i < g.weights.size(); ++i) {
            CHECK(g.weights.data()[i] == 0.0);
        }
    }
}

TEST_CASE("zeroed upsampling path blocks gradients to the deep blocks") {
    Model<double> m = build_model<double>(tiny_spec(), 3, 52);
    for (auto& k : m.fuse_deconv) {
        k.weights.fill(0.0);
        for (double& b : k.bias) {
            b = 0.0;
        }
    }
    Tensor4<double> x(1, 3, 16, 16);
    std::mt19937_64 rng(53);
    fill_uniform(x, rng, 0.0, 1.0);
    std::vector<LabelRaster> labels(1, LabelRaster(16, 16));
    for (auto& v : labels[0].v) {
        v = static_cast<std::uint8_t>(oracle::uniform_int(rng, 0, 2));
    }
    ActivationCache<double> cache;
    const Tensor4<double> probs = forward_train(m, x, cache);
    const Gradients<double> grads = backprop(m, cache, probs, std::span<const LabelRaster>(labels));
    for (int l = 1; l <= 2; ++l) {
        for (int j = 0; j < 2; ++j) {
            for (std::size_t i = 0; i < grads.blocks[l][j].weights.size(); ++i) {
                CHECK(grads.blocks[l][j].weights.data()[i] == 0.0);
            }
            for (double v : grads.blocks[l][j].bias) {
                CHECK(v == 0.0);
            }
        }
    }
    // the shallow block still learns
    double mag = 0.0;
    for (std::size_t i = 0; i < grads.blocks[0][0].weights.size(); ++i) {
        mag += std::abs(grads.blocks[0][0].weights.data()[i]);
    }
    CHECK(mag > 0.0);
}

TEST_CASE("a consumed activation cache is rejected") {
    Model<double> m = build_model<double>(tiny_spec(), 3, 61);
    Tensor4<double> x(1, 3, 16, 16);
    std::mt19937_64 rng(62);
    fill_uniform(x, rng, 0.0, 1.0);
    std::vector<LabelRaster> labels(1, LabelRaster(16, 16, 0));
    ActivationCache<double> cache;
    const Tensor4<double> probs = forward_train(m, x, cache);
    (void)backprop(m, cache, probs, std::span<const LabelRaster>(labels));
    CHECK_THROWS_AS((void)backprop(m, cache, probs, std::span<const LabelRaster>(labels)), Error);
    ActivationCache<double> empty;
    CHECK_THROWS_AS((void)backprop(m, empty, probs, std::span<const LabelRaster>(labels)), Error);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Model<float> m = build_model<float>(tiny_spec(), 3, 71);
    const auto path1 = temp_file("rifcn_test_ckpt1.ntr");
    const auto path2 = temp_file("rifcn_test_ckpt2.ntr");
    serialize_model(m, path1);
    Model<float> loaded = deserialize_model(path1);
    serialize_model(loaded, path2);

    std::ifstream f1(path1, std::ios::binary), f2(path2, std::ios::binary);
    const std::vector<char> b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::vector<char> b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1.size() == b2.size());
    CHECK(b1 == b2);

    SUBCASE("loaded model predicts bit-identically") {
        Tensor4<float> x(1, 3, 16, 16);
        std::mt19937_64 rng(72);
        fill_uniform(x, rng, 0.0, 1.0);
        const Tensor4<float> pa = predict(m, x);
        const Tensor4<float> pb = predict(loaded, x);
        for (std::size_t i = 0; i < pa.size(); ++i) {
            CHECK(pa.data()[i] == pb.data()[i]);
        }
    }
    SUBCASE("spec fields survive the round trip") {
        CHECK(loaded.spec.levels == 2);
        CHECK(loaded.spec.block_widths == std::vector<int>{4, 8, 16});
        CHECK(loaded.spec.in_channels == 3);
        CHECK(loaded.num_classes == 3);
        CHECK(loaded.head_kind == HeadKind::Softmax);
    }
    std::filesystem::remove(path1);
    std::filesystem::remove(path2);
}

TEST_CASE("checkpoint corruption is detected") {
    Model<float> m = build_model<float>(tiny_spec(), 3, 81);
    const auto path = temp_file("rifcn_test_ckpt3.ntr");
    serialize_model(m, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    SUBCASE("bad magic") {
        std::vector<char> bad = bytes;
        bad[0] = 'X';
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        try {
            (void)deserialize_model(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
        }
    }
    SUBCASE("flipped payload byte fails the checksum") {
        std::vector<char> bad = bytes;
        bad[bytes.size() / 2] = static_cast<char>(bad[bytes.size() / 2] ^ 0x40);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bad.data(), static_cast<std::streamsize>(bad.size()));
        out.close();
        try {
            (void)deserialize_model(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("checksum") != std::string::npos);
        }
    }
    SUBCASE("truncation is detected") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS((void)deserialize_model(path), DataError);
    }
    SUBCASE("format version mismatch is reported") {
        auto records = read_ntr_records(path);
        REQUIRE(records[0].first == "manifest");
        std::string text(records[0].second.payload.begin(), records[0].second.payload.end());
        const auto pos = text.find("format_version=1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 16, "format_version=9");
        records[0].second.payload.assign(text.begin(), text.end());
        records[0].second.dims = {text.size()};
        write_ntr_records(path, records);
        try {
            (void)deserialize_model(path);
            FAIL("expected DataError");
        } catch (const DataError& e) {
            CHECK(std::string(e.what()).find("version") != std::string::npos);
        }
    }
    std::filesystem::remove(path);
}
