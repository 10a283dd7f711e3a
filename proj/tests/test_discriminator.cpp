#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <vector>

#include "dbmif/discriminator.hpp"

using namespace dbmif;

namespace {

struct Row {
    int in_ch, out_ch, kernel, stride, groups, dilation;
};

void check_layout(const std::vector<DiscLayerSpec>& specs, const std::vector<Row>& table) {
    REQUIRE(specs.size() == table.size());
    for (size_t i = 0; i < table.size(); ++i) {
        CAPTURE(i);
        CHECK(specs[i].in_ch == table[i].in_ch);
        CHECK(specs[i].out_ch == table[i].out_ch);
        CHECK(specs[i].kernel == table[i].kernel);
        CHECK(specs[i].stride == table[i].stride);
        CHECK(specs[i].groups == table[i].groups);
        CHECK(specs[i].dilation == table[i].dilation);
    }
}

void check_built_stack(const ConvStackDisc& d) {
    REQUIRE(d.layers.size() == d.layout.size());
    for (size_t i = 0; i < d.layers.size(); ++i) {
        CAPTURE(i);
        const Conv1d& c = d.layers[i];
        const DiscLayerSpec& s = d.layout[i];
        CHECK(c.in_ch == s.in_ch);
        CHECK(c.out_ch == s.out_ch);
        CHECK(c.kernel == s.kernel);
        CHECK(c.geom.stride == s.stride);
        CHECK(c.geom.groups == s.groups);
        CHECK(c.geom.dilation == s.dilation);
        CHECK(c.geom.padding == same_padding(s.kernel, s.dilation));
        CHECK(c.normalized);
        CHECK(c.direction.shape() == Shape{s.out_ch, s.in_ch / s.groups, s.kernel});
    }
}

}  // namespace

TEST_CASE("full-band table matches the published layout row for row") {
    DiscConfig cfg;
    std::vector<DiscLayerSpec> specs = wav_disc_layout(cfg.wav_widths);
    check_layout(specs, {
                            {1, 16, 15, 1, 1, 1},
                            {16, 64, 41, 4, 4, 1},
                            {64, 256, 41, 4, 4, 1},
                            {256, 1024, 41, 4, 4, 1},
                            {1024, 1024, 41, 4, 4, 1},
                            {1024, 1024, 5, 1, 1, 1},
                            {1024, 1, 3, 1, 1, 1},
                        });
    std::mt19937_64 rng(1);
    ConvStackDisc d = make_disc_stack(specs, 0.1, rng);
    check_built_stack(d);
    CHECK(d.receptive_field == 4951);
}

TEST_CASE("subband table matches the published layout for every dilation") {
    DiscConfig cfg;
    for (int dil = 1; dil <= 3; ++dil) {
        CAPTURE(dil);
        std::vector<DiscLayerSpec> specs = sub_disc_layout(cfg.sub_widths, 4, dil);
        check_layout(specs, {
                                {4, 36, 3, 1, 4, dil},
                                {36, 72, 7, 2, 4, dil},
                                {72, 144, 7, 2, 4, dil},
                                {144, 288, 7, 2, 4, dil},
                                {288, 576, 7, 2, 4, dil},
                                {576, 1152, 7, 2, 4, dil},
                                {1152, 1152, 5, 1, 4, dil},
                                {1152, 1, 3, 1, 1, dil},
                            });
        std::mt19937_64 rng(2);
        ConvStackDisc d = make_disc_stack(specs, 0.1, rng);
        check_built_stack(d);
        CHECK(d.receptive_field == 1 + 380 * dil);
        // Grouped width sanity: layer 2 splits 36 inputs into 4 groups of 9.
        CHECK(d.layers[1].direction.shape() == Shape{72, 9, 7});
    }
    CHECK_THROWS_AS(sub_disc_layout(cfg.sub_widths, 4, 0), config_error);
    CHECK_THROWS_AS(sub_disc_layout(cfg.sub_widths, 4, 4), config_error);
    CHECK_THROWS_AS(sub_disc_layout({36, 72, 1}, 4, 1), config_error);
    CHECK_THROWS_AS(wav_disc_layout({16, 64, 1}), config_error);
}

TEST_CASE("narrow variant keeps every structural field") {
    DiscConfig full;
    DiscConfig tiny = DiscConfig::tiny();
    std::vector<DiscLayerSpec> wf = wav_disc_layout(full.wav_widths);
    std::vector<DiscLayerSpec> wt = wav_disc_layout(tiny.wav_widths);
    REQUIRE(wf.size() == wt.size());
    for (size_t i = 0; i < wf.size(); ++i) {
        CHECK(wf[i].kernel == wt[i].kernel);
        CHECK(wf[i].stride == wt[i].stride);
        CHECK(wf[i].groups == wt[i].groups);
        CHECK(wf[i].dilation == wt[i].dilation);
    }
    CHECK(wt.back().out_ch == 1);
    for (int dil = 1; dil <= 3; ++dil) {
        std::vector<DiscLayerSpec> sf = sub_disc_layout(full.sub_widths, 4, dil);
        std::vector<DiscLayerSpec> st = sub_disc_layout(tiny.sub_widths, 4, dil);
        REQUIRE(sf.size() == st.size());
        for (size_t i = 0; i < sf.size(); ++i) {
            CHECK(sf[i].kernel == st[i].kernel);
            CHECK(sf[i].stride == st[i].stride);
            CHECK(sf[i].groups == st[i].groups);
            CHECK(sf[i].dilation == st[i].dilation);
        }
    }
    // Receptive fields depend only on structure, so they match too.
    std::mt19937_64 rng(3);
    CHECK(make_disc_stack(wt, 0.1, rng).receptive_field == 4951);
}

TEST_CASE("score maps and features have the documented shapes at full width") {
    NoGradGuard quiet;
    std::mt19937_64 rng(4);
    DiscEnsemble e = make_disc_ensemble(DiscConfig{}, default_bank(), rng);
    Tensor y = Tensor::randn({1, 16000}, rng, 0.1);
    std::vector<ConvStackDisc::Output> outs = e.forward(y);
    REQUIRE(outs.size() == 4);

    CHECK(outs[0].score.shape() == Shape{1, 63});
    REQUIRE(outs[0].features.size() == 6);
    const int64_t wav_ch[6] = {16, 64, 256, 1024, 1024, 1024};
    const int64_t wav_t[6] = {16000, 4000, 1000, 250, 63, 63};
    for (size_t i = 0; i < 6; ++i)
        CHECK(outs[0].features[i].shape() == Shape{wav_ch[i], wav_t[i]});

    const int64_t sub_ch[7] = {36, 72, 144, 288, 576, 1152, 1152};
    const int64_t sub_t[7] = {4000, 2000, 1000, 500, 250, 125, 125};
    for (size_t k = 1; k < 4; ++k) {
        CAPTURE(k);
        CHECK(outs[k].score.shape() == Shape{1, 125});
        REQUIRE(outs[k].features.size() == 7);
        for (size_t i = 0; i < 7; ++i)
            CHECK(outs[k].features[i].shape() == Shape{sub_ch[i], sub_t[i]});
    }
    // The three subband copies differ only in their dilation.
    for (size_t k = 0; k < 3; ++k)
        for (const DiscLayerSpec& s : e.sub[k].layout)
            CHECK(s.dilation == static_cast<int>(k) + 1);
}

TEST_CASE("fresh discriminators score silence as zero") {
    NoGradGuard quiet;
    std::mt19937_64 rng(5);
    DiscEnsemble e = make_disc_ensemble(DiscConfig::tiny(), default_bank(), rng);
    std::vector<ConvStackDisc::Output> outs = e.forward(Tensor::zeros({1, 8000}));
    for (const auto& o : outs)
        for (double v : o.score.values()) CHECK(v == 0.0);
}

TEST_CASE("inputs shorter than the receptive field are rejected") {
    NoGradGuard quiet;
    std::mt19937_64 rng(6);
    DiscEnsemble e = make_disc_ensemble(DiscConfig::tiny(), default_bank(), rng);
    CHECK_THROWS_WITH_AS(e.forward(Tensor::zeros({1, 4000})),
                         doctest::Contains("receptive field"), precondition_error);
    CHECK_THROWS_AS(e.forward(Tensor::zeros({2, 8000})), precondition_error);
}

TEST_CASE("rescaling a direction vector leaves outputs unchanged") {
    NoGradGuard quiet;
    std::mt19937_64 rng(7);
    ConvStackDisc d = make_disc_stack(wav_disc_layout(DiscConfig::tiny().wav_widths), 0.1, rng);
    Tensor x = Tensor::randn({1, 8000}, rng, 0.1);
    ConvStackDisc::Output base = d.forward(x);

    std::vector<double> dir = d.layers[2].direction.values();
    for (double& v : dir) v *= 7.5;
    d.layers[2].direction = Tensor::from_values(d.layers[2].direction.shape(), std::move(dir),
                                                true);
    ConvStackDisc::Output scaled = d.forward(x);
    for (size_t i = 0; i < base.score.values().size(); ++i)
        CHECK(scaled.score.values()[i] ==
              doctest::Approx(base.score.values()[i]).epsilon(1e-5));
}

TEST_CASE("ensemble forward is deterministic") {
    NoGradGuard quiet;
    const auto run = []() {
        std::mt19937_64 rng(8);
        DiscEnsemble e = make_disc_ensemble(DiscConfig::tiny(), default_bank(), rng);
        std::mt19937_64 data_rng(9);
        Tensor y = Tensor::randn({1, 8000}, data_rng, 0.1);
        std::vector<double> flat;
        for (const auto& o : e.forward(y))
            flat.insert(flat.end(), o.score.values().begin(), o.score.values().end());
        return flat;
    };
    CHECK(run() == run());
}

TEST_CASE("parameters are namespaced by discriminator index and layer") {
    std::mt19937_64 rng(10);
    DiscEnsemble e = make_disc_ensemble(DiscConfig::tiny(), default_bank(), rng);
    ParamRegistry reg;
    e.register_params(reg, "disc");
    CHECK(reg.contains("disc.k0.layer1.direction"));
    CHECK(reg.contains("disc.k0.layer7.magnitude"));
    CHECK(reg.contains("disc.k1.layer1.bias"));
    CHECK(reg.contains("disc.k3.layer8.direction"));
    CHECK_FALSE(reg.contains("disc.k0.layer8.direction"));
    CHECK_FALSE(reg.contains("disc.k4.layer1.direction"));
    // 7 + 3*8 layers, three tensors each (direction, magnitude, bias).
    CHECK(reg.size() == 93);

    // Toggling gradient tracking reaches every parameter.
    e.set_requires_grad(false);
    for (const auto& entry : reg.entries()) CHECK_FALSE(entry.second.requires_grad());
    e.set_requires_grad(true);
    for (const auto& entry : reg.entries()) CHECK(entry.second.requires_grad());
}
