#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "dbmif/common.hpp"
#include "dbmif/metrics.hpp"

using namespace dbmif;

TEST_CASE("si_sdr saturates on perfect and rescaled estimates") {
    std::vector<double> ref = {0.5, -0.25, 1.0, 0.125};
    CHECK(si_sdr(ref, ref) == 120.0);
    std::vector<double> scaled(ref);
    for (double& v : scaled) v *= 3.0;
    CHECK(si_sdr(ref, scaled) == 120.0);
}

TEST_CASE("si_sdr of an orthogonal estimate hits the lower cap") {
    // Estimate carries no component along the reference.
    CHECK(si_sdr({1.0, 0.0}, {0.0, 1.0}) == -120.0);
    CHECK(si_sdr({1.0, 0.0, -1.0}, {0.0, 0.0, 0.0}) == -120.0);
}

TEST_CASE("si_sdr hand example: equal target and residual power") {
    CHECK(si_sdr({1.0, 0.0}, {1.0, 1.0}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("si_sdr validates its inputs") {
    CHECK_THROWS_AS(si_sdr({}, {}), precondition_error);
    CHECK_THROWS_AS(si_sdr({1.0, 2.0}, {1.0}), precondition_error);
    CHECK_THROWS_AS(si_sdr({0.0, 0.0}, {1.0, 1.0}), precondition_error);
}

TEST_CASE("si_sdr is invariant to positive scaling of the estimate") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    std::vector<double> ref(512), est(512);
    for (size_t i = 0; i < ref.size(); ++i) {
        ref[i] = g(rng);
        est[i] = ref[i] + 0.3 * g(rng);
    }
    const double base = si_sdr(ref, est);
    for (double c : {0.001, 0.5, 7.0, 3000.0}) {
        std::vector<double> scaled(est);
        for (double& v : scaled) v *= c;
        CHECK(std::abs(si_sdr(ref, scaled) - base) < 1e-9);
    }
}

TEST_CASE("si_sdr reads 10 dB against orthogonal noise at a tenth of the power") {
    // Build noise orthogonal to the reference by Gram-Schmidt, then size it
    // to one tenth of the reference power.
    std::mt19937_64 rng(13);
    std::normal_distribution<double> g;
    std::vector<double> ref(1024), noise(1024);
    for (size_t i = 0; i < ref.size(); ++i) {
        ref[i] = g(rng);
        noise[i] = g(rng);
    }
    double dot = 0.0, ref_pow = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        dot += noise[i] * ref[i];
        ref_pow += ref[i] * ref[i];
    }
    double noise_pow = 0.0;
    for (size_t i = 0; i < ref.size(); ++i) {
        noise[i] -= dot / ref_pow * ref[i];
        noise_pow += noise[i] * noise[i];
    }
    const double gain = std::sqrt(ref_pow / (10.0 * noise_pow));
    std::vector<double> est(ref);
    for (size_t i = 0; i < est.size(); ++i) est[i] += gain * noise[i];
    CHECK(si_sdr(ref, est) == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("dbi summary computes exact order statistics") {
    DbiSummary s = summarize_dbi({5, 5, 7});
    CHECK(s.median_kstar == 5.0);
    CHECK(s.mean_kstar == doctest::Approx(17.0 / 3.0).epsilon(1e-12));
    CHECK(s.histogram.at(5) == 2);
    CHECK(s.histogram.at(7) == 1);

    // Even count takes the midpoint of the central pair.
    DbiSummary e = summarize_dbi({2, 8, 4, 6});
    CHECK(e.median_kstar == 5.0);
    CHECK(e.mean_kstar == 5.0);

    DbiSummary flat = summarize_dbi({3, 3, 3, 3});
    CHECK(flat.median_kstar == 3.0);
    CHECK(flat.mean_kstar == 3.0);
    CHECK(flat.histogram.size() == 1);

    CHECK_THROWS_AS(summarize_dbi({}), precondition_error);
}
