#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "dbmif/gradcheck.hpp"

using namespace dbmif;

TEST_CASE("a smooth closure passes with a tight margin") {
    std::mt19937_64 rng(3);
    Tensor a = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({2, 3}, rng);
    GradCheckResult r = check_gradients(
        "smooth", [](const std::vector<Tensor>& p) { return sum(mul(tanh(p[0]), sigmoid(p[1]))); },
        {a, b});
    CHECK(r.pass);
    CHECK(r.checked == 12);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("a probe point on an activation corner is flagged") {
    // The analytic convention at the corner (slope 1) cannot match the
    // symmetric secant (slope 1/2), so the checker must report a failure.
    Tensor x = Tensor::from_values({3}, {0.0, 1.0, -1.0});
    GradCheckResult r = check_gradients(
        "corner", [](const std::vector<Tensor>& p) { return sum(relu(p[0])); }, {x});
    CHECK_FALSE(r.pass);
    CHECK(r.max_rel_err > 0.1);
}

TEST_CASE("non-scalar losses and bad seed counts are rejected") {
    Tensor x = Tensor::from_values({2}, {1.0, 2.0});
    CHECK_THROWS_AS(check_gradients(
                        "vector", [](const std::vector<Tensor>& p) { return mul(p[0], p[0]); }, {x}),
                    precondition_error);
    CHECK_THROWS_AS(run_gradient_suite(0), precondition_error);
}

TEST_CASE("the one-seed battery passes end to end") {
    std::vector<GradCheckResult> results = run_gradient_suite(1);
    REQUIRE(!results.empty());
    std::vector<std::string> expected = {"add/s0",        "conv1d_grouped/s0", "pqmf_analyze/s0",
                                         "cross_gate/s0", "iterative_fusion/s0",
                                         "equilibrium_core/s0", "wav_stack_toy/s0",
                                         "sub_stack_toy/s0",    "disc_loss/s0",
                                         "feature_matching_loss/s0"};
    for (const std::string& name : expected) {
        bool found = false;
        for (const GradCheckResult& r : results)
            if (r.name == name) found = true;
        CHECK_MESSAGE(found, "missing suite entry ", name);
    }
    for (const GradCheckResult& r : results) {
        CHECK_MESSAGE(r.pass, r.name, " rel err ", r.max_rel_err);
        CHECK(r.checked > 0);
    }
}
