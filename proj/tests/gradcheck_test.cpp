#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "semd/gradcheck.hpp"

using namespace semd;

TEST_CASE("the finite-difference suite passes on every op") {
    GradCheckOptions opt;
    opt.seed = 1;
    opt.instances = 20;
    const auto results = run_gradcheck(opt);

    REQUIRE(results.size() >= 9);
    std::set<std::string> names;
    for (const GradCheckResult& r : results) {
        INFO(r.op << " max_rel_err=" << r.max_rel_err);
        CHECK(r.pass);
        CHECK(r.max_rel_err < 1e-4);
        CHECK(r.instances == 20);
        names.insert(r.op);
    }
    CHECK(gradcheck_passed(results));

    // the documented inventory: three conv roles, BN, ELU, pool, dense,
    // softmax-xent, and both SE layers
    for (const char* op :
         {"conv2d-temporal", "conv2d-spatial-depthwise", "conv2d-pointwise", "batch-norm", "elu",
          "avg-pool-time", "dropout", "dense", "softmax-xent", "electrode-se", "featuremap-se"})
        CHECK(names.count(op) == 1);
}

TEST_CASE("the suite is deterministic in the seed") {
    GradCheckOptions opt;
    opt.instances = 3;
    const auto a = run_gradcheck(opt);
    const auto b = run_gradcheck(opt);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].op == b[i].op);
        CHECK(a[i].max_rel_err == b[i].max_rel_err);
    }
    GradCheckOptions other = opt;
    other.seed = 2;
    const auto c = run_gradcheck(other);
    bool any_differs = false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].max_rel_err != c[i].max_rel_err) any_differs = true;
    CHECK(any_differs);
}

TEST_CASE("a corrupted analytic gradient is flagged for exactly that op") {
    for (const char* victim : {"dense", "electrode-se", "conv2d-temporal"}) {
        GradCheckOptions opt;
        opt.instances = 2;
        opt.perturb_op = victim;
        const auto results = run_gradcheck(opt);
        CHECK_FALSE(gradcheck_passed(results));
        for (const GradCheckResult& r : results) {
            INFO(r.op);
            if (r.op == victim)
                CHECK_FALSE(r.pass);
            else
                CHECK(r.pass);
        }
    }
    GradCheckOptions bad;
    bad.perturb_op = "no-such-op";
    CHECK_THROWS_WITH(run_gradcheck(bad), Catch::Matchers::ContainsSubstring("no-such-op"));
}

TEST_CASE("gradcheck options are validated") {
    GradCheckOptions opt;
    opt.instances = 0;
    CHECK_THROWS(run_gradcheck(opt));
    GradCheckOptions opt2;
    opt2.tol = 0;
    CHECK_THROWS(run_gradcheck(opt2));
}
