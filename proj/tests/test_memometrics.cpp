// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "side/memometrics.hpp"
#include "side/rng.hpp"

using namespace side;

namespace {

// straightforward reference: exhaustive double loop, explicit tie handling
struct RefResult {
    std::vector<std::size_t> best;
    std::vector<double> score;
};

RefResult reference_matches(const Tensor& gen, const Tensor& train, const Scorer& sc) {
    RefResult r;
    for (std::size_t i = 0; i < gen.rows(); ++i) {
        std::size_t arg = 0;
        double best = -1e300;
        for (std::size_t j = 0; j < train.rows(); ++j) {
            double s = sc(gen.row(i), train.row(j));
            if (s > best) {
                best = s;
                arg = j;
            }
        }
        r.best.push_back(arg);
        r.score.push_back(best);
    }
    return r;
}

double reference_ams(const RefResult& r, double lo, double hi, bool closed) {
    std::size_t c = 0;
    for (double s : r.score)
        if (s >= lo && (closed ? s <= hi : s < hi)) ++c;
    return double(c) / double(r.score.size());
}

double reference_ums(const RefResult& r, double lo, double hi, bool closed) {
    std::set<std::size_t> idx;
    for (std::size_t i = 0; i < r.score.size(); ++i)
        if (r.score[i] >= lo && (closed ? r.score[i] <= hi : r.score[i] < hi))
            idx.insert(r.best[i]);
    return double(idx.size()) / double(r.score.size());
}

}  // namespace

TEST_CASE("cosine normalized scorer is the pearson correlation", "[memometrics]") {
    auto sc = Scorer::cosine_normalized();
    std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
    REQUIRE(sc(a, a) == Catch::Approx(1.0).epsilon(1e-12));

    std::vector<double> neg = {-1.0, -2.0, -3.0, -4.0};
    REQUIRE(sc(a, neg) == Catch::Approx(-1.0).epsilon(1e-12));

    // affine invariance: score(a, 2a + 3) = 1
    std::vector<double> aff(4);
    for (int i = 0; i < 4; ++i) aff[i] = 2.0 * a[i] + 3.0;
    REQUIRE(sc(a, aff) == Catch::Approx(1.0).epsilon(1e-12));

    // hand value: centered a = (-1.5,-.5,.5,1.5), b = (1,-1,-1,1) centered
    std::vector<double> b = {1.0, -1.0, -1.0, 1.0};
    double want = (-1.5 - 0.5 * -1.0) * 0.0;  // computed below instead
    double dot = -1.5 * 1.0 + -0.5 * -1.0 + 0.5 * -1.0 + 1.5 * 1.0;
    double na = std::sqrt(1.5 * 1.5 + 0.5 * 0.5 + 0.5 * 0.5 + 1.5 * 1.5);
    double nb = 2.0;
    want = dot / (na * nb);
    REQUIRE(sc(a, b) == Catch::Approx(want).epsilon(1e-12));

    // zero-variance vectors score zero rather than dividing by zero
    std::vector<double> flat = {2.0, 2.0, 2.0, 2.0};
    REQUIRE(sc(a, flat) == 0.0);
    REQUIRE(sc(flat, flat) == 0.0);
}

TEST_CASE("neg l2 mapped scorer", "[memometrics]") {
    auto sc = Scorer::neg_l2_mapped();
    std::vector<double> a = {0.5, -0.5}, b = {0.5, 0.5};
    REQUIRE(sc(a, a) == 1.0);
    REQUIRE(sc(a, b) == Catch::Approx(1.0 / 2.0).epsilon(1e-12));  // distance 1
    REQUIRE(sc(a, b) == sc(b, a));

    REQUIRE(Scorer::by_kind("cosine_normalized").kind == "cosine_normalized");
    REQUIRE(Scorer::by_kind("neg_l2_mapped").kind == "neg_l2_mapped");
    REQUIRE_THROWS_AS(Scorer::by_kind("manhattan"), ConfigError);

    auto plug = Scorer::plugin("always_half", [](auto, auto) { return 0.5; });
    REQUIRE(plug(a, b) == 0.5);
    REQUIRE(plug.kind == "always_half");
}

TEST_CASE("tier boundaries", "[memometrics]") {
    auto tiers = standard_tiers();
    REQUIRE(tiers.size() == 3);
    REQUIRE(tiers[0].name == "low");
    REQUIRE(tiers[1].name == "mid");
    REQUIRE(tiers[2].name == "high");

    // [0.4, 0.5), [0.5, 0.6), [0.6, 1.0]
    REQUIRE(tiers[0].contains(0.4));
    REQUIRE_FALSE(tiers[0].contains(0.5));
    REQUIRE(tiers[1].contains(0.5));
    REQUIRE_FALSE(tiers[1].contains(0.6));
    REQUIRE(tiers[2].contains(0.6));
    REQUIRE(tiers[2].contains(1.0));
    REQUIRE_FALSE(tiers[0].contains(0.399999));

    // every score in [0.4, 1] lands in exactly one tier
    for (double s = 0.40; s <= 1.0; s += 0.01) {
        int hits = 0;
        for (const auto& t : tiers) hits += t.contains(s) ? 1 : 0;
        REQUIRE(hits == 1);
    }

    SimilarityTier bad;
    bad.alpha = 0.7;
    bad.beta = 0.6;
    REQUIRE_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("best match hand case with ties", "[memometrics]") {
    // train rows 0 and 2 are identical: ties resolve to the lowest index
    Tensor train({3, 2});
    train.at(0, 0) = 1.0;
    train.at(0, 1) = 0.0;
    train.at(1, 0) = 0.0;
    train.at(1, 1) = 1.0;
    train.at(2, 0) = 1.0;
    train.at(2, 1) = 0.0;
    Tensor gen({2, 2});
    gen.at(0, 0) = 0.9;
    gen.at(0, 1) = 0.1;
    gen.at(1, 0) = 0.1;
    gen.at(1, 1) = 0.9;

    auto recs = best_matches(gen, train, Scorer::neg_l2_mapped());
    REQUIRE(recs.size() == 2);
    REQUIRE(recs[0].gen_index == 0);
    REQUIRE(recs[0].train_index == 0);  // not 2, despite the equal score
    REQUIRE(recs[1].train_index == 1);
    double want = 1.0 / (1.0 + std::sqrt(0.01 + 0.01));
    REQUIRE(recs[0].score == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("ams and ums hand example", "[memometrics]") {
    // six generated samples, best scores and indices chosen by hand
    std::vector<MatchRecord> recs = {
        {0, 4, 0.45},   // low tier
        {1, 4, 0.55},   // mid tier
        {2, 9, 0.58},   // mid tier
        {3, 4, 0.58},   // mid tier, repeats train 4
        {4, 2, 0.95},   // high tier
        {5, 0, 0.20},   // below every tier
    };
    auto tiers = standard_tiers();
    REQUIRE(ams(recs, tiers[0], 6) == Catch::Approx(1.0 / 6).epsilon(1e-12));
    REQUIRE(ams(recs, tiers[1], 6) == Catch::Approx(3.0 / 6).epsilon(1e-12));
    REQUIRE(ams(recs, tiers[2], 6) == Catch::Approx(1.0 / 6).epsilon(1e-12));
    // mid tier touches train indices {4, 9}: two unique of six generated
    REQUIRE(ums(recs, tiers[1], 6) == Catch::Approx(2.0 / 6).epsilon(1e-12));
    REQUIRE(ums(recs, tiers[0], 6) == Catch::Approx(1.0 / 6).epsilon(1e-12));

    auto rep = make_report(2.5, recs, tiers);
    REQUIRE(rep.lambda == 2.5);
    REQUIRE(rep.n_g == 6);
    REQUIRE(rep.tiers.size() == 3);
    REQUIRE(tier_of(rep, "mid").ams == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(tier_of(rep, "mid").in_tier == 3);
    REQUIRE_THROWS_AS(tier_of(rep, "ultra"), ConfigError);
}

TEST_CASE("library matches a brute force reference on random instances", "[memometrics]") {
    Rng rng(404);
    auto tiers = standard_tiers();
    for (int inst = 0; inst < 15; ++inst) {
        const std::size_t ng = 1 + std::size_t(rng.uniform_int(1, 60));
        const std::size_t nt = 1 + std::size_t(rng.uniform_int(1, 60));
        const std::size_t d = 2 + std::size_t(rng.uniform_int(0, 6));
        Tensor gen({ng, d}), train({nt, d});
        rng.normal_fill(gen.flat());
        rng.normal_fill(train.flat());
        // inject duplicates to force score ties
        if (nt >= 2 && ng >= 2) {
            std::copy(train.row(0).begin(), train.row(0).end(), train.row(nt - 1).begin());
            std::copy(train.row(0).begin(), train.row(0).end(), gen.row(ng - 1).begin());
        }

        for (const auto& sc : {Scorer::cosine_normalized(), Scorer::neg_l2_mapped()}) {
            auto recs = best_matches(gen, train, sc, 3);
            auto ref = reference_matches(gen, train, sc);
            for (std::size_t i = 0; i < ng; ++i) {
                REQUIRE(recs[i].train_index == ref.best[i]);
                REQUIRE(recs[i].score == ref.score[i]);
            }
            for (const auto& t : tiers) {
                REQUIRE(ams(recs, t, ng) ==
                        Catch::Approx(reference_ams(ref, t.alpha, t.beta, t.closed_top))
                            .margin(1e-15));
                REQUIRE(ums(recs, t, ng) ==
                        Catch::Approx(reference_ums(ref, t.alpha, t.beta, t.closed_top))
                            .margin(1e-15));
                REQUIRE(ums(recs, t, ng) <= ams(recs, t, ng) + 1e-15);
            }
        }
    }
}

TEST_CASE("expected counts closed forms", "[memometrics]") {
    // single certain match: every sample memorizes image 0, one unique image
    std::vector<double> certain = {1.0};
    REQUIRE(expected_mem_count(certain, 100) == 100.0);
    REQUIRE(expected_unique_mem_count(certain, 100) == Catch::Approx(1.0).epsilon(1e-12));

    // two images, one never matched
    std::vector<double> p = {0.0, 0.5};
    REQUIRE(expected_mem_count(p, 2) == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(expected_unique_mem_count(p, 2) == Catch::Approx(0.75).epsilon(1e-12));

    // the unique count is bounded by both M and the raw count
    std::vector<double> q = {0.3, 0.2, 0.1};
    for (std::size_t ng : {1ul, 10ul, 1000ul}) {
        double mem = expected_mem_count(q, ng);
        double umem = expected_unique_mem_count(q, ng);
        REQUIRE(umem <= 3.0 + 1e-12);
        REQUIRE(umem <= mem + 1e-12);
    }
    // monotone in n_g
    REQUIRE(expected_unique_mem_count(q, 20) > expected_unique_mem_count(q, 10));

    std::vector<double> bad = {1.5};
    REQUIRE_THROWS_AS(expected_mem_count(bad, 1), ShapeError);
    REQUIRE_THROWS_AS(expected_unique_mem_count(bad, 1), ShapeError);
}

TEST_CASE("expected counts match a categorical simulation", "[memometrics]") {
    // one generated sample matches image i with probability p_i, at most one
    // image per sample; simulate and compare both formulas
    std::vector<double> p = {0.05, 0.02, 0.08, 0.01};
    const std::size_t n_g = 50;
    const int trials = 20000;
    Rng rng(777);
    double mem_acc = 0.0, umem_acc = 0.0, mem_sq = 0.0, umem_sq = 0.0;
    for (int tr = 0; tr < trials; ++tr) {
        std::size_t nmem = 0;
        std::set<std::size_t> seen;
        for (std::size_t g = 0; g < n_g; ++g) {
            double u = rng.uniform();
            double acc = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                acc += p[i];
                if (u < acc) {
                    ++nmem;
                    seen.insert(i);
                    break;
                }
            }
        }
        mem_acc += double(nmem);
        mem_sq += double(nmem) * double(nmem);
        umem_acc += double(seen.size());
        umem_sq += double(seen.size()) * double(seen.size());
    }
    double mem_mean = mem_acc / trials;
    double umem_mean = umem_acc / trials;
    double mem_se = std::sqrt((mem_sq / trials - mem_mean * mem_mean) / trials);
    double umem_se = std::sqrt((umem_sq / trials - umem_mean * umem_mean) / trials);

    REQUIRE(std::abs(mem_mean - expected_mem_count(p, n_g)) < 3.5 * mem_se);
    REQUIRE(std::abs(umem_mean - expected_unique_mem_count(p, n_g)) < 3.5 * umem_se);
}

TEST_CASE("csv serialization is stable", "[memometrics]") {
    std::vector<MatchRecord> recs = {{0, 3, 0.51}, {1, 3, 0.77}};
    auto tiers = standard_tiers();
    auto rep = make_report(1.0, recs, tiers);
    auto csv = report_csv({rep});
    REQUIRE(csv.rfind("lambda,tier,ams,ums,in_tier_count,n_g\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 tiers

    auto mcsv = match_csv(rep);
    REQUIRE(mcsv.rfind("gen_index,train_index,score\n", 0) == 0);
    REQUIRE(std::count(mcsv.begin(), mcsv.end(), '\n') == 3);

    // byte-for-byte reproducible
    REQUIRE(report_csv({rep}) == csv);
    REQUIRE(match_csv(rep) == mcsv);
}
