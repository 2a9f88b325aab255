// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "side/parallel.hpp"
#include "side/tensor.hpp"

namespace side {

/// Similarity score on a pair of vectors; the desk-scale stand-in for a
/// learned copy-detection descriptor, pluggable so a better scorer can drop
/// in behind the same reports.
struct Scorer {
    std::string kind;
    std::function<double(std::span<const double>, std::span<const double>)> fn;

    double operator()(std::span<const double> a, std::span<const double> b) const {
        return fn(a, b);
    }

    /// Cosine of per-sample standardized vectors (subtract mean, divide by
    /// population std), i.e. the Pearson correlation of the two vectors.
    static Scorer cosine_normalized() {
        return {"cosine_normalized", [](std::span<const double> a, std::span<const double> b) {
                    check(a.size() == b.size(), "scorer: dimension mismatch");
                    const std::size_t d = a.size();
                    double ma = 0.0, mb = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        ma += a[i];
                        mb += b[i];
                    }
                    ma /= double(d);
                    mb /= double(d);
                    double dot = 0.0, na = 0.0, nb = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double ca = a[i] - ma, cb = b[i] - mb;
                        dot += ca * cb;
                        na += ca * ca;
                        nb += cb * cb;
                    }
                    if (na == 0.0 || nb == 0.0) return 0.0;
                    return dot / std::sqrt(na * nb);
                }};
    }

    /// 1 / (1 + ||a - b||): symmetric, s(a,a) = 1, range (0, 1].
    static Scorer neg_l2_mapped() {
        return {"neg_l2_mapped", [](std::span<const double> a, std::span<const double> b) {
                    check(a.size() == b.size(), "scorer: dimension mismatch");
                    double s = 0.0;
                    for (std::size_t i = 0; i < a.size(); ++i) {
                        const double diff = a[i] - b[i];
                        s += diff * diff;
                    }
                    return 1.0 / (1.0 + std::sqrt(s));
                }};
    }

    static Scorer plugin(std::string name,
                         std::function<double(std::span<const double>, std::span<const double>)> f) {
        return {std::move(name), std::move(f)};
    }

    static Scorer by_kind(const std::string& kind) {
        if (kind == "cosine_normalized") return cosine_normalized();
        if (kind == "neg_l2_mapped") return neg_l2_mapped();
        throw ConfigError("scorer: unknown kind '" + kind + "'");
    }
};

struct SimilarityTier {
    double alpha = 0.0;
    double beta = 1.0;
    std::string name;
    bool closed_top = false;  // top tier includes its upper bound

    bool contains(double s) const {
        return s >= alpha && (closed_top ? s <= beta : s < beta);
    }

    void validate() const {
        check(alpha >= 0.0 && alpha < beta && beta <= 1.0, "tier: need 0 <= alpha < beta <= 1");
    }
};

/// The standard contiguous tiers: [0.4,0.5), [0.5,0.6), [0.6,1.0].
inline std::vector<SimilarityTier> standard_tiers(double a = 0.4, double b = 0.5, double c = 0.6) {
    check(0.0 <= a && a < b && b < c && c < 1.0, "tiers: thresholds must be increasing in [0,1)");
    return {{a, b, "low", false}, {b, c, "mid", false}, {c, 1.0, "high", true}};
}

struct MatchRecord {
    std::size_t gen_index = 0;
    std::size_t train_index = 0;
    double score = 0.0;
};

/// Exact best match per generated sample over the full training set; ties go
/// to the lowest training index so reports are deterministic.
inline std::vector<MatchRecord> best_matches(const Tensor& gen, const Tensor& train,
                                             const Scorer& scorer, int threads = 1) {
    check(gen.rank() == 2 && train.rank() == 2, "best_matches: rank-2 inputs required");
    check(gen.rows() >= 1 && train.rows() >= 1, "best_matches: empty input");
    check(gen.cols() == train.cols(), "best_matches: dimension mismatch");
    std::vector<MatchRecord> records(gen.rows());
    parallel_for(gen.rows(), threads, [&](std::size_t i) {
        MatchRecord rec;
        rec.gen_index = i;
        rec.train_index = 0;
        rec.score = scorer(gen.row(i), train.row(0));
        for (std::size_t j = 1; j < train.rows(); ++j) {
            const double s = scorer(gen.row(i), train.row(j));
            if (s > rec.score) {
                rec.score = s;
                rec.train_index = j;
            }
        }
        records[i] = rec;
    });
    return records;
}

/// Fraction of generated samples whose best score lands in the tier.
inline double ams(const std::vector<MatchRecord>& records, const SimilarityTier& tier,
                  std::size_t n_g) {
    check(n_g >= 1, "ams: N_G must be >= 1");
    check(records.size() == n_g, "ams: record count must equal N_G");
    std::size_t c = 0;
    for (const auto& r : records)
        if (tier.contains(r.score)) ++c;
    return double(c) / double(n_g);
}

/// Distinct in-tier best-match training indices over N_G.
inline double ums(const std::vector<MatchRecord>& records, const SimilarityTier& tier,
                  std::size_t n_g) {
    check(n_g >= 1, "ums: N_G must be >= 1");
    check(records.size() == n_g, "ums: record count must equal N_G");
    std::set<std::size_t> distinct;
    for (const auto& r : records)
        if (tier.contains(r.score)) distinct.insert(r.train_index);
    return double(distinct.size()) / double(n_g);
}

/// Expected number of memorized generations: N_G * sum_i p_i.
inline double expected_mem_count(std::span<const double> p, std::size_t n_g) {
    double s = 0.0;
    for (double v : p) {
        check(v >= 0.0 && v <= 1.0, "expected_mem_count: probability out of [0,1]");
        s += v;
    }
    return double(n_g) * s;
}

/// Expected number of distinct training images memorized at least once:
///   sum_i [ 1 - (1 - p_i)^{N_G} ].
inline double expected_unique_mem_count(std::span<const double> p, std::size_t n_g) {
    double s = 0.0;
    for (double v : p) {
        check(v >= 0.0 && v <= 1.0, "expected_unique_mem_count: probability out of [0,1]");
        s += 1.0 - std::pow(1.0 - v, double(n_g));
    }
    return s;
}

struct TierReport {
    std::string name;
    double alpha = 0.0, beta = 0.0;
    double ams = 0.0, ums = 0.0;
    std::size_t in_tier = 0;
};

struct MemorizationReport {
    double lambda = 0.0;
    std::size_t n_g = 0;
    std::vector<TierReport> tiers;
    std::vector<MatchRecord> records;
};

inline MemorizationReport make_report(double lambda, const std::vector<MatchRecord>& records,
                                      const std::vector<SimilarityTier>& tiers) {
    MemorizationReport rep;
    rep.lambda = lambda;
    rep.n_g = records.size();
    rep.records = records;
    for (const auto& t : tiers) {
        t.validate();
        TierReport tr;
        tr.name = t.name;
        tr.alpha = t.alpha;
        tr.beta = t.beta;
        tr.ams = ams(records, t, rep.n_g);
        tr.ums = ums(records, t, rep.n_g);
        for (const auto& r : records)
            if (t.contains(r.score)) ++tr.in_tier;
        rep.tiers.push_back(std::move(tr));
    }
    return rep;
}

inline const TierReport& tier_of(const MemorizationReport& rep, const std::string& name) {
    for (const auto& t : rep.tiers)
        if (t.name == name) return t;
    throw ConfigError("report: no tier named '" + name + "'");
}

// --- CSV emission (column set is a stable interface) -------------------------

inline std::string csv_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string report_csv(const std::vector<MemorizationReport>& reports) {
    std::ostringstream os;
    os << "lambda,tier,ams,ums,in_tier_count,n_g\n";
    for (const auto& rep : reports)
        for (const auto& t : rep.tiers)
            os << csv_double(rep.lambda) << ',' << t.name << ',' << csv_double(t.ams) << ','
               << csv_double(t.ums) << ',' << t.in_tier << ',' << rep.n_g << '\n';
    return os.str();
}

inline std::string match_csv(const MemorizationReport& rep) {
    std::ostringstream os;
    os << "gen_index,train_index,score\n";
    for (const auto& r : rep.records)
        os << r.gen_index << ',' << r.train_index << ',' << csv_double(r.score) << '\n';
    return os.str();
}

}  // namespace side
