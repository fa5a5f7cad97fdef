// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include "folio/autodiff.hpp"
#include "folio/backtest.hpp"
#include "folio/data.hpp"
#include "folio/error.hpp"
#include "folio/layers.hpp"
#include "folio/objectives.hpp"
#include "folio/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

using namespace folio;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const char* name, bool ok, double elapsed, const std::string& detail) {
    std::printf("[%s] criterion %d %s (%.1fs): %s\n", ok ? "PASS" : "FAIL", id, name, elapsed,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) {
        ++failures;
    }
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// Distinct scores with pairwise gaps of at least `gap` and magnitudes >= gap.
std::vector<double> spaced_scores(Rng& rng, std::size_t n, double gap = 0.05) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double k = static_cast<double>(i) - static_cast<double>(n) / 2.0 + 0.5;
        s[i] = k * 4.0 / static_cast<double>(n) + rng.uniform(0.0, 0.2 * gap);
        if (std::abs(s[i]) < gap) {
            s[i] = s[i] < 0 ? -gap : gap;
        }
    }
    rng.shuffle(s);
    return s;
}

std::vector<double> normal_vector(Rng& rng, std::size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) {
        x = scale * rng.normal();
    }
    return v;
}

// ---------------------------------------------------------------- criterion 1

struct LayerCase {
    std::string name;
    std::function<Var(const Var&)> layer;
    bool rank_based;  // has hard selection that can switch under perturbation
};

std::vector<LayerCase> layer_cases(std::size_t n) {
    layers::LayerOptions train;
    train.mode = layers::Mode::train;
    const bool small = n <= 5;
    const int k = small ? 2 : 10;
    ConstraintSpec combined;
    combined.cardinality = k;
    combined.leverage = small ? 1.0 : 1.5;
    combined.max_position = small ? 0.3 : 0.15;
    const double cap = small ? 0.3 : 0.05;
    return {
        {"signed_simplex", [](const Var& s) { return layers::signed_simplex(s); }, false},
        {"long_only_softmax", [](const Var& s) { return layers::long_only_softmax(s); }, false},
        {"max_position", [cap](const Var& s) { return layers::max_position(s, cap); }, false},
        {"neural_sort",
         [n](const Var& s) { return ad::reshape(layers::neural_sort(s, 1.0), {n * n}); }, false},
        {"cardinality", [k, train](const Var& s) { return layers::cardinality(s, k, train); },
         true},
        {"leverage", [](const Var& s) { return layers::leverage(s, 2.0); }, false},
        {"combined", [combined, train](const Var& s) { return layers::combined(s, combined, train); },
         true},
    };
}

std::vector<double> support_of(const LayerCase& c, const std::vector<double>& s) {
    Tape t;
    const auto w = c.layer(t.constant(Tensor::vector(s))).value().values();
    std::vector<double> mask(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        mask[i] = w[i] > 0 ? 1.0 : (w[i] < 0 ? -1.0 : 0.0);
    }
    return mask;
}

// A point is away from the selection discontinuities when no single-coordinate
// perturbation of the finite-difference stencil changes the selected set.
bool stable_selection(const LayerCase& c, std::vector<double> s, double eps) {
    const auto base = support_of(c, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (double d : {-eps, eps}) {
            const double keep = s[i];
            s[i] = keep + d;
            const bool same = support_of(c, s) == base;
            s[i] = keep;
            if (!same) {
                return false;
            }
        }
    }
    return true;
}

void criterion_1() {
    const auto t0 = Clock::now();
    const double eps = 1e-5;
    const double tol = 1e-4;
    const int points = 100;
    Rng rng(101);
    double worst = 0.0;
    std::string worst_name;
    bool ok = true;
    for (std::size_t n : {std::size_t{5}, std::size_t{50}}) {
        for (const LayerCase& c : layer_cases(n)) {
            const std::size_t out = c.name == "neural_sort" ? n * n : n;
            for (int p = 0; p < points; ++p) {
                std::vector<double> s;
                do {
                    s = spaced_scores(rng, n);
                } while (c.rank_based && !stable_selection(c, s, eps));
                const auto weights = normal_vector(rng, out);
                auto f = [&](Tape& t, const Var& x) {
                    return ad::dot(c.layer(x), t.constant(Tensor::vector(weights)));
                };
                const double err = ad::grad_check(f, Tensor::vector(s), {eps, true});
                if (!(err < tol)) {
                    ok = false;
                }
                if (err > worst) {
                    worst = err;
                    worst_name = c.name + "/N=" + std::to_string(n);
                }
            }
        }
        // Objectives, differentiated through the signed simplex with respect to
        // a batch of score vectors.
        const std::size_t batch = 8;
        const std::pair<const char*, ObjectiveSpec> objectives[] = {
            {"mvp(0)", ObjectiveSpec::mvp(0.0)},
            {"mvp(10)", ObjectiveSpec::mvp(10.0)},
            {"gmvp", ObjectiveSpec::gmvp()},
            {"msrp", ObjectiveSpec::msrp()},
        };
        for (const auto& [name, spec] : objectives) {
            for (int p = 0; p < points; ++p) {
                Eigen::MatrixXd r(batch, n);
                for (Eigen::Index i = 0; i < r.size(); ++i) {
                    r.data()[i] = 0.001 + 0.02 * rng.normal();
                }
                std::vector<double> flat;
                for (std::size_t b = 0; b < batch; ++b) {
                    const auto s = spaced_scores(rng, n);
                    flat.insert(flat.end(), s.begin(), s.end());
                }
                auto f = [&, spec = spec](Tape&, const Var& x) {
                    std::vector<Var> w;
                    for (std::size_t b = 0; b < batch; ++b) {
                        w.push_back(layers::signed_simplex(ad::slice(x, b * n, n)));
                    }
                    return objectives::evaluate(spec, objectives::realized_returns(w, r));
                };
                const double err = ad::grad_check(f, Tensor::vector(flat), {eps, true});
                if (!(err < tol)) {
                    ok = false;
                }
                if (err > worst) {
                    worst = err;
                    worst_name = std::string(name) + "/N=" + std::to_string(n);
                }
            }
        }
    }
    const double elapsed = seconds_since(t0);
    report(1, "gradient correctness", ok && elapsed < 120.0, elapsed,
           "7 layers + 4 objectives, N in {5,50}, 100 points each; max rel err " +
               fmt("%.2e", worst) + " (" + worst_name + "), tol 1e-4");
}

// ---------------------------------------------------------------- criterion 2

void criterion_2() {
    const auto t0 = Clock::now();
    const std::size_t n = 20;
    struct Case {
        const char* name;
        ConstraintSpec spec;
    };
    auto make = [](bool long_only, std::optional<double> u, std::optional<int> k, double l) {
        ConstraintSpec s;
        s.long_only = long_only;
        s.short_allowed = !long_only;
        s.max_position = u;
        s.cardinality = k;
        s.leverage = l;
        return s;
    };
    const Case cases[] = {
        {"signed_simplex", make(false, {}, {}, 1.0)},
        {"long_only_softmax", make(true, {}, {}, 1.0)},
        {"max_position", make(false, 0.1, {}, 1.0)},
        {"leverage", make(false, {}, {}, 3.0)},
        {"cardinality", make(false, {}, 6, 1.0)},
        {"combined", make(false, 0.3, 6, 2.0)},
        {"long_only_combined", make(true, 0.2, 8, 1.0)},
    };
    Rng rng(202);
    double worst_budget = 0.0;
    double worst_cap = 0.0;
    int support_misses = 0;
    int negative = 0;
    for (const Case& c : cases) {
        for (int rep = 0; rep < 1000; ++rep) {
            const auto s = normal_vector(rng, n, 2.0);
            const WeightVector w = layers::apply_weights(s, c.spec);
            worst_budget = std::max(worst_budget, std::abs(w.gross() - c.spec.leverage));
            if (c.spec.max_position) {
                for (double x : w.weights) {
                    worst_cap = std::max(worst_cap, std::abs(x) - *c.spec.max_position);
                }
            }
            if (c.spec.cardinality) {
                const std::size_t expected = c.spec.long_only
                                                 ? static_cast<std::size_t>(*c.spec.cardinality)
                                                 : 2 * static_cast<std::size_t>(c.spec.per_side());
                support_misses += w.support() != expected;
            }
            if (c.spec.long_only) {
                negative += std::any_of(w.weights.begin(), w.weights.end(),
                                        [](double x) { return x < 0.0; });
            }
        }
    }
    const double elapsed = seconds_since(t0);
    const bool ok = worst_budget <= 1e-8 && worst_cap <= 1e-8 && support_misses == 0 &&
                    negative == 0 && elapsed < 60.0;
    report(2, "constraint satisfaction", ok, elapsed,
           "7 layers x 1000 vectors, N=20; max budget error " + fmt("%.1e", worst_budget) +
               ", max cap excess " + fmt("%.1e", std::max(0.0, worst_cap)) +
               ", support misses " + std::to_string(support_misses) + ", long-only negatives " +
               std::to_string(negative));
}

// ---------------------------------------------------------------- criterion 3

void criterion_3() {
    const auto t0 = Clock::now();
    Rng rng(303);
    int hard_mismatch = 0;
    std::size_t rows = 0;
    std::size_t agree = 0;
    for (std::size_t n : {std::size_t{3}, std::size_t{20}, std::size_t{100}}) {
        for (int rep = 0; rep < 1000; ++rep) {
            const auto s = normal_vector(rng, n);
            std::vector<double> sorted = s;
            std::sort(sorted.begin(), sorted.end(), std::greater<>());
            const Tensor p = layers::hard_sort_permutation(s);
            bool match = true;
            for (std::size_t i = 0; i < n; ++i) {
                double v = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    v += p.at(i, j) * s[j];
                }
                match = match && v == sorted[i];
            }
            hard_mismatch += !match;

            const auto order = layers::descending_order(s);
            Tape t;
            const Tensor relaxed = layers::neural_sort(t.constant(Tensor::vector(s)), 1e-3).value();
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t arg = 0;
                for (std::size_t j = 1; j < n; ++j) {
                    if (relaxed.at(i, j) > relaxed.at(i, arg)) {
                        arg = j;
                    }
                }
                agree += arg == order[i];
                ++rows;
            }
        }
    }
    const double rate = static_cast<double>(agree) / static_cast<double>(rows);
    const double elapsed = seconds_since(t0);
    report(3, "sorting oracle", hard_mismatch == 0 && rate >= 0.99 && elapsed < 60.0, elapsed,
           "hard sort mismatches " + std::to_string(hard_mismatch) +
               "/3000; NeuralSort(tau=1e-3) row-argmax agreement " + fmt("%.4f", rate) +
               " over " + std::to_string(rows) + " rows");
}

// ------------------------------------------------------- criteria 4, 5 and 8

struct SyntheticMarket {
    ReturnsPanel panel;
    OracleSchedule oracle;
};

// 10 assets, 2000 business days from one MVN regime with seeded moments.
SyntheticMarket synthetic_market(std::uint64_t seed) {
    const std::size_t n = 10;
    Rng rng(1000 + seed);
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        a.data()[i] = 0.01 * rng.normal() / std::sqrt(static_cast<double>(n));
    }
    Eigen::VectorXd mu(n);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        mu[i] = 5e-4 * rng.normal();
    }
    const Eigen::MatrixXd sigma = a * a.transpose() + 1e-4 * Eigen::MatrixXd::Identity(n, n);
    SyntheticMarket m;
    m.panel = simulate_mvn({mu, sigma, "synthetic"}, 2000, seed);
    m.oracle.constant = oracle_weights(mu, sigma);
    return m;
}

double variance_of(const std::vector<double>& x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) {
        s += (v - m) * (v - m);
    }
    return s / static_cast<double>(x.size());
}

Strategy full_panel_linear(ObjectiveSpec objective) {
    Strategy s;
    s.model.kind = ModelKind::linear;
    s.model.sharing = ParameterSharing::full_panel;
    s.model.lags = 50;
    s.objective = objective;
    return s;  // default constraints: signed simplex
}

void criteria_4_and_8() {
    const auto t0 = Clock::now();
    int wins = 0;
    int improved = 0;
    bool finite = true;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SyntheticMarket m = synthetic_market(seed);
        const auto splits = walk_forward(m.panel, 2004);
        TrainConfig cfg;
        cfg.learning_rate = 1e-4;
        cfg.batch_size = 64;
        cfg.epochs = 300;
        cfg.seed = seed;
        RunOptions opts;
        opts.oracle = &m.oracle;

        Strategy cs;
        cs.baseline = BaselineKind::cs_sample;
        double e2e_frob = 0.0;
        bool seed_improved = true;
        try {
            const WalkForwardResult e2e =
                run_walk_forward(m.panel, splits, full_panel_linear(ObjectiveSpec::msrp()), cfg, opts);
            e2e_frob = *e2e.aggregate.metrics.frobenius;
            for (const auto& sp : e2e.splits) {
                for (double v : sp.train_curve) {
                    finite = finite && std::isfinite(v);
                }
                seed_improved = seed_improved && sp.train_curve.back() > sp.train_curve.front();
            }
        } catch (const DomainError&) {
            finite = false;
            seed_improved = false;
            e2e_frob = std::numeric_limits<double>::infinity();
        }
        const double cs_frob = *run_walk_forward(m.panel, splits, cs, cfg, opts)
                                    .aggregate.metrics.frobenius;
        wins += e2e_frob < cs_frob;
        improved += seed_improved;
        detail += (seed > 1 ? ", " : "") + fmt("%.3f", e2e_frob) + "<" + fmt("%.3f", cs_frob);
    }
    const double elapsed = seconds_since(t0);
    report(4, "synthetic Frobenius direction", wins >= 4 && elapsed < 600.0, elapsed,
           "E2E-LM vs CS-SAMPLE Frobenius per seed: " + detail + "; E2E lower on " +
               std::to_string(wins) + "/5 seeds");
    report(8, "training-loop sanity", improved == 5 && finite, elapsed,
           "final-epoch training objective above initial on " + std::to_string(improved) +
               "/5 seeds (every split); NaN observed: " + (finite ? "no" : "yes"));
}

void criterion_5() {
    const auto t0 = Clock::now();
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SyntheticMarket m = synthetic_market(seed);
        const auto splits = walk_forward(m.panel, 2004);
        TrainConfig cfg;
        cfg.learning_rate = 1e3;  // scaled to the objective: -variance is ~1e-5
        cfg.batch_size = 64;
        cfg.epochs = 300;
        cfg.seed = seed;
        Strategy ewp;
        ewp.baseline = BaselineKind::ewp;
        const double gmvp = variance_of(
            run_walk_forward(m.panel, splits, full_panel_linear(ObjectiveSpec::gmvp()), cfg)
                .aggregate.net_returns);
        const double equal = variance_of(run_walk_forward(m.panel, splits, ewp, cfg).aggregate.net_returns);
        wins += gmvp <= equal;
        detail += (seed > 1 ? ", " : "") + fmt("%.3e", gmvp) + "/" + fmt("%.3e", equal);
    }
    const double elapsed = seconds_since(t0);
    report(5, "GMVP training effectiveness", wins >= 4 && elapsed < 600.0, elapsed,
           "test variance GMVP/EWP per seed: " + detail + "; GMVP <= EWP on " +
               std::to_string(wins) + "/5 seeds");
}

// ---------------------------------------------------------------- criterion 6

void criterion_6() {
    const auto t0 = Clock::now();
    Rng rng(606);
    Eigen::MatrixXd w(50, 6);
    Eigen::MatrixXd r(50, 6);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        w.data()[i] = rng.uniform(-1, 1);
        r.data()[i] = 0.02 * rng.normal();
    }
    const auto net = net_returns(w, r, 0.0);
    bool exact = net[0] == 0.0;
    for (Eigen::Index t = 1; t < 50; ++t) {
        double expected = 0.0;
        for (Eigen::Index i = 0; i < 6; ++i) {
            expected += w(t - 1, i) * r(t, i);
        }
        exact = exact && net[static_cast<std::size_t>(t)] == expected;
    }
    Eigen::MatrixXd hw(2, 1);
    hw << 0.5, 0.5;
    Eigen::MatrixXd hr(2, 1);
    hr << 0.0, 0.02;
    const double hand = net_returns(hw, hr, 2.0)[1];
    const bool ok = exact && std::abs(hand - 0.009999) < 0.5e-12;
    report(6, "cost formula exactness", ok, seconds_since(t0),
           std::string("C=0 equals lagged dot exactly: ") + (exact ? "yes" : "no") +
               "; hand example = " + fmt("%.12f", hand) + " (expected 0.009999000000)");
}

// ---------------------------------------------------------------- criterion 7

void criterion_7() {
    const auto t0 = Clock::now();
    // Fixture values derived by hand in exact arithmetic.
    const std::vector<double> r = {0.01, -0.02, 0.015, -0.005, 0.02};
    const std::vector<double> index = {0.008, -0.01, 0.012, 0.0, 0.01};
    Eigen::MatrixXd w(5, 2);
    w << 0.5, 0.5, 0.6, 0.4, 0.6, 0.4, 0.2, 0.8, 1.0, 0.0;
    const Metrics m = compute_metrics(r, w, std::span<const double>(index));
    const double sharpe = 4.340636070361935;
    const double sortino = 8.46640419540669;
    const double mdd = 0.02;
    const double turnover = 0.65;
    const double beta = 145.0 / 82.0;
    double worst = 0.0;
    auto check = [&](const std::optional<double>& got, double want) {
        worst = std::max(worst, got ? std::abs(*got - want) : INFINITY);
    };
    check(m.sharpe, sharpe);
    check(m.sortino, sortino);
    check(m.max_drawdown, mdd);
    check(m.turnover, turnover);
    check(m.beta, beta);
    report(7, "metric oracles", worst <= 1e-10, seconds_since(t0),
           "Sharpe, Sortino, MDD, turnover, beta on the 5-day fixture; max abs error " +
               fmt("%.1e", worst));
}

// ---------------------------------------------------------------- criterion 9

void criterion_9() {
    const auto t0 = Clock::now();
    const std::size_t n = 735;
    ConstraintSpec spec;
    spec.leverage = 5.0;
    spec.max_position = 0.05;
    spec.cardinality = 148;
    Rng rng(909);
    double budget = 0.0;
    double cap = 0.0;
    std::size_t min_support = n;
    std::size_t max_support = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const auto s = normal_vector(rng, n);
        const WeightVector w = layers::apply_weights(s, spec);
        budget = std::max(budget, std::abs(w.gross() - 5.0));
        for (double x : w.weights) {
            cap = std::max(cap, std::abs(x));
        }
        min_support = std::min(min_support, w.support());
        max_support = std::max(max_support, w.support());
    }
    const double elapsed = seconds_since(t0);
    const bool ok = budget <= 1e-6 && cap <= 0.05 + 1e-8 && min_support == 150 &&
                    max_support == 150 && elapsed < 10.0;
    report(9, "multi-constraint feasibility", ok, elapsed,
           "N=735, L=5, u=0.05, K=148 over 10 vectors: max | ||w||_1 - 5 | " + fmt("%.1e", budget) +
               ", max |w_i| " + fmt("%.6f", cap) + ", support " + std::to_string(min_support) +
               (min_support == max_support ? "" : ".." + std::to_string(max_support)));
}

}  // namespace

int main() {
    criterion_1();
    criterion_2();
    criterion_3();
    criteria_4_and_8();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_9();
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
