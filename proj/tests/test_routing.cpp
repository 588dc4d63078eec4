#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sqz/error.hpp"
#include "sqz/routing.hpp"
#include "test_util.hpp"

using namespace sqz;

namespace {

// Scalar oracle: the per-agent weighted sum evaluated term by term, with the
// softmax denominator computed directly (no max subtraction, no matrices).
std::vector<double> scalar_routing_row(const MatF& Z, const MatF& E, std::size_t k, double tau) {
    std::vector<double> weights(E.rows());
    double denom = 0.0;
    for (std::size_t j = 0; j < E.rows(); ++j) {
        const double dist = std::sqrt(squared_l2(E.row(j), Z.row(k), Z.cols()));
        weights[j] = std::exp(-dist / tau);
        denom += weights[j];
    }
    for (auto& w : weights) w /= denom;
    return weights;
}

std::vector<double> scalar_compress_row(const MatF& Z, const MatF& E, const MatF& content,
                                        double agent_weight, std::size_t k, double tau) {
    const auto weights = scalar_routing_row(Z, E, k, tau);
    std::vector<double> out(content.cols(), 0.0);
    for (std::size_t j = 0; j < E.rows(); ++j) {
        for (std::size_t t = 0; t < content.cols(); ++t) {
            out[t] += weights[j] * static_cast<double>(content(j, t));
        }
    }
    for (auto& v : out) v *= agent_weight;
    return out;
}

InterestAgentSet agents_1d(const std::vector<float>& prototypes,
                           const std::vector<double>& weights) {
    InterestAgentSet set;
    set.user_id = 1;
    set.budget = {static_cast<uint32_t>(prototypes.size())};
    for (std::size_t k = 0; k < prototypes.size(); ++k) {
        InterestAgent a;
        a.path.codes = {static_cast<uint32_t>(k)};
        a.raw_count = 1;
        a.weight = weights[k];
        a.prototype = {prototypes[k]};
        set.agents.push_back(std::move(a));
    }
    return set;
}

struct RandomInstance {
    MatF Z, E, content;
    std::vector<double> agent_weights;
};

RandomInstance random_instance(Prng& rng, std::size_t max_n = 64, std::size_t max_k = 8,
                               std::size_t max_d = 16) {
    const std::size_t n = 1 + rng.bounded(max_n);
    const std::size_t k = 1 + rng.bounded(max_k);
    const std::size_t d = 1 + rng.bounded(max_d);
    const std::size_t dp = 1 + rng.bounded(8);
    RandomInstance inst;
    inst.Z = MatF(k, d);
    inst.E = MatF(n, d);
    inst.content = MatF(n, dp);
    for (auto& v : inst.Z.storage()) v = static_cast<float>(rng.normal());
    for (auto& v : inst.E.storage()) v = static_cast<float>(rng.normal());
    for (auto& v : inst.content.storage()) v = static_cast<float>(rng.normal());
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        inst.agent_weights.push_back(rng.next_double() + 1e-3);
        sum += inst.agent_weights.back();
    }
    for (auto& w : inst.agent_weights) w /= sum;
    return inst;
}

} // namespace

TEST_SUITE("routing") {

TEST_CASE("a single item takes all the weight") {
    const auto W = routing_weight_matrix(test::column({0.0f, 5.0f}), test::column({3.0f}), 1.0);
    REQUIRE(W.rows() == 2);
    REQUIRE(W.cols() == 1);
    CHECK(W(0, 0) == 1.0);
    CHECK(W(1, 0) == 1.0);
}

TEST_CASE("the worked 1-D row matches the direct evaluation") {
    const auto Z = test::column({0.0f, 2.0f});
    const auto E = test::column({0.0f, 2.0f, 1.0f});
    const auto W = routing_weight_matrix(Z, E, 1.0);

    // oracle: distances (0, 2, 1) -> exp(0), exp(-2), exp(-1), normalized
    const auto oracle = scalar_routing_row(Z, E, 0, 1.0);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(W(0, j) == doctest::Approx(oracle[j]).epsilon(1e-12));
    }
    CHECK(W(0, 0) == doctest::Approx(0.6652409558).epsilon(1e-9));
    CHECK(W(0, 1) == doctest::Approx(0.0900305732).epsilon(1e-9));
    CHECK(W(0, 2) == doctest::Approx(0.2447284711).epsilon(1e-9));
}

TEST_CASE("huge tau flattens the weights to 1/N") {
    Prng rng(17);
    const auto inst = random_instance(rng, 32, 4, 8);
    const auto W = routing_weight_matrix(inst.Z, inst.E, 1e6);
    const double flat = 1.0 / static_cast<double>(inst.E.rows());
    for (std::size_t i = 0; i < W.rows(); ++i) {
        for (std::size_t j = 0; j < W.cols(); ++j) {
            CHECK(std::abs(W(i, j) - flat) < 1e-6);
        }
    }
}

TEST_CASE("rows are stochastic and strictly positive") {
    Prng rng(31);
    for (int round = 0; round < 200; ++round) {
        const auto inst = random_instance(rng);
        const double tau = 0.25 + rng.next_double() * 3.75;
        const auto W = routing_weight_matrix(inst.Z, inst.E, tau);
        for (std::size_t i = 0; i < W.rows(); ++i) {
            double sum = 0.0;
            double min_w = 1.0;
            for (std::size_t j = 0; j < W.cols(); ++j) {
                sum += W(i, j);
                min_w = std::min(min_w, W(i, j));
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
            CHECK(min_w > 0.0);
        }
    }
}

TEST_CASE("matrix and scalar forms agree to 1e-9") {
    Prng rng(47);
    for (int round = 0; round < 100; ++round) {
        const auto inst = random_instance(rng);
        const double tau = 0.25 + rng.next_double() * 3.75;
        const auto out = soft_routing_outputs(inst.Z, inst.E, inst.content, inst.agent_weights, tau);
        for (std::size_t k = 0; k < inst.Z.rows(); ++k) {
            const auto oracle =
                scalar_compress_row(inst.Z, inst.E, inst.content, inst.agent_weights[k], k, tau);
            for (std::size_t t = 0; t < inst.content.cols(); ++t) {
                CHECK(std::abs(out(k, t) - oracle[t]) <= 1e-9);
            }
        }
    }
}

TEST_CASE("degenerate one-item one-agent compression returns the content row") {
    const auto corpus = test::corpus_1d({1.0f}, {42.0f});
    const auto agents = agents_1d({1.0f}, {1.0});
    RoutingConfig cfg;
    cfg.tau = 1.0;
    const auto comp = soft_compress(agents, test::history_of_ids({1}), corpus, cfg, 2000);
    REQUIRE(comp.size() == 1);
    CHECK(comp.vectors(0, 0) == doctest::Approx(42.0));
}

TEST_CASE("the worked aggregation value is reproduced") {
    // items at 0, 2, 1 with content 10, 20, 30; agent prototype at 0, w = 1
    const auto corpus = test::corpus_1d({0.0f, 2.0f, 1.0f}, {10.0f, 20.0f, 30.0f});
    const auto agents = agents_1d({0.0f, 2.0f}, {1.0, 1.0});
    RoutingConfig cfg;
    cfg.tau = 1.0;
    const auto comp = soft_compress(agents, test::history_of_ids({1, 2, 3}), corpus, cfg, 2000);
    CHECK(comp.vectors(0, 0) == doctest::Approx(15.7948751528).epsilon(1e-6));
}

TEST_CASE("the reported tau optimum is an accepted configuration") {
    RoutingConfig cfg;
    CHECK(cfg.tau == doctest::Approx(std::exp(-0.18)).epsilon(1e-3));
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("hard routing averages exact matches and flags empty agents") {
    auto corpus = test::corpus_1d({0.0f, 0.1f, 10.0f}, {1.0f, 3.0f, 100.0f});
    const auto stack = test::manual_stack_1d({{0.0f, 10.0f}});
    corpus.assign_sids(quantize_all(corpus.semantic(), stack));

    InterestAgentSet agents;
    agents.budget = {2};
    InterestAgent a0;
    a0.path.codes = {0};
    a0.weight = 0.5;
    a0.prototype = {0.0f};
    InterestAgent a1;
    a1.path.codes = {1};
    a1.weight = 0.5;
    a1.prototype = {10.0f};
    agents.agents = {a0, a1};

    RoutingConfig cfg;
    cfg.mode = RoutingMode::hard;

    // all three match: agent 0 gets items 1,2 -> 0.5 * mean(1,3) = 2
    const auto all = hard_compress(agents, test::history_of_ids({1, 2, 3}), corpus, cfg);
    CHECK(all.vectors(0, 0) == doctest::Approx(0.5 * 2.0));
    CHECK(all.vectors(1, 0) == doctest::Approx(0.5 * 100.0));
    CHECK_FALSE(all.zero_match[0]);
    CHECK_FALSE(all.zero_match[1]);

    // agent 1 matches nothing: zero row plus flag
    const auto partial = hard_compress(agents, test::history_of_ids({1, 2}), corpus, cfg);
    CHECK(partial.vectors(1, 0) == doctest::Approx(0.0));
    CHECK(partial.zero_match[1]);
    CHECK(partial.vectors(0, 0) == doctest::Approx(0.5 * 2.0));
}

TEST_CASE("matched-only mode drops long-tail items before soft aggregation") {
    auto corpus = test::corpus_1d({0.0f, 0.1f, 10.0f}, {1.0f, 3.0f, 100.0f});
    const auto stack = test::manual_stack_1d({{0.0f, 10.0f}});
    corpus.assign_sids(quantize_all(corpus.semantic(), stack));

    InterestAgentSet agents;
    agents.budget = {1};
    InterestAgent a0;
    a0.path.codes = {0};
    a0.weight = 1.0;
    a0.prototype = {0.0f};
    agents.agents = {a0};

    RoutingConfig cfg;
    cfg.mode = RoutingMode::soft_matched_only;
    cfg.tau = 1.0;
    const auto comp = matched_only_compress(agents, test::history_of_ids({1, 2, 3}), corpus, cfg, 0);

    // item 3 (SID 1) is dropped; soft softmax over items 1, 2 only
    const auto E = test::column({0.0f, 0.1f});
    const auto content = test::column({1.0f, 3.0f});
    const auto oracle = scalar_compress_row(test::column({0.0f}), E, content, 1.0, 0, 1.0);
    CHECK(comp.vectors(0, 0) == doctest::Approx(oracle[0]).epsilon(1e-6));

    // nothing matches: zero rows, flags set
    InteractionSequence tail_only = test::history_of_ids({3});
    const auto none = matched_only_compress(agents, tail_only, corpus, cfg, 0);
    CHECK(none.vectors(0, 0) == doctest::Approx(0.0));
    CHECK(none.zero_match[0]);
}

TEST_CASE("tiny tau assigns every item to its nearest prototype") {
    Prng rng(53);
    for (int round = 0; round < 100; ++round) {
        const auto inst = random_instance(rng, 32, 6, 8);
        const auto W = item_assignment_weights(inst.Z, inst.E, 1e-3);
        for (std::size_t j = 0; j < inst.E.rows(); ++j) {
            std::size_t argmax = 0;
            std::size_t nearest = 0;
            double best_w = -1.0, best_d = std::numeric_limits<double>::infinity();
            bool tie = false;
            for (std::size_t i = 0; i < inst.Z.rows(); ++i) {
                if (W(i, j) > best_w) {
                    best_w = W(i, j);
                    argmax = i;
                }
                const double dist = squared_l2(inst.E.row(j), inst.Z.row(i), inst.Z.cols());
                if (std::abs(dist - best_d) < 1e-12) tie = true;
                if (dist < best_d) {
                    best_d = dist;
                    nearest = i;
                    tie = false;
                }
            }
            if (!tie) CHECK(argmax == nearest);
        }
    }
}

TEST_CASE("permuting the history leaves the compression unchanged") {
    Prng rng(61);
    const auto corpus =
        test::corpus_1d({0.0f, 1.0f, 2.0f, 5.0f, 7.0f}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f});
    const auto agents = agents_1d({0.0f, 6.0f}, {0.4, 0.6});
    RoutingConfig cfg;
    cfg.tau = 0.8;
    cfg.time_decay.enabled = true;
    cfg.time_decay.half_life = 100.0;

    InteractionSequence history;
    history.user_id = 1;
    history.events = {{1, 10}, {2, 20}, {3, 30}, {4, 40}, {5, 50}};
    const auto base = soft_compress(agents, history, corpus, cfg, 60);

    std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
    InteractionSequence shuffled;
    shuffled.user_id = 1;
    for (std::size_t p : perm) shuffled.events.push_back(history.events[p]); // timestamps carried
    const auto permuted = soft_compress(agents, shuffled, corpus, cfg, 60);

    for (std::size_t k = 0; k < base.size(); ++k) {
        for (std::size_t t = 0; t < base.vectors.cols(); ++t) {
            CHECK(std::abs(base.vectors(k, t) - permuted.vectors(k, t)) <= 1e-6);
        }
    }
}

TEST_CASE("agent weights scale output rows linearly") {
    Prng rng(71);
    const auto inst = random_instance(rng, 16, 4, 6);
    auto doubled = inst.agent_weights;
    for (auto& w : doubled) w *= 2.0;
    const auto base = soft_routing_outputs(inst.Z, inst.E, inst.content, inst.agent_weights, 1.0);
    const auto scaled = soft_routing_outputs(inst.Z, inst.E, inst.content, doubled, 1.0);
    for (std::size_t k = 0; k < base.rows(); ++k) {
        for (std::size_t t = 0; t < base.cols(); ++t) {
            CHECK(scaled(k, t) == doctest::Approx(2.0 * base(k, t)).epsilon(1e-12));
        }
    }
}

TEST_CASE("time decay appends the documented scalar and rejects early requests") {
    const auto corpus = test::corpus_1d({0.0f, 1.0f}, {5.0f, 6.0f});
    InteractionSequence history;
    history.user_id = 1;
    history.events = {{1, 100}, {2, 200}};
    TimeDecay decay;
    decay.enabled = true;
    decay.half_life = 100.0;

    const auto content = build_content_rows(history, corpus, decay, 300);
    REQUIRE(content.cols() == 2); // d' + 1
    CHECK(content(0, 1) == doctest::Approx(std::exp(-2.0)));
    CHECK(content(1, 1) == doctest::Approx(std::exp(-1.0)));

    CHECK_THROWS_AS(build_content_rows(history, corpus, decay, 150), ValidationError);
}

TEST_CASE("quantization error is zero on prototype-aligned items") {
    auto corpus = test::corpus_1d({0.0f, 10.0f}, {1.0f, 2.0f});
    const auto stack = test::manual_stack_1d({{0.0f, 10.0f}});
    corpus.assign_sids(quantize_all(corpus.semantic(), stack));
    const auto agents = agents_1d({0.0f, 10.0f}, {0.5, 0.5});
    RoutingConfig cfg;
    const auto comp = soft_compress(agents, test::history_of_ids({1, 2}), corpus, cfg, 2000);

    QuantizationRule nearest{QuantizationRule::Kind::nearest_prototype, 1.0};
    CHECK(quantization_error(comp, test::history_of_ids({1, 2}), corpus, nearest) ==
          doctest::Approx(0.0));
    QuantizationRule exact{QuantizationRule::Kind::exact_match, 1.0};
    CHECK(quantization_error(comp, test::history_of_ids({1, 2}), corpus, exact) ==
          doctest::Approx(0.0));
}

TEST_CASE("tiny-tau mixture error matches nearest and never beats exact matching") {
    // every item exact-matches some agent here, so nearest <= exact per item
    auto corpus = test::corpus_1d({0.2f, 0.4f, 9.7f, 10.3f}, {1.0f, 2.0f, 3.0f, 4.0f});
    const auto stack = test::manual_stack_1d({{0.0f, 10.0f}});
    corpus.assign_sids(quantize_all(corpus.semantic(), stack));
    const auto agents = agents_1d({0.0f, 10.0f}, {0.5, 0.5});
    RoutingConfig cfg;
    const auto history = test::history_of_ids({1, 2, 3, 4});
    const auto comp = soft_compress(agents, history, corpus, cfg, 2000);

    const double soft_tiny = quantization_error(
        comp, history, corpus, {QuantizationRule::Kind::soft_mixture, 1e-3});
    const double nearest = quantization_error(
        comp, history, corpus, {QuantizationRule::Kind::nearest_prototype, 1.0});
    const double exact = quantization_error(
        comp, history, corpus, {QuantizationRule::Kind::exact_match, 1.0});
    CHECK(soft_tiny == doctest::Approx(nearest).epsilon(1e-9));
    CHECK(nearest <= exact + 1e-12);
}

TEST_CASE("dropped long-tail items are charged their full norm") {
    auto corpus = test::corpus_1d({0.0f, 7.0f}, {1.0f, 2.0f});
    const auto stack = test::manual_stack_1d({{0.0f, 7.0f}});
    corpus.assign_sids(quantize_all(corpus.semantic(), stack));
    const auto agents = agents_1d({0.0f}, {1.0}); // only the SID-0 agent survives
    RoutingConfig cfg;
    const auto history = test::history_of_ids({1, 2});
    const auto comp = soft_compress(agents, history, corpus, cfg, 2000);

    const double exact = quantization_error(comp, history, corpus,
                                            {QuantizationRule::Kind::exact_match, 1.0});
    // item 1 sits on its prototype (0), item 2 is unmatched -> ||7||^2
    CHECK(exact == doctest::Approx((0.0 + 49.0) / 2.0));

    const double matched = quantization_error(comp, history, corpus,
                                              {QuantizationRule::Kind::matched_mixture, 1.0});
    const double soft = quantization_error(comp, history, corpus,
                                           {QuantizationRule::Kind::soft_mixture, 1.0});
    CHECK(matched >= soft); // the long-tail penalty
}

TEST_CASE("validation errors cover the contract") {
    const auto corpus = test::corpus_1d({0.0f}, {1.0f});
    const auto agents = agents_1d({0.0f}, {1.0});
    RoutingConfig cfg;
    CHECK_THROWS_AS(routing_weight_matrix(test::column({0.0f}), test::column({1.0f}), 0.0),
                    ValidationError);
    CHECK_THROWS_AS(routing_weight_matrix(test::column({0.0f}), MatF(1, 2), 1.0),
                    ValidationError);
    InteractionSequence empty;
    empty.user_id = 1;
    CHECK_THROWS_AS(soft_compress(agents, empty, corpus, cfg, 0), ValidationError);
    CHECK_THROWS_AS(soft_compress(agents, test::history_of_ids({9}), corpus, cfg, 0),
                    ValidationError); // unknown item

    MatF bad = test::column({1.0f});
    bad(0, 0) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(routing_weight_matrix(bad, test::column({1.0f}), 1.0), ValidationError);
}

} // TEST_SUITE
