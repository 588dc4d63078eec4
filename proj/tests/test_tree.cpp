#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "sqz/error.hpp"
#include "sqz/tree.hpp"
#include "test_util.hpp"

using namespace sqz;

namespace {

SemanticId sid(std::initializer_list<uint32_t> codes) { return SemanticId{codes}; }

// a 2-level stack whose codes cover indices 0..2 at both levels
CodebookStack cover_stack() {
    return test::manual_stack_1d({{0.0f, 10.0f, 20.0f}, {-1.0f, 0.0f, 1.0f}});
}

const std::vector<SemanticId> kWorked = {sid({0, 1}), sid({0, 1}), sid({0, 2}), sid({1, 0})};

uint64_t subtree_check(const VoteTrie::Node& node) {
    if (node.children.empty()) return node.count;
    uint64_t sum = 0;
    for (const auto& [code, child] : node.children) sum += subtree_check(child);
    CHECK(sum == node.count);
    return node.count;
}

std::vector<SemanticId> random_sids(Prng& rng, std::size_t n, std::size_t levels,
                                    uint32_t fanout) {
    std::vector<SemanticId> out;
    for (std::size_t i = 0; i < n; ++i) {
        SemanticId s;
        for (std::size_t l = 0; l < levels; ++l) {
            s.codes.push_back(static_cast<uint32_t>(rng.bounded(fanout)));
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

TEST_SUITE("tree") {

TEST_CASE("tokenize keeps order and rejects unknown items") {
    const auto corpus = test::corpus_1d({0.0f, 10.0f, 0.1f}, {1.0f, 2.0f, 3.0f});
    const auto stack = test::manual_stack_1d({{0.0f, 10.0f}});

    const auto one = tokenize_history(test::history_of_ids({2}), corpus, stack);
    REQUIRE(one.size() == 1);
    CHECK(one[0].codes == std::vector<uint32_t>{1});

    const auto twice = tokenize_history(test::history_of_ids({1, 1}), corpus, stack);
    CHECK(twice[0] == twice[1]);

    CHECK_THROWS_WITH_AS(tokenize_history(test::history_of_ids({1, 99}), corpus, stack),
                         doctest::Contains("event index 1"), ValidationError);
}

TEST_CASE("same fine cluster implies same SID on a zero-noise corpus") {
    SyntheticConfig cfg;
    cfg.num_coarse_clusters = 3;
    cfg.num_fine_per_coarse = 2;
    cfg.items_per_fine = 8;
    cfg.d = 6;
    cfg.d_prime = 2;
    cfg.coarse_spread = 10.0;
    cfg.fine_spread = 1.0;
    cfg.noise_sigma = 0.0;
    cfg.num_users = 1;
    cfg.history_length = 48;
    cfg.seed = 9;
    const auto [corpus, truth] = generate_synthetic_corpus(cfg);

    RqConfig rq;
    rq.levels = 2;
    rq.codebook_sizes = {8}; // >= number of fine clusters
    rq.epochs = 40;
    rq.seed = 9;
    const auto stack = train_codebooks(corpus.semantic(), rq);
    const auto sids = quantize_all(corpus.semantic(), stack);

    // oracle: ground-truth labels; items sharing a fine label share a SID
    std::map<uint32_t, SemanticId> seen;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto [it, inserted] = seen.emplace(truth.fine_label[i], sids[i]);
        if (!inserted) CHECK(it->second == sids[i]);
    }
}

TEST_CASE("vote trie counts match the hand-counted example") {
    const auto trie = build_vote_trie(kWorked);
    CHECK(trie.total() == 4);
    CHECK(trie.levels() == 2);
    const auto& root = trie.root();
    REQUIRE(root.children.size() == 2);
    CHECK(root.children.at(0).count == 3);
    CHECK(root.children.at(1).count == 1);
    CHECK(root.children.at(0).children.at(1).count == 2);
    CHECK(root.children.at(0).children.at(2).count == 1);
    CHECK(root.children.at(1).children.at(0).count == 1);
}

TEST_CASE("a single repeated SID forms a chain with full counts") {
    const std::vector<SemanticId> sids5(5, sid({2, 0}));
    const auto trie = build_vote_trie(sids5);
    CHECK(trie.total() == 5);
    CHECK(trie.root().children.at(2).count == 5);
    CHECK(trie.root().children.at(2).children.at(0).count == 5);
}

TEST_CASE("empty SID list gives an empty trie; mixed lengths are rejected") {
    const auto trie = build_vote_trie({});
    CHECK(trie.total() == 0);
    CHECK_THROWS_AS(build_vote_trie({sid({1}), sid({1, 2})}), ValidationError);
    CHECK_THROWS_AS(vote(trie, {1}, cover_stack()), ValidationError);
}

TEST_CASE("budget (1,1) keeps the dominant branch only") {
    const auto set = vote(build_vote_trie(kWorked), {1, 1}, cover_stack());
    REQUIRE(set.size() == 1);
    CHECK(set.agents[0].path == sid({0, 1}));
    CHECK(set.agents[0].raw_count == 2);
    CHECK(set.agents[0].weight == doctest::Approx(1.0));
}

TEST_CASE("budget (1,2) weights match the softmax oracle") {
    const auto set = vote(build_vote_trie(kWorked), {1, 2}, cover_stack());
    REQUIRE(set.size() == 2);
    CHECK(set.agents[0].path == sid({0, 1}));
    CHECK(set.agents[1].path == sid({0, 2}));
    // oracle: softmax(2, 1) evaluated directly
    const double denom = std::exp(2.0) + std::exp(1.0);
    CHECK(set.agents[0].weight == doctest::Approx(std::exp(2.0) / denom).epsilon(1e-9));
    CHECK(set.agents[1].weight == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-9));
    CHECK(set.agents[0].weight == doctest::Approx(0.7310585786).epsilon(1e-6));
    CHECK(set.agents[1].weight == doctest::Approx(0.2689414214).epsilon(1e-6));
}

TEST_CASE("a budget above the fan-out keeps every distinct SID") {
    const auto set = vote(build_vote_trie(kWorked), {3, 3}, cover_stack());
    REQUIRE(set.size() == 3);
    CHECK(set.agents[0].path == sid({0, 1}));
    CHECK(set.agents[1].path == sid({0, 2}));
    CHECK(set.agents[2].path == sid({1, 0}));
}

TEST_CASE("prototypes come from reconstruction of the path") {
    const auto stack = cover_stack();
    const auto set = vote(build_vote_trie(kWorked), {2, 2}, stack);
    for (const auto& agent : set.agents) {
        const auto proto = reconstruct(agent.path, stack);
        CHECK(agent.prototype == proto);
    }
}

TEST_CASE("count_scale softens the weight distribution") {
    const auto sharp = vote(build_vote_trie(kWorked), {2, 2}, cover_stack(), 1.0);
    const auto flat = vote(build_vote_trie(kWorked), {2, 2}, cover_stack(), 100.0);
    CHECK(flat.agents[0].weight < sharp.agents[0].weight);
    double sum = 0.0;
    for (const auto& a : flat.agents) sum += a.weight;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("vote conservation, budget respect and the weight simplex hold on random tries") {
    Prng rng(2024);
    for (int round = 0; round < 50; ++round) {
        const std::size_t n = 1 + rng.bounded(500);
        const auto sids = random_sids(rng, n, 2, 3);
        const auto trie = build_vote_trie(sids);
        CHECK(trie.total() == n);
        subtree_check(trie.root());

        const std::vector<uint32_t> budget = {static_cast<uint32_t>(1 + rng.bounded(3)),
                                              static_cast<uint32_t>(1 + rng.bounded(3))};
        const auto set = vote(trie, budget, cover_stack());
        CHECK(set.size() <= static_cast<std::size_t>(budget[0]) * budget[1]);
        CHECK(set.size() >= 1);

        double sum = 0.0;
        std::set<SemanticId> distinct;
        for (const auto& a : set.agents) {
            CHECK(a.weight > 0.0);
            sum += a.weight;
            distinct.insert(a.path);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(distinct.size() == set.size()); // paths pairwise distinct

        // per retained parent, retained children <= k^(2)
        std::map<uint32_t, uint32_t> children_per_parent;
        for (const auto& a : set.agents) children_per_parent[a.path.codes[0]] += 1;
        for (const auto& [parent, cnt] : children_per_parent) {
            CHECK(cnt <= budget[1]);
        }
        CHECK(children_per_parent.size() <= budget[0]);

        // monotone dominance: a surviving leaf outweighs pruned siblings
        for (const auto& [parent, cnt] : children_per_parent) {
            const auto& parent_node = trie.root().children.at(parent);
            uint64_t min_kept = std::numeric_limits<uint64_t>::max();
            std::set<uint32_t> kept;
            for (const auto& a : set.agents) {
                if (a.path.codes[0] == parent) {
                    min_kept = std::min(min_kept, a.raw_count);
                    kept.insert(a.path.codes[1]);
                }
            }
            for (const auto& [code, child] : parent_node.children) {
                if (!kept.contains(code)) CHECK(child.count <= min_kept);
            }
        }

        // agents sorted lexicographically, deterministically
        for (std::size_t i = 1; i < set.agents.size(); ++i) {
            CHECK(set.agents[i - 1].path < set.agents[i].path);
        }
        const auto again = vote(trie, budget, cover_stack());
        REQUIRE(again.size() == set.size());
        for (std::size_t i = 0; i < set.agents.size(); ++i) {
            CHECK(again.agents[i].path == set.agents[i].path);
            CHECK(again.agents[i].weight == set.agents[i].weight);
        }
    }
}

TEST_CASE("vote validates its inputs") {
    const auto trie = build_vote_trie(kWorked);
    CHECK_THROWS_AS(vote(trie, {1}, cover_stack()), ValidationError);       // level mismatch
    CHECK_THROWS_AS(vote(trie, {1, 0}, cover_stack()), ValidationError);    // k < 1
    CHECK_THROWS_AS(vote(trie, {1, 1}, cover_stack(), 0.0), ValidationError);
}

} // TEST_SUITE
