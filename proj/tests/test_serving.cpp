#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sqz/error.hpp"
#include "sqz/serving.hpp"
#include "test_util.hpp"

using namespace sqz;
using test::TempFile;

namespace {

MhaParams identity_params(uint32_t dim) {
    MhaParams p;
    p.heads = 1;
    p.head_dim = dim;
    p.input_dim = dim;
    p.output_dim = dim;
    p.wq = MatF(dim, dim);
    p.wk = MatF(dim, dim);
    p.wv = MatF(dim, dim);
    p.wo = MatF(dim, dim);
    for (uint32_t i = 0; i < dim; ++i) {
        p.wq(i, i) = 1.0f;
        p.wk(i, i) = 1.0f;
        p.wv(i, i) = 1.0f;
        p.wo(i, i) = 1.0f;
    }
    return p;
}

// independent ledger oracle: recount from the definitional pieces
FlopLedger hand_ledger(const AttentionShape& s, FlopPath path, uint64_t hits) {
    const uint64_t pd = s.heads * s.head_dim;
    const uint64_t kv = path == FlopPath::direct ? s.N : s.K;
    FlopLedger l;
    uint64_t q = s.M;
    if (path == FlopPath::compressed_cached) q -= hits;
    l.projection_flops = 2 * q * s.d_in * pd;     // queries
    l.projection_flops += 2 * kv * s.d_in * pd;   // keys
    l.projection_flops += 2 * kv * s.d_in * pd;   // values
    l.score_flops = 2 * s.M * kv * pd;
    if (path != FlopPath::direct) l.score_flops += 2 * s.N * s.K * s.d_sem;
    l.weighted_sum_flops = 2 * s.M * kv * pd;
    l.output_flops = 2 * s.M * pd * s.d_out;
    return l;
}

struct SimInputs {
    ItemCorpus corpus;
    CodebookStack stack;
    std::vector<InteractionSequence> histories;
};

SimInputs make_sim_inputs(uint32_t users, uint32_t history_len, uint64_t seed) {
    SyntheticConfig cfg;
    cfg.num_coarse_clusters = 3;
    cfg.num_fine_per_coarse = 2;
    cfg.items_per_fine = 12;
    cfg.d = 8;
    cfg.d_prime = 6;
    cfg.coarse_spread = 8.0;
    cfg.fine_spread = 1.0;
    cfg.noise_sigma = 0.2;
    cfg.num_users = users;
    cfg.history_length = history_len;
    cfg.zipf_exponent = 1.0;
    cfg.seed = seed;
    SimInputs in;
    auto [corpus, truth] = generate_synthetic_corpus(cfg);
    (void)truth;
    in.corpus = std::move(corpus);
    RqConfig rq;
    rq.levels = 2;
    rq.codebook_sizes = {6};
    rq.epochs = 15;
    rq.seed = seed;
    in.stack = train_codebooks(in.corpus.semantic(), rq);
    in.corpus.assign_sids(quantize_all(in.corpus.semantic(), in.stack));
    in.histories = generate_user_histories(cfg, in.corpus);
    return in;
}

ServingConfig small_serving_config() {
    ServingConfig cfg;
    cfg.max_history = 64;
    cfg.candidates_per_request = 4;
    cfg.budget = {3, 2};
    cfg.tau = 0.9;
    cfg.heads = 2;
    cfg.head_dim = 4;
    cfg.d_out = 5;
    cfg.seed = 3;
    return cfg;
}

} // namespace

TEST_SUITE("serving") {

TEST_CASE("a single key takes all attention everywhere") {
    const auto params = make_mha_params(6, 2, 3, 4, 11);
    const auto candidates = test::random_matrix(5, 6, 21);
    const auto compressed = test::random_matrix(1, 6, 22);
    const auto result = mha_forward_full(candidates, compressed, params);
    for (std::size_t r = 0; r < result.attention.rows(); ++r) {
        CHECK(result.attention(r, 0) == doctest::Approx(1.0));
    }
    // output is the projected value of the single row, identical per candidate
    for (std::size_t m = 1; m < 5; ++m) {
        for (uint32_t o = 0; o < 4; ++o) {
            CHECK(result.output(m, o) == doctest::Approx(result.output(0, o)));
        }
    }
}

TEST_CASE("an aligned key dominates under identity projections") {
    const uint32_t d = 4;
    const auto params = identity_params(d);
    MatF keys(3, d); // orthogonal scaled basis keys
    keys(0, 0) = 20.0f;
    keys(1, 1) = 20.0f;
    keys(2, 2) = 20.0f;
    MatF query(1, d);
    query(0, 1) = 20.0f; // aligned with key 1

    const auto result = mha_forward_full(query, keys, params);
    // oracle: scores (0, 400, 0)/sqrt(4) -> softmax -> weight_1 ~ 1
    const double s = 400.0 / 2.0;
    const double denom = std::exp(0.0 - s) + std::exp(0.0) + std::exp(0.0 - s);
    CHECK(result.attention(0, 1) == doctest::Approx(1.0 / denom).epsilon(1e-9));
    for (uint32_t j = 0; j < d; ++j) {
        CHECK(result.output(0, j) == doctest::Approx(keys(1, j)).epsilon(1e-6));
    }
}

TEST_CASE("zero candidates give an empty output") {
    const auto params = make_mha_params(6, 2, 3, 4, 1);
    const MatF candidates(0, 6);
    const auto compressed = test::random_matrix(3, 6, 9);
    const auto out = mha_forward(candidates, compressed, params);
    CHECK(out.rows() == 0);
    CHECK(out.cols() == 4);
}

TEST_CASE("attention rows are probability vectors") {
    Prng rng(33);
    for (int round = 0; round < 20; ++round) {
        const uint32_t d_in = 1 + static_cast<uint32_t>(rng.bounded(8));
        const auto params = make_mha_params(d_in, 1 + rng.bounded(3), 1 + rng.bounded(5),
                                            1 + rng.bounded(6), rng.next_u64());
        const auto candidates = test::random_matrix(1 + rng.bounded(6), d_in, rng.next_u64());
        const auto compressed = test::random_matrix(1 + rng.bounded(6), d_in, rng.next_u64());
        const auto result = mha_forward_full(candidates, compressed, params);
        for (std::size_t r = 0; r < result.attention.rows(); ++r) {
            double sum = 0.0;
            for (std::size_t k = 0; k < result.attention.cols(); ++k) {
                sum += result.attention(r, k);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("cold cache misses once then hits forever") {
    const auto params = make_mha_params(6, 2, 3, 4, 5);
    CandidateBatch batch;
    batch.ids = {10, 11, 12};
    batch.features = test::random_matrix(3, 6, 77);
    const auto compressed = test::random_matrix(4, 6, 78);

    CandidateQueryCache cache;
    const auto [out1, stats1] = cached_mha_forward(batch, compressed, params, cache);
    CHECK(stats1.hits == 0);
    CHECK(stats1.misses == 3);

    const auto vanilla = mha_forward(batch.features, compressed, params);
    for (std::size_t i = 0; i < vanilla.storage().size(); ++i) {
        CHECK(std::abs(vanilla.storage()[i] - out1.storage()[i]) <= 1e-6);
    }

    const auto [out2, stats2] = cached_mha_forward(batch, compressed, params, cache);
    CHECK(stats2.hits == 3);
    CHECK(stats2.misses == 0);
    CHECK(stats2.hit_rate() == doctest::Approx(1.0));
    for (std::size_t i = 0; i < out1.storage().size(); ++i) {
        CHECK(out2.storage()[i] == out1.storage()[i]); // identical projections
    }
}

TEST_CASE("lru capacity evicts the least recently used query") {
    const auto params = make_mha_params(4, 1, 4, 2, 6);
    const auto compressed = test::random_matrix(2, 4, 1);
    CandidateQueryCache cache(2, true);
    auto one = [&](uint64_t id, uint64_t seed) {
        CandidateBatch b;
        b.ids = {id};
        b.features = test::random_matrix(1, 4, seed);
        return cached_mha_forward(b, compressed, params, cache).second;
    };
    CHECK(one(1, 10).misses == 1);
    CHECK(one(2, 11).misses == 1);
    CHECK(one(1, 10).hits == 1);  // 1 refreshed, 2 is now LRU
    CHECK(one(3, 12).misses == 1); // evicts 2
    CHECK(one(2, 11).misses == 1);
    CHECK(cache.size() == 2);
}

TEST_CASE("flop ledgers match the closed-form arithmetic") {
    AttentionShape shape;
    shape.N = 10000;
    shape.M = 500;
    shape.K = 200;
    shape.d_in = 32;
    shape.heads = 4;
    shape.head_dim = 8;
    shape.d_out = 16;
    shape.d_sem = 8;

    // the score-op ratio of the compressed path: (NK + KM) / NM = 0.42
    CHECK(score_pair_ratio(shape, FlopPath::compressed) == doctest::Approx(0.42).epsilon(1e-12));
    CHECK((shape.N * shape.K + shape.K * shape.M) * 50 == 21 * shape.N * shape.M);
    CHECK(score_pair_ratio(shape, FlopPath::direct) == 1.0);

    Prng rng(2);
    for (int round = 0; round < 50; ++round) {
        AttentionShape s;
        s.N = 1 + rng.bounded(5000);
        s.M = 1 + rng.bounded(600);
        s.K = 1 + rng.bounded(300);
        s.d_in = 1 + rng.bounded(128);
        s.heads = 1 + rng.bounded(8);
        s.head_dim = 1 + rng.bounded(64);
        s.d_out = 1 + rng.bounded(128);
        s.d_sem = 1 + rng.bounded(64);
        const uint64_t hits = rng.bounded(s.M + 1);
        for (const auto path :
             {FlopPath::direct, FlopPath::compressed, FlopPath::compressed_cached}) {
            const auto lib = flop_count(s, path, hits);
            const auto oracle = hand_ledger(s, path, hits);
            CHECK(lib.projection_flops == oracle.projection_flops);
            CHECK(lib.score_flops == oracle.score_flops);
            CHECK(lib.weighted_sum_flops == oracle.weighted_sum_flops);
            CHECK(lib.output_flops == oracle.output_flops);
            CHECK(lib.total() == oracle.total());
        }
    }
}

TEST_CASE("projections dominate at the documented reference shape") {
    // reference shape: vanilla serving, N=10000, M=200, d''=1024, H*d_h=64
    AttentionShape ref;
    ref.N = 10000;
    ref.M = 200;
    ref.K = 200;
    ref.d_in = 1024;
    ref.heads = 8;
    ref.head_dim = 8;
    ref.d_out = 64;
    ref.d_sem = 64;
    const auto ledger = flop_count(ref, FlopPath::direct);
    CHECK(ledger.projection_share() > 0.70);
}

TEST_CASE("full query hits remove exactly the candidate projection term") {
    AttentionShape s;
    s.N = 2000;
    s.M = 100;
    s.K = 50;
    s.d_in = 48;
    s.heads = 2;
    s.head_dim = 16;
    s.d_out = 24;
    s.d_sem = 16;
    const auto plain = flop_count(s, FlopPath::compressed);
    const auto hit = flop_count(s, FlopPath::compressed_cached, s.M);
    CHECK(plain.projection_flops - hit.projection_flops ==
          2 * s.M * s.d_in * s.heads * s.head_dim);
    CHECK(plain.score_flops == hit.score_flops);
}

TEST_CASE("compressed scoring beats direct scoring at the spec shape") {
    AttentionShape s;
    s.N = 10000;
    s.M = 500;
    s.K = 200;
    s.d_in = 64;
    s.heads = 8;
    s.head_dim = 8;
    s.d_out = 64;
    s.d_sem = 64; // matches H*d_h, the complexity-formula regime
    CHECK(static_cast<double>(s.K) <
          static_cast<double>(s.N) * s.M / (static_cast<double>(s.N) + s.M));
    const auto direct = flop_count(s, FlopPath::direct);
    const auto compressed = flop_count(s, FlopPath::compressed);
    CHECK(compressed.score_flops < direct.score_flops);
}

TEST_CASE("kv reuse flag charges per-candidate reprojection when off") {
    AttentionShape s;
    s.N = 100;
    s.M = 10;
    s.K = 5;
    s.d_in = 8;
    s.heads = 1;
    s.head_dim = 8;
    s.d_out = 8;
    s.d_sem = 8;
    const auto reused = flop_count(s, FlopPath::compressed, 0, true);
    const auto recomputed = flop_count(s, FlopPath::compressed, 0, false);
    const uint64_t kv_once = 2 * (2 * s.K) * s.d_in * s.heads * s.head_dim;
    CHECK(recomputed.projection_flops - reused.projection_flops == kv_once * (s.M - 1));
}

TEST_CASE("agents rebuild on the refresh cadence") {
    auto in = make_sim_inputs(2, 30, 5);
    auto cfg = small_serving_config();
    cfg.agent_refresh_period = 86400;

    std::vector<RequestRecord> replay;
    const int64_t t0 = 2'000'000;
    replay.push_back({t0, 1, {1, 2}});
    replay.push_back({t0 + 100, 1, {3, 4}}); // within the refresh period
    const auto report = simulate_serving(replay, in.corpus, in.stack, in.histories, cfg);
    CHECK(report.agent_builds == 1);
    CHECK(report.requests[0].agents_rebuilt);
    CHECK_FALSE(report.requests[1].agents_rebuilt);

    cfg.agent_refresh_period = 0; // rebuild every request
    const auto always = simulate_serving(replay, in.corpus, in.stack, in.histories, cfg);
    CHECK(always.agent_builds == 2);
}

TEST_CASE("replay files round trip and reject malformed rows") {
    std::vector<RequestRecord> replay = {{100, 1, {1, 2, 3}}, {200, 2, {4}}};
    TempFile tmp("replay");
    save_replay(replay, tmp.str());
    const auto again = load_replay(tmp.str());
    REQUIRE(again.size() == 2);
    CHECK(again[0].candidate_ids == std::vector<uint64_t>{1, 2, 3});
    CHECK(again[1].user_id == 2);

    TempFile bad("replay_bad");
    {
        std::ofstream os(bad.str());
        os << "timestamp,user_id,candidate_ids\n100,1\n";
    }
    CHECK_THROWS_AS(load_replay(bad.str()), ValidationError);
}

TEST_CASE("the simulator replays deterministically with matching paths") {
    auto in = make_sim_inputs(4, 40, 8);
    auto cfg = small_serving_config();

    Prng rng(99);
    std::vector<RequestRecord> replay;
    const int64_t t0 = 2'000'000;
    for (int r = 0; r < 40; ++r) {
        RequestRecord req;
        req.timestamp = t0 + r * 10;
        req.user_id = 1 + rng.bounded(4);
        for (int c = 0; c < 4; ++c) {
            req.candidate_ids.push_back(in.corpus.ids()[rng.bounded(in.corpus.size())]);
        }
        replay.push_back(std::move(req));
    }

    const auto report = simulate_serving(replay, in.corpus, in.stack, in.histories, cfg);
    CHECK(report.max_divergence <= 1e-6);
    CHECK(report.requests.size() == 40);
    for (const auto& rr : report.requests) {
        if (rr.query_cache.hits > 0) CHECK(rr.cached.total() < rr.vanilla.total());
        CHECK(rr.cached.total() <= rr.vanilla.total());
    }

    const auto again = simulate_serving(replay, in.corpus, in.stack, in.histories, cfg);
    CHECK(again.total_cached_flops == report.total_cached_flops);
    CHECK(again.max_divergence == report.max_divergence);

    // second pass over the same cache hits every query
    CandidateQueryCache cache;
    (void)simulate_serving(replay, in.corpus, in.stack, in.histories, cfg, &cache);
    const auto warm = simulate_serving(replay, in.corpus, in.stack, in.histories, cfg, &cache);
    CHECK(warm.query_cache.hit_rate() == doctest::Approx(1.0));
}

TEST_CASE("simulator validates its inputs") {
    auto in = make_sim_inputs(1, 20, 3);
    auto cfg = small_serving_config();
    std::vector<RequestRecord> unknown_user = {{100, 99, {1}}};
    CHECK_THROWS_AS(simulate_serving(unknown_user, in.corpus, in.stack, in.histories, cfg),
                    ValidationError);
    std::vector<RequestRecord> unknown_item = {{100, 1, {999999}}};
    CHECK_THROWS_AS(simulate_serving(unknown_item, in.corpus, in.stack, in.histories, cfg),
                    ValidationError);
    std::vector<RequestRecord> unsorted = {{200, 1, {1}}, {100, 1, {1}}};
    CHECK_THROWS_AS(simulate_serving(unsorted, in.corpus, in.stack, in.histories, cfg),
                    ValidationError);

    ServingConfig bad = cfg;
    bad.budget = {100, 100}; // K above max_history
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

} // TEST_SUITE
