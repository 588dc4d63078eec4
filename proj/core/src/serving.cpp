#include "sqz/serving.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>

#include "sqz/error.hpp"
#include "sqz/prng.hpp"
#include "sqz/tree.hpp"

namespace sqz {

namespace {

void fill_random(MatF& m, Prng& rng, double scale) {
    for (auto& v : m.storage()) v = static_cast<float>(rng.normal() * scale);
}

// rows x proj_dim = rows x d_in times (proj_dim x d_in)^T, double accumulation
MatD project(const MatF& rows, const MatF& weight) {
    MatD out(rows.rows(), weight.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const float* x = rows.row(i);
        for (std::size_t p = 0; p < weight.rows(); ++p) {
            const float* w = weight.row(p);
            double acc = 0.0;
            for (std::size_t j = 0; j < rows.cols(); ++j) {
                acc += static_cast<double>(x[j]) * static_cast<double>(w[j]);
            }
            out(i, p) = acc;
        }
    }
    return out;
}

std::vector<double> project_row(const float* x, std::size_t d_in, const MatF& weight) {
    std::vector<double> out(weight.rows());
    for (std::size_t p = 0; p < weight.rows(); ++p) {
        const float* w = weight.row(p);
        double acc = 0.0;
        for (std::size_t j = 0; j < d_in; ++j) {
            acc += static_cast<double>(x[j]) * static_cast<double>(w[j]);
        }
        out[p] = acc;
    }
    return out;
}

void check_mha_inputs(const MatF& candidates, const MatF& compressed, const MhaParams& params) {
    if (params.input_dim == 0 || params.output_dim == 0) {
        throw ValidationError("mha: params not initialized");
    }
    if (candidates.cols() != params.input_dim && candidates.rows() != 0) {
        throw ValidationError("mha: candidate dim " + std::to_string(candidates.cols()) +
                              " != input_dim " + std::to_string(params.input_dim));
    }
    if (compressed.cols() != params.input_dim) {
        throw ValidationError("mha: compressed dim " + std::to_string(compressed.cols()) +
                              " != input_dim " + std::to_string(params.input_dim));
    }
    if (compressed.rows() == 0) throw ValidationError("mha: empty key/value sequence");
}

// attention given precomputed projections; Q is M x (H*d_h)
MhaResult attention_core(const MatD& Q, const MatD& Kp, const MatD& Vp, const MhaParams& params) {
    const std::size_t M = Q.rows();
    const std::size_t K = Kp.rows();
    const std::size_t H = params.heads;
    const std::size_t dh = params.head_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    MhaResult result;
    result.attention = MatD(M * H, K);
    MatD concat(M, H * dh);
    std::vector<double> scores(K);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * dh;
            double max_score = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                double acc = 0.0;
                for (std::size_t t = 0; t < dh; ++t) acc += Q(m, off + t) * Kp(k, off + t);
                scores[k] = acc * scale;
                max_score = std::max(max_score, scores[k]);
            }
            double denom = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                scores[k] = std::exp(scores[k] - max_score);
                denom += scores[k];
            }
            double* attn = result.attention.row(m * H + h);
            for (std::size_t k = 0; k < K; ++k) {
                attn[k] = scores[k] / denom;
                for (std::size_t t = 0; t < dh; ++t) concat(m, off + t) += attn[k] * Vp(k, off + t);
            }
        }
    }

    result.output = MatD(M, params.output_dim);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t o = 0; o < params.output_dim; ++o) {
            double acc = 0.0;
            for (std::size_t t = 0; t < H * dh; ++t) {
                acc += concat(m, t) * static_cast<double>(params.wo(t, o));
            }
            result.output(m, o) = acc;
        }
    }
    return result;
}

} // namespace

MhaParams make_mha_params(uint32_t input_dim, uint32_t heads, uint32_t head_dim,
                          uint32_t output_dim, uint64_t seed) {
    if (input_dim == 0 || heads == 0 || head_dim == 0 || output_dim == 0) {
        throw ValidationError("make_mha_params: all dimensions must be >= 1");
    }
    MhaParams p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.input_dim = input_dim;
    p.output_dim = output_dim;
    p.seed = seed;
    const uint32_t pd = heads * head_dim;
    p.wq = MatF(pd, input_dim);
    p.wk = MatF(pd, input_dim);
    p.wv = MatF(pd, input_dim);
    p.wo = MatF(pd, output_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
    Prng q_rng(derive_seed(seed, stream::kMhaParams, 0));
    Prng k_rng(derive_seed(seed, stream::kMhaParams, 1));
    Prng v_rng(derive_seed(seed, stream::kMhaParams, 2));
    Prng o_rng(derive_seed(seed, stream::kMhaParams, 3));
    fill_random(p.wq, q_rng, scale);
    fill_random(p.wk, k_rng, scale);
    fill_random(p.wv, v_rng, scale);
    fill_random(p.wo, o_rng, 1.0 / std::sqrt(static_cast<double>(pd)));
    return p;
}

MhaResult mha_forward_full(const MatF& candidates, const MatF& compressed,
                           const MhaParams& params) {
    check_mha_inputs(candidates, compressed, params);
    if (candidates.rows() == 0) {
        MhaResult empty;
        empty.output = MatD(0, params.output_dim);
        empty.attention = MatD(0, compressed.rows());
        return empty;
    }
    const MatD Q = project(candidates, params.wq);
    const MatD Kp = project(compressed, params.wk);
    const MatD Vp = project(compressed, params.wv);
    return attention_core(Q, Kp, Vp, params);
}

MatD mha_forward(const MatF& candidates, const MatF& compressed, const MhaParams& params) {
    return mha_forward_full(candidates, compressed, params).output;
}

std::pair<MatD, CacheStats> cached_mha_forward(const CandidateBatch& candidates,
                                               const MatF& compressed, const MhaParams& params,
                                               CandidateQueryCache& cache) {
    if (candidates.ids.size() != candidates.features.rows()) {
        throw ValidationError("cached_mha_forward: id/feature count mismatch");
    }
    check_mha_inputs(candidates.features, compressed, params);
    const std::size_t M = candidates.features.rows();

    CacheStats stats;
    MatD Q(M, params.proj_dim());
    for (std::size_t m = 0; m < M; ++m) {
        bool hit = false;
        const float* feat = candidates.features.row(m);
        const auto row = cache.get_or_compute(
            candidates.ids[m],
            [&] { return project_row(feat, params.input_dim, params.wq); }, hit);
        if (hit) stats.hits += 1; else stats.misses += 1;
        std::copy(row.begin(), row.end(), Q.row(m));
    }
    if (M == 0) {
        MatD empty(0, params.output_dim);
        return {empty, stats};
    }
    const MatD Kp = project(compressed, params.wk);
    const MatD Vp = project(compressed, params.wv);
    return {attention_core(Q, Kp, Vp, params).output, stats};
}

FlopLedger flop_count(const AttentionShape& shape, FlopPath path, uint64_t query_hits,
                      bool kv_reuse) {
    if (shape.M == 0 || shape.d_in == 0 || shape.heads == 0 || shape.head_dim == 0 ||
        shape.d_out == 0) {
        throw ValidationError("flop_count: degenerate shape");
    }
    const uint64_t pd = shape.heads * shape.head_dim;
    const uint64_t kv_tokens = (path == FlopPath::direct) ? shape.N : shape.K;
    if (kv_tokens == 0) throw ValidationError("flop_count: zero key/value tokens");

    uint64_t q_tokens = shape.M;
    if (path == FlopPath::compressed_cached) {
        if (query_hits > shape.M) throw ValidationError("flop_count: hits exceed candidates");
        q_tokens = shape.M - query_hits;
    }
    const uint64_t kv_multiplier = kv_reuse ? 1 : shape.M;

    FlopLedger ledger;
    ledger.projection_flops =
        2 * q_tokens * shape.d_in * pd + 2 * (2 * kv_tokens) * shape.d_in * pd * kv_multiplier;
    ledger.score_flops = 2 * shape.M * kv_tokens * pd;
    ledger.weighted_sum_flops = 2 * shape.M * kv_tokens * pd;
    ledger.output_flops = 2 * shape.M * pd * shape.d_out;
    if (path != FlopPath::direct) {
        // routing weights for the compression itself
        ledger.score_flops += 2 * shape.N * shape.K * shape.d_sem;
    }
    return ledger;
}

double score_pair_ratio(const AttentionShape& shape, FlopPath path) {
    if (path == FlopPath::direct) return 1.0;
    if (shape.N == 0 || shape.M == 0) throw ValidationError("score_pair_ratio: degenerate shape");
    return static_cast<double>(shape.N * shape.K + shape.K * shape.M) /
           static_cast<double>(shape.N * shape.M);
}

void ServingConfig::validate() const {
    if (max_history < 1) throw ValidationError("serving config: max_history must be >= 1");
    if (budget.empty()) throw ValidationError("serving config: voting budget required");
    uint64_t k = 1;
    for (uint32_t b : budget) {
        if (b < 1) throw ValidationError("serving config: budget entries must be >= 1");
        k = std::min<uint64_t>(k * b, std::numeric_limits<uint32_t>::max());
    }
    if (k > max_history) {
        throw ValidationError("serving config: agent budget exceeds max_history (K <= N)");
    }
    if (!(tau > 0)) throw ValidationError("serving config: tau must be > 0");
    if (agent_refresh_period < 0) {
        throw ValidationError("serving config: agent_refresh_period must be >= 0");
    }
    if (heads == 0 || head_dim == 0 || d_out == 0) {
        throw ValidationError("serving config: attention dims must be >= 1");
    }
}

std::vector<RequestRecord> load_replay(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);
    std::vector<RequestRecord> out;
    std::string line;
    std::size_t row = 0;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("timestamp", 0) == 0) continue;
        }
        ++row;
        RequestRecord rec;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw ValidationError("replay parse error at row " + std::to_string(row));
        }
        auto parse_int = [&](const char* b, const char* e, auto& v) {
            auto [p, ec] = std::from_chars(b, e, v);
            if (ec != std::errc{} || p != e) {
                throw ValidationError("replay parse error at row " + std::to_string(row));
            }
        };
        parse_int(line.data(), line.data() + c1, rec.timestamp);
        parse_int(line.data() + c1 + 1, line.data() + c2, rec.user_id);
        std::size_t start = c2 + 1;
        while (start <= line.size()) {
            std::size_t semi = line.find(';', start);
            if (semi == std::string::npos) semi = line.size();
            if (semi > start) {
                uint64_t id = 0;
                parse_int(line.data() + start, line.data() + semi, id);
                rec.candidate_ids.push_back(id);
            }
            start = semi + 1;
        }
        if (rec.candidate_ids.empty()) {
            throw ValidationError("replay row " + std::to_string(row) + " has no candidates");
        }
        if (!out.empty() && out.back().timestamp > rec.timestamp) {
            throw ValidationError("replay not sorted by time at row " + std::to_string(row));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_replay(const std::vector<RequestRecord>& requests, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "timestamp,user_id,candidate_ids\n";
    for (const auto& r : requests) {
        os << r.timestamp << ',' << r.user_id << ',';
        for (std::size_t i = 0; i < r.candidate_ids.size(); ++i) {
            if (i) os << ';';
            os << r.candidate_ids[i];
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

ServingReport simulate_serving(const std::vector<RequestRecord>& requests,
                               const ItemCorpus& corpus, const CodebookStack& stack,
                               const std::vector<InteractionSequence>& histories,
                               const ServingConfig& cfg, CandidateQueryCache* external_cache) {
    cfg.validate();
    std::unordered_map<uint64_t, const InteractionSequence*> history_of;
    for (const auto& h : histories) history_of.emplace(h.user_id, &h);

    CandidateQueryCache local_cache(cfg.cache_capacity, cfg.cache_enabled);
    CandidateQueryCache& cache = external_cache ? *external_cache : local_cache;

    struct UserState {
        InterestAgentSet agents;
        int64_t built_at = 0;
        bool valid = false;
    };
    std::unordered_map<uint64_t, UserState> users;

    const std::size_t d_content = corpus.dim_ranking() + (cfg.time_decay.enabled ? 1 : 0);
    const MhaParams params = make_mha_params(static_cast<uint32_t>(d_content), cfg.heads,
                                             cfg.head_dim, cfg.d_out, cfg.seed);

    ServingReport report;
    report.requests.reserve(requests.size());
    int64_t last_ts = std::numeric_limits<int64_t>::min();

    for (const auto& req : requests) {
        if (req.timestamp < last_ts) throw ValidationError("simulate_serving: replay not sorted");
        last_ts = req.timestamp;

        const auto hit = history_of.find(req.user_id);
        if (hit == history_of.end()) {
            throw ValidationError("simulate_serving: no history for user " +
                                  std::to_string(req.user_id));
        }
        const InteractionSequence* full = hit->second;
        InteractionSequence truncated;
        const InteractionSequence* history = full;
        if (full->events.size() > cfg.max_history) {
            truncated.user_id = full->user_id;
            truncated.events.assign(full->events.end() - cfg.max_history, full->events.end());
            history = &truncated;
        }

        auto& state = users[req.user_id];
        bool rebuilt = false;
        if (!state.valid || req.timestamp - state.built_at >= cfg.agent_refresh_period) {
            state.agents = build_agents(*history, corpus, stack, cfg.budget, cfg.count_scale);
            state.built_at = req.timestamp;
            state.valid = true;
            rebuilt = true;
            report.agent_builds += 1;
        }

        RoutingConfig routing;
        routing.tau = cfg.tau;
        routing.time_decay = cfg.time_decay;
        routing.mode = RoutingMode::soft;
        const CompressedSequence compressed =
            soft_compress(state.agents, *history, corpus, routing, req.timestamp);

        CandidateBatch batch;
        batch.ids = req.candidate_ids;
        batch.features = MatF(req.candidate_ids.size(), d_content);
        for (std::size_t m = 0; m < req.candidate_ids.size(); ++m) {
            const auto idx = corpus.index_of(req.candidate_ids[m]);
            if (!idx) {
                throw ValidationError("simulate_serving: unknown candidate " +
                                      std::to_string(req.candidate_ids[m]));
            }
            std::copy_n(corpus.ranking().row(*idx), corpus.dim_ranking(), batch.features.row(m));
            if (cfg.time_decay.enabled) {
                batch.features(m, corpus.dim_ranking()) = 1.0f; // candidate at request time
            }
        }

        const auto t0 = std::chrono::steady_clock::now();
        const MatD vanilla_out = mha_forward(batch.features, compressed.vectors, params);
        const auto t1 = std::chrono::steady_clock::now();
        const auto [cached_out, stats] = cached_mha_forward(batch, compressed.vectors, params, cache);
        const auto t2 = std::chrono::steady_clock::now();

        double divergence = 0.0;
        for (std::size_t i = 0; i < vanilla_out.storage().size(); ++i) {
            divergence = std::max(divergence,
                                  std::abs(vanilla_out.storage()[i] - cached_out.storage()[i]));
        }

        AttentionShape shape;
        shape.N = history->events.size();
        shape.M = batch.features.rows();
        shape.K = compressed.size();
        shape.d_in = d_content;
        shape.heads = cfg.heads;
        shape.head_dim = cfg.head_dim;
        shape.d_out = cfg.d_out;
        shape.d_sem = corpus.dim_semantic();

        RequestReport rr;
        rr.timestamp = req.timestamp;
        rr.user_id = req.user_id;
        rr.n_tokens = shape.N;
        rr.k_agents = shape.K;
        rr.m_candidates = shape.M;
        rr.agents_rebuilt = rebuilt;
        rr.direct = flop_count(shape, FlopPath::direct);
        rr.vanilla = flop_count(shape, FlopPath::compressed, 0, cfg.kv_reuse_within_request);
        rr.cached =
            flop_count(shape, FlopPath::compressed_cached, stats.hits, cfg.kv_reuse_within_request);
        rr.query_cache = stats;
        rr.max_divergence = divergence;
        if (cfg.measure_wall_time) {
            rr.wall_micros_vanilla = std::chrono::duration<double, std::micro>(t1 - t0).count();
            rr.wall_micros_cached = std::chrono::duration<double, std::micro>(t2 - t1).count();
        }

        report.total_direct_flops += rr.direct.total();
        report.total_vanilla_flops += rr.vanilla.total();
        report.total_cached_flops += rr.cached.total();
        report.query_cache.hits += stats.hits;
        report.query_cache.misses += stats.misses;
        report.max_divergence = std::max(report.max_divergence, divergence);
        report.requests.push_back(std::move(rr));
    }

    report.wall_time_proxy_vanilla = static_cast<double>(report.total_vanilla_flops);
    report.wall_time_proxy_cached = static_cast<double>(report.total_cached_flops);
    return report;
}

} // namespace sqz
