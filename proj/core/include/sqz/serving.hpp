#pragma once

#include <cstdint>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sqz/corpus.hpp"
#include "sqz/matrix.hpp"
#include "sqz/routing.hpp"
#include "sqz/rq.hpp"

namespace sqz {

/// Multi-head attention parameters. Projections are seeded-random: the
/// equivalence and FLOP properties under test are parameter-independent.
struct MhaParams {
    uint32_t heads = 4;
    uint32_t head_dim = 16;
    uint32_t input_dim = 0;  // d''
    uint32_t output_dim = 0; // d_out
    MatF wq, wk, wv;         // (heads*head_dim) x input_dim
    MatF wo;                 // (heads*head_dim) x output_dim
    uint64_t seed = 1;

    uint32_t proj_dim() const { return heads * head_dim; }
};

MhaParams make_mha_params(uint32_t input_dim, uint32_t heads, uint32_t head_dim,
                          uint32_t output_dim, uint64_t seed);

/// Exact operation counts. Convention: 1 multiply-accumulate = 2 FLOPs;
/// softmax/exponential costs are excluded (projections and matmuls only).
/// For compressed paths, score_flops includes the routing-weight cost
/// 2*N*K*d of building the compression.
struct FlopLedger {
    uint64_t projection_flops = 0;
    uint64_t score_flops = 0;
    uint64_t weighted_sum_flops = 0;
    uint64_t output_flops = 0;

    uint64_t total() const {
        return projection_flops + score_flops + weighted_sum_flops + output_flops;
    }
    double projection_share() const {
        const uint64_t t = total();
        return t == 0 ? 0.0 : static_cast<double>(projection_flops) / static_cast<double>(t);
    }
};

struct AttentionShape {
    uint64_t N = 0;        // full history tokens
    uint64_t M = 0;        // candidates
    uint64_t K = 0;        // compressed tokens
    uint64_t d_in = 0;     // d''
    uint64_t heads = 0;
    uint64_t head_dim = 0;
    uint64_t d_out = 0;
    uint64_t d_sem = 0;    // routing distance dimension d
};

enum class FlopPath { direct, compressed, compressed_cached };

/// Closed-form ledger. query_hits only applies to compressed_cached;
/// kv_reuse=false charges the K/V projections once per candidate instead of
/// once per request.
FlopLedger flop_count(const AttentionShape& shape, FlopPath path, uint64_t query_hits = 0,
                      bool kv_reuse = true);

/// Token-pair ratio (N*K + K*M) / (N*M) for compressed paths, 1 for direct.
double score_pair_ratio(const AttentionShape& shape, FlopPath path);

struct MhaResult {
    MatD output;   // M x d_out
    MatD attention; // (M*heads) x K, row-stochastic
};

/// Scaled dot-product attention: candidates are queries, the compressed
/// sequence is both keys and values. Double accumulation throughout.
MhaResult mha_forward_full(const MatF& candidates, const MatF& compressed, const MhaParams& params);
MatD mha_forward(const MatF& candidates, const MatF& compressed, const MhaParams& params);

struct CandidateBatch {
    std::vector<uint64_t> ids;
    MatF features; // M x d''
};

struct CacheStats {
    uint64_t hits = 0;
    uint64_t misses = 0;
    double hit_rate() const {
        const uint64_t t = hits + misses;
        return t == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(t);
    }
};

/// Post-projection candidate query rows keyed by item id. Get-or-compute is
/// atomic; optional LRU eviction when capacity > 0.
class CandidateQueryCache {
public:
    explicit CandidateQueryCache(uint64_t capacity = 0, bool enabled = true)
        : capacity_(capacity), enabled_(enabled) {}

    /// Returns the cached row or computes+inserts via `compute`.
    /// Sets `hit` accordingly. Disabled caches always compute.
    template <typename F>
    std::vector<double> get_or_compute(uint64_t id, F&& compute, bool& hit) {
        if (!enabled_) {
            hit = false;
            return compute();
        }
        std::lock_guard<std::mutex> lock(mu_);
        const auto it = map_.find(id);
        if (it != map_.end()) {
            hit = true;
            touch(it->second);
            return it->second->row;
        }
        hit = false;
        auto row = compute();
        insert(id, row);
        return row;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mu_);
        return map_.size();
    }
    void clear() {
        std::lock_guard<std::mutex> lock(mu_);
        entries_.clear();
        map_.clear();
    }

private:
    struct Entry {
        uint64_t id;
        std::vector<double> row;
    };
    using List = std::list<Entry>;

    void touch(List::iterator it) {
        if (capacity_ > 0) entries_.splice(entries_.begin(), entries_, it);
    }
    void insert(uint64_t id, const std::vector<double>& row) {
        entries_.push_front(Entry{id, row});
        map_[id] = entries_.begin();
        if (capacity_ > 0 && entries_.size() > capacity_) {
            map_.erase(entries_.back().id);
            entries_.pop_back();
        }
    }

    mutable std::mutex mu_;
    List entries_;
    std::unordered_map<uint64_t, List::iterator> map_;
    uint64_t capacity_;
    bool enabled_;
};

/// Attention with the candidate-query cache in front of the Q projection.
/// K/V are projected once per call. Output is identical to mha_forward.
std::pair<MatD, CacheStats> cached_mha_forward(const CandidateBatch& candidates,
                                               const MatF& compressed, const MhaParams& params,
                                               CandidateQueryCache& cache);

struct ServingConfig {
    uint32_t max_history = 10000;          // N
    uint32_t candidates_per_request = 200; // M (nominal)
    std::vector<uint32_t> budget{100, 2};  // voting budget (K upper bound)
    double count_scale = 1.0;
    double tau = 0.835;
    TimeDecay time_decay;
    int64_t agent_refresh_period = 86400;
    uint64_t cache_capacity = 0; // 0 = unbounded
    bool cache_enabled = true;
    bool kv_reuse_within_request = true;
    bool measure_wall_time = false;
    uint32_t heads = 4;
    uint32_t head_dim = 16;
    uint32_t d_out = 64;
    uint64_t seed = 1;

    void validate() const;
};

struct RequestRecord {
    int64_t timestamp = 0;
    uint64_t user_id = 0;
    std::vector<uint64_t> candidate_ids;
};

/// Replay CSV `timestamp,user_id,candidate_ids` with ids `;`-separated.
std::vector<RequestRecord> load_replay(const std::string& path);
void save_replay(const std::vector<RequestRecord>& requests, const std::string& path);

struct RequestReport {
    int64_t timestamp = 0;
    uint64_t user_id = 0;
    uint64_t n_tokens = 0; // history length used
    uint64_t k_agents = 0;
    uint64_t m_candidates = 0;
    bool agents_rebuilt = false;
    FlopLedger direct;  // uncompressed N x M attention, for reference
    FlopLedger vanilla; // compressed, no cache
    FlopLedger cached;  // compressed + query cache
    CacheStats query_cache;
    double max_divergence = 0.0;
    double wall_micros_vanilla = 0.0;
    double wall_micros_cached = 0.0;
};

struct ServingReport {
    std::vector<RequestReport> requests;
    uint64_t agent_builds = 0;
    uint64_t total_direct_flops = 0;
    uint64_t total_vanilla_flops = 0;
    uint64_t total_cached_flops = 0;
    CacheStats query_cache;
    double max_divergence = 0.0;
    // FLOPs are the wall-time proxy; real timing is optional and noisy.
    double wall_time_proxy_vanilla = 0.0;
    double wall_time_proxy_cached = 0.0;
};

/// Replays requests in time order: agents are rebuilt on the refresh cadence,
/// the history is compressed once per request, and both attention paths run
/// with their ledgers and divergence recorded. Pass an external cache to
/// carry query-cache state across replays.
ServingReport simulate_serving(const std::vector<RequestRecord>& requests,
                               const ItemCorpus& corpus, const CodebookStack& stack,
                               const std::vector<InteractionSequence>& histories,
                               const ServingConfig& cfg,
                               CandidateQueryCache* external_cache = nullptr);

} // namespace sqz
