#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sqz/corpus.hpp"
#include "sqz/routing.hpp"
#include "sqz/rq.hpp"
#include "sqz/serving.hpp"
#include "sqz/tree.hpp"

namespace sqz {

struct EvalServingConfig {
    bool enabled = false;
    uint32_t requests_per_user = 2;
    uint32_t candidates_per_request = 16;
    uint32_t heads = 4;
    uint32_t head_dim = 16;
    uint32_t d_out = 32;
    int64_t agent_refresh_period = 86400;
    uint64_t cache_capacity = 0;
};

struct EvalConfig {
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    SyntheticConfig synthetic;
    RqConfig rq;
    std::vector<uint32_t> budget{100, 2};
    double count_scale = 1.0;
    double tau = 0.835;
    TimeDecay time_decay;
    uint32_t baseline_groups = 200;
    uint32_t kmeans_iters = 10;
    uint32_t lsh_bits = 8;
    std::vector<std::string> methods{"soft", "hard", "soft_matched_only",
                                     "patch", "kmeans", "lsh"};
    EvalServingConfig serving;
    uint32_t threads = 1;

    void validate() const;
};

/// Parse a .json / .yaml / .yml config file.
EvalConfig load_eval_config(const std::string& path);

struct MethodSeedMetrics {
    std::string method;
    uint64_t seed = 0;
    double quantization_error = 0.0; // mean over users
    double silhouette = 0.0;         // mean over users with >= 2 groups
    double mean_groups = 0.0;        // agents or groups per user
};

struct MethodSummary {
    std::string method;
    double quantization_error_mean = 0.0;
    double quantization_error_std = 0.0;
};

struct SeedServingSummary {
    double hit_rate = 0.0;
    uint64_t total_direct_flops = 0;
    uint64_t total_vanilla_flops = 0;
    uint64_t total_cached_flops = 0;
    double max_divergence = 0.0;
    uint64_t agent_builds = 0;
};

struct SeedSummary {
    uint64_t seed = 0;
    double agent_recovery = 0.0;  // mean over users
    double mean_agents = 0.0;
    double rq_reconstruction = 0.0;
    double rq_total_loss = 0.0;
    std::optional<SeedServingSummary> serving;
};

struct EvalReport {
    uint32_t schema_version = 1;
    std::string config_echo; // canonical JSON of the resolved config
    std::vector<std::string> methods;
    std::vector<uint64_t> seeds;
    std::vector<MethodSeedMetrics> metrics;      // methods x seeds
    std::vector<MethodSummary> method_summaries; // mean +- std over seeds
    std::vector<std::string> method_ranking;     // ascending mean quantization error
    std::vector<SeedSummary> seed_summaries;
};

/// Full pipeline: generate -> train -> tokenize -> vote -> compress with
/// every configured method -> metrics -> optional serving replay. Stage
/// failures abort with the stage name and an input digest in the message.
EvalReport run_pipeline(const EvalConfig& config);
EvalReport run_pipeline(const std::string& config_path);

/// Fraction of the user's top-|agents| fine clusters (by interaction count)
/// whose majority SID appears among the agent paths. Requires corpus SIDs.
double agent_recovery_rate(const InterestAgentSet& agents, const InteractionSequence& history,
                           const GroundTruth& truth, const ItemCorpus& corpus);

enum class ReportFormat { json, csv };

/// JSON is canonical (sorted keys) apart from a `generated_at` timestamp;
/// CSV flattens to one row per (method, seed).
void export_report(const EvalReport& report, const std::string& path, ReportFormat format);

/// The canonical JSON body without the timestamp field (what determinism
/// checks compare).
std::string report_canonical_json(const EvalReport& report);

} // namespace sqz
