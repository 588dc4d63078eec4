#include "sqz/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "sqz/baselines.hpp"
#include "sqz/error.hpp"
#include "sqz/prng.hpp"

namespace sqz {

namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null: return nullptr;
        case YAML::NodeType::Scalar: {
            // try bool, integer, double, then string
            try {
                if (node.Tag() != "!") {
                    const std::string& raw = node.Scalar();
                    if (raw == "true" || raw == "false") return node.as<bool>();
                    if (!raw.empty() && raw.find_first_not_of("+-0123456789") == std::string::npos) {
                        return node.as<int64_t>();
                    }
                    if (!raw.empty() &&
                        raw.find_first_not_of("+-0123456789.eE") == std::string::npos) {
                        return node.as<double>();
                    }
                }
            } catch (const YAML::Exception&) {
            }
            return node.as<std::string>();
        }
        case YAML::NodeType::Sequence: {
            json arr = json::array();
            for (const auto& item : node) arr.push_back(yaml_to_json(item));
            return arr;
        }
        case YAML::NodeType::Map: {
            json obj = json::object();
            for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return obj;
        }
        default: return nullptr;
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

EvalConfig config_from_json(const json& j) {
    EvalConfig cfg;
    read_field(j, "seeds", cfg.seeds);
    if (j.contains("synthetic")) {
        const auto& s = j.at("synthetic");
        read_field(s, "num_coarse_clusters", cfg.synthetic.num_coarse_clusters);
        read_field(s, "num_fine_per_coarse", cfg.synthetic.num_fine_per_coarse);
        read_field(s, "items_per_fine", cfg.synthetic.items_per_fine);
        read_field(s, "d", cfg.synthetic.d);
        read_field(s, "d_prime", cfg.synthetic.d_prime);
        read_field(s, "coarse_spread", cfg.synthetic.coarse_spread);
        read_field(s, "fine_spread", cfg.synthetic.fine_spread);
        read_field(s, "noise_sigma", cfg.synthetic.noise_sigma);
        read_field(s, "num_users", cfg.synthetic.num_users);
        read_field(s, "history_length", cfg.synthetic.history_length);
        read_field(s, "zipf_exponent", cfg.synthetic.zipf_exponent);
        read_field(s, "base_timestamp", cfg.synthetic.base_timestamp);
        read_field(s, "timestamp_spacing", cfg.synthetic.timestamp_spacing);
    }
    if (j.contains("rq")) {
        const auto& r = j.at("rq");
        read_field(r, "levels", cfg.rq.levels);
        if (r.contains("codebook_size")) {
            cfg.rq.codebook_sizes = {r.at("codebook_size").get<uint32_t>()};
        }
        read_field(r, "codebook_sizes", cfg.rq.codebook_sizes);
        read_field(r, "ema_decay", cfg.rq.ema_decay);
        read_field(r, "epsilon", cfg.rq.epsilon);
        read_field(r, "dead_threshold", cfg.rq.dead_threshold);
        read_field(r, "epochs", cfg.rq.epochs);
    }
    if (j.contains("voting")) {
        const auto& v = j.at("voting");
        read_field(v, "budget", cfg.budget);
        read_field(v, "count_scale", cfg.count_scale);
    }
    if (j.contains("routing")) {
        const auto& r = j.at("routing");
        read_field(r, "tau", cfg.tau);
        if (r.contains("time_decay")) {
            const auto& t = r.at("time_decay");
            read_field(t, "enabled", cfg.time_decay.enabled);
            read_field(t, "half_life", cfg.time_decay.half_life);
        }
    }
    if (j.contains("baselines")) {
        const auto& b = j.at("baselines");
        read_field(b, "groups", cfg.baseline_groups);
        read_field(b, "kmeans_iters", cfg.kmeans_iters);
        read_field(b, "lsh_bits", cfg.lsh_bits);
    }
    read_field(j, "methods", cfg.methods);
    if (j.contains("serving")) {
        const auto& s = j.at("serving");
        read_field(s, "enabled", cfg.serving.enabled);
        read_field(s, "requests_per_user", cfg.serving.requests_per_user);
        read_field(s, "candidates_per_request", cfg.serving.candidates_per_request);
        read_field(s, "heads", cfg.serving.heads);
        read_field(s, "head_dim", cfg.serving.head_dim);
        read_field(s, "d_out", cfg.serving.d_out);
        read_field(s, "agent_refresh_period", cfg.serving.agent_refresh_period);
        read_field(s, "cache_capacity", cfg.serving.cache_capacity);
    }
    read_field(j, "threads", cfg.threads);
    return cfg;
}

json config_to_json(const EvalConfig& cfg) {
    json j;
    j["seeds"] = cfg.seeds;
    j["synthetic"] = {{"num_coarse_clusters", cfg.synthetic.num_coarse_clusters},
                      {"num_fine_per_coarse", cfg.synthetic.num_fine_per_coarse},
                      {"items_per_fine", cfg.synthetic.items_per_fine},
                      {"d", cfg.synthetic.d},
                      {"d_prime", cfg.synthetic.d_prime},
                      {"coarse_spread", cfg.synthetic.coarse_spread},
                      {"fine_spread", cfg.synthetic.fine_spread},
                      {"noise_sigma", cfg.synthetic.noise_sigma},
                      {"num_users", cfg.synthetic.num_users},
                      {"history_length", cfg.synthetic.history_length},
                      {"zipf_exponent", cfg.synthetic.zipf_exponent},
                      {"base_timestamp", cfg.synthetic.base_timestamp},
                      {"timestamp_spacing", cfg.synthetic.timestamp_spacing}};
    j["rq"] = {{"levels", cfg.rq.levels},
               {"codebook_sizes", cfg.rq.codebook_sizes},
               {"ema_decay", cfg.rq.ema_decay},
               {"epsilon", cfg.rq.epsilon},
               {"dead_threshold", cfg.rq.dead_threshold},
               {"epochs", cfg.rq.epochs}};
    j["voting"] = {{"budget", cfg.budget}, {"count_scale", cfg.count_scale}};
    j["routing"] = {{"tau", cfg.tau},
                    {"time_decay",
                     {{"enabled", cfg.time_decay.enabled}, {"half_life", cfg.time_decay.half_life}}}};
    j["baselines"] = {{"groups", cfg.baseline_groups},
                      {"kmeans_iters", cfg.kmeans_iters},
                      {"lsh_bits", cfg.lsh_bits}};
    j["methods"] = cfg.methods;
    j["serving"] = {{"enabled", cfg.serving.enabled},
                    {"requests_per_user", cfg.serving.requests_per_user},
                    {"candidates_per_request", cfg.serving.candidates_per_request},
                    {"heads", cfg.serving.heads},
                    {"head_dim", cfg.serving.head_dim},
                    {"d_out", cfg.serving.d_out},
                    {"agent_refresh_period", cfg.serving.agent_refresh_period},
                    {"cache_capacity", cfg.serving.cache_capacity}};
    // threads is an execution knob, not part of the experiment identity
    return j;
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

const std::vector<std::string> kKnownMethods = {"soft",  "hard",   "soft_matched_only",
                                                "patch", "kmeans", "lsh"};

uint64_t config_digest(const EvalConfig& cfg, uint64_t seed) {
    const std::string body = config_to_json(cfg).dump();
    uint64_t h = 1469598103934665603ULL;
    for (char c : body) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    h ^= seed;
    h *= 1099511628211ULL;
    return h;
}

[[noreturn]] void stage_error(const char* stage, uint64_t digest, const std::exception& e) {
    throw std::runtime_error("stage '" + std::string(stage) + "' (input digest " +
                             std::to_string(digest) + "): " + e.what());
}

/// Index-sliced parallel map with deterministic result placement.
void parallel_for(std::size_t n, uint32_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const uint32_t workers = std::min<uint32_t>(threads, static_cast<uint32_t>(n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    for (uint32_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs, double mean) {
    if (xs.size() < 2) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

struct UserArtifacts {
    InterestAgentSet agents;
    double recovery = 0.0;
};

// labels for silhouette under each method's assignment view
std::vector<uint32_t> hisac_labels(const CompressedSequence& comp,
                                   const InteractionSequence& history, const ItemCorpus& corpus,
                                   bool exact_match_only) {
    std::vector<uint32_t> labels(history.events.size());
    std::unordered_map<SemanticId, uint32_t, SemanticIdHash> paths;
    for (std::size_t k = 0; k < comp.agent_paths.size(); ++k) {
        paths.emplace(comp.agent_paths[k], static_cast<uint32_t>(k));
    }
    uint32_t next_singleton = static_cast<uint32_t>(comp.agent_paths.size());
    for (std::size_t n = 0; n < history.events.size(); ++n) {
        const std::size_t item = *corpus.index_of(history.events[n].item_id);
        if (exact_match_only) {
            const auto it = paths.find(corpus.sid_of(item));
            labels[n] = it != paths.end() ? it->second : next_singleton++;
        } else {
            // nearest prototype (the argmax of the per-item softmax at any tau)
            const float* e = corpus.semantic().row(item);
            uint32_t best = 0;
            double best_dist = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < comp.prototypes.rows(); ++k) {
                const double dd =
                    squared_l2(e, comp.prototypes.row(k), corpus.dim_semantic());
                if (dd < best_dist) {
                    best_dist = dd;
                    best = static_cast<uint32_t>(k);
                }
            }
            labels[n] = best;
        }
    }
    return labels;
}

MatF history_semantic(const InteractionSequence& history, const ItemCorpus& corpus) {
    MatF out(history.events.size(), corpus.dim_semantic());
    for (std::size_t n = 0; n < history.events.size(); ++n) {
        const auto idx = corpus.index_of(history.events[n].item_id);
        std::copy_n(corpus.semantic().row(*idx), corpus.dim_semantic(), out.row(n));
    }
    return out;
}

// silhouette is O(N^2); long histories are scored on a deterministic prefix
constexpr std::size_t kSilhouetteCap = 256;

double safe_silhouette(const MatF& points, const std::vector<uint32_t>& labels, bool& ok) {
    const std::size_t n = std::min(points.rows(), kSilhouetteCap);
    MatF head(n, points.cols());
    std::vector<uint32_t> head_labels(labels.begin(), labels.begin() + n);
    std::copy_n(points.storage().begin(), n * points.cols(), head.storage().begin());

    std::unordered_map<uint32_t, uint32_t> distinct;
    for (uint32_t l : head_labels) distinct.emplace(l, 0);
    if (distinct.size() < 2) {
        ok = false;
        return 0.0;
    }
    ok = true;
    return silhouette(head, head_labels);
}

} // namespace

void EvalConfig::validate() const {
    if (seeds.empty()) throw ValidationError("eval config: at least one seed required");
    synthetic.validate();
    rq.validate();
    if (budget.empty()) throw ValidationError("eval config: voting budget required");
    if (budget.size() != rq.levels) {
        throw ValidationError("eval config: budget must have one entry per rq level");
    }
    if (!(tau > 0)) throw ValidationError("eval config: tau must be > 0");
    if (methods.empty()) throw ValidationError("eval config: methods list empty");
    for (const auto& m : methods) {
        if (std::find(kKnownMethods.begin(), kKnownMethods.end(), m) == kKnownMethods.end()) {
            throw ValidationError("eval config: unknown method '" + m + "'");
        }
    }
    if (baseline_groups < 1) throw ValidationError("eval config: baseline groups must be >= 1");
    if (lsh_bits < 1 || lsh_bits > 30) throw ValidationError("eval config: lsh_bits out of range");
}

EvalConfig load_eval_config(const std::string& path) {
    json j;
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
    if (ext == ".yaml" || ext == ".yml") {
        try {
            j = yaml_to_json(YAML::LoadFile(path));
        } catch (const YAML::Exception& e) {
            throw ValidationError("config parse error in " + path + ": " + e.what());
        }
    } else {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open " + path);
        try {
            j = json::parse(is);
        } catch (const json::parse_error& e) {
            throw ValidationError("config parse error in " + path + ": " + e.what());
        }
    }
    EvalConfig cfg = config_from_json(j);
    cfg.validate();
    return cfg;
}

double agent_recovery_rate(const InterestAgentSet& agents, const InteractionSequence& history,
                           const GroundTruth& truth, const ItemCorpus& corpus) {
    if (truth.fine_label.size() != corpus.size()) {
        throw ValidationError("agent_recovery_rate: ground truth does not match corpus");
    }
    if (!corpus.has_sids()) {
        throw ValidationError("agent_recovery_rate: corpus has no SIDs; run tokenization first");
    }
    if (agents.agents.empty()) return 0.0;

    // the user's interaction count per fine cluster
    std::unordered_map<uint32_t, uint64_t> counts;
    for (const auto& ev : history.events) {
        const auto idx = corpus.index_of(ev.item_id);
        if (!idx) {
            throw ValidationError("agent_recovery_rate: unknown item " +
                                  std::to_string(ev.item_id));
        }
        counts[truth.fine_label[*idx]] += 1;
    }
    if (counts.empty()) return 0.0;

    std::vector<std::pair<uint32_t, uint64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    const std::size_t top = std::min(ranked.size(), agents.agents.size());

    // majority SID per fine cluster, over the whole corpus
    std::unordered_map<uint32_t, std::map<SemanticId, uint64_t>> sid_counts;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        sid_counts[truth.fine_label[i]][corpus.sid_of(i)] += 1;
    }

    std::unordered_map<SemanticId, bool, SemanticIdHash> agent_paths;
    for (const auto& a : agents.agents) agent_paths.emplace(a.path, true);

    std::size_t recovered = 0;
    for (std::size_t r = 0; r < top; ++r) {
        const auto& per_sid = sid_counts[ranked[r].first];
        const SemanticId* majority = nullptr;
        uint64_t best = 0;
        for (const auto& [sid, c] : per_sid) {
            if (c > best) { // map order makes ties resolve to the smaller SID
                best = c;
                majority = &sid;
            }
        }
        if (majority && agent_paths.contains(*majority)) recovered += 1;
    }
    return static_cast<double>(recovered) / static_cast<double>(top);
}

namespace {

struct SeedResult {
    std::vector<MethodSeedMetrics> metrics;
    SeedSummary summary;
};

SeedResult run_seed(const EvalConfig& cfg, uint64_t seed) {
    const uint64_t digest = config_digest(cfg, seed);

    SyntheticConfig syn = cfg.synthetic;
    syn.seed = seed;
    ItemCorpus corpus;
    GroundTruth truth;
    try {
        auto [c, t] = generate_synthetic_corpus(syn);
        corpus = std::move(c);
        truth = std::move(t);
    } catch (const std::exception& e) {
        stage_error("generate", digest, e);
    }

    RqConfig rq_cfg = cfg.rq;
    rq_cfg.seed = seed;
    CodebookStack stack;
    try {
        stack = train_codebooks(corpus.semantic(), rq_cfg);
    } catch (const std::exception& e) {
        stage_error("train-codebooks", digest, e);
    }

    try {
        corpus.assign_sids(quantize_all(corpus.semantic(), stack));
    } catch (const std::exception& e) {
        stage_error("tokenize", digest, e);
    }

    std::vector<InteractionSequence> histories;
    try {
        histories = generate_user_histories(syn, corpus);
    } catch (const std::exception& e) {
        stage_error("histories", digest, e);
    }

    const std::size_t U = histories.size();
    std::vector<UserArtifacts> users(U);
    try {
        parallel_for(U, cfg.threads, [&](std::size_t u) {
            users[u].agents =
                build_agents(histories[u], corpus, stack, cfg.budget, cfg.count_scale);
            users[u].recovery = agent_recovery_rate(users[u].agents, histories[u], truth, corpus);
        });
    } catch (const std::exception& e) {
        stage_error("vote", digest, e);
    }

    SeedResult result;
    result.summary.seed = seed;
    {
        std::vector<double> rec(U, 0.0), agents_n(U, 0.0);
        for (std::size_t u = 0; u < U; ++u) {
            rec[u] = users[u].recovery;
            agents_n[u] = static_cast<double>(users[u].agents.size());
        }
        result.summary.agent_recovery = mean_of(rec);
        result.summary.mean_agents = mean_of(agents_n);
    }
    {
        const auto loss = rq_loss(corpus.semantic(), stack, 0.25);
        result.summary.rq_reconstruction = loss.reconstruction;
        result.summary.rq_total_loss = loss.total;
    }

    for (const auto& method : cfg.methods) {
        std::vector<double> errors(U, 0.0), sils(U, 0.0), groups(U, 0.0);
        std::vector<char> sil_ok(U, 0);
        try {
            parallel_for(U, cfg.threads, [&](std::size_t u) {
                const auto& history = histories[u];
                const auto& agents = users[u].agents;
                const MatF points = history_semantic(history, corpus);
                bool ok = false;
                if (method == "soft" || method == "hard" || method == "soft_matched_only") {
                    RoutingConfig rc;
                    rc.tau = cfg.tau;
                    rc.time_decay = cfg.time_decay;
                    rc.mode = method == "soft"  ? RoutingMode::soft
                              : method == "hard" ? RoutingMode::hard
                                                 : RoutingMode::soft_matched_only;
                    const int64_t now = history.events.back().timestamp + 1;
                    const auto comp = compress(agents, history, corpus, rc, now);
                    QuantizationRule rule;
                    rule.tau = cfg.tau;
                    rule.kind = method == "soft" ? QuantizationRule::Kind::soft_mixture
                                : method == "hard"
                                    ? QuantizationRule::Kind::exact_match
                                    : QuantizationRule::Kind::matched_mixture;
                    errors[u] = quantization_error(comp, history, corpus, rule);
                    groups[u] = static_cast<double>(comp.size());
                    const auto labels = hisac_labels(comp, history, corpus, method != "soft");
                    sils[u] = safe_silhouette(points, labels, ok);
                } else {
                    GroupingResult g;
                    if (method == "patch") {
                        g = patch_compress(history, corpus, cfg.baseline_groups);
                    } else if (method == "kmeans") {
                        const auto k = std::min<uint32_t>(
                            cfg.baseline_groups, static_cast<uint32_t>(history.events.size()));
                        g = kmeans_compress(history, corpus, k, cfg.kmeans_iters, seed);
                    } else {
                        g = lsh_compress(history, corpus, cfg.lsh_bits, seed);
                    }
                    errors[u] = grouping_quantization_error(g, history, corpus);
                    groups[u] = static_cast<double>(g.num_groups());
                    sils[u] = safe_silhouette(points, g.group_of, ok);
                }
                sil_ok[u] = ok ? 1 : 0;
            });
        } catch (const std::exception& e) {
            stage_error(("compress:" + method).c_str(), digest, e);
        }

        MethodSeedMetrics m;
        m.method = method;
        m.seed = seed;
        m.quantization_error = mean_of(errors);
        std::vector<double> valid_sils;
        for (std::size_t u = 0; u < U; ++u) {
            if (sil_ok[u]) valid_sils.push_back(sils[u]);
        }
        m.silhouette = mean_of(valid_sils);
        m.mean_groups = mean_of(groups);
        result.metrics.push_back(std::move(m));
    }

    if (cfg.serving.enabled) {
        try {
            // synthesize a replay: every user issues requests after its history
            Prng rng(derive_seed(seed, stream::kReplay));
            std::vector<RequestRecord> replay;
            const int64_t start = syn.base_timestamp +
                                  static_cast<int64_t>(syn.history_length) * syn.timestamp_spacing;
            for (uint32_t r = 0; r < cfg.serving.requests_per_user; ++r) {
                for (const auto& h : histories) {
                    RequestRecord req;
                    req.timestamp = start + static_cast<int64_t>(r) * 3600;
                    req.user_id = h.user_id;
                    for (uint32_t c = 0; c < cfg.serving.candidates_per_request; ++c) {
                        req.candidate_ids.push_back(
                            corpus.ids()[rng.bounded(corpus.size())]);
                    }
                    replay.push_back(std::move(req));
                }
            }
            std::stable_sort(replay.begin(), replay.end(),
                             [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

            ServingConfig scfg;
            scfg.max_history = cfg.synthetic.history_length;
            scfg.candidates_per_request = cfg.serving.candidates_per_request;
            scfg.budget = cfg.budget;
            scfg.count_scale = cfg.count_scale;
            scfg.tau = cfg.tau;
            scfg.time_decay = cfg.time_decay;
            scfg.agent_refresh_period = cfg.serving.agent_refresh_period;
            scfg.cache_capacity = cfg.serving.cache_capacity;
            scfg.heads = cfg.serving.heads;
            scfg.head_dim = cfg.serving.head_dim;
            scfg.d_out = cfg.serving.d_out;
            scfg.seed = seed;
            const auto rep = simulate_serving(replay, corpus, stack, histories, scfg);

            SeedServingSummary s;
            s.hit_rate = rep.query_cache.hit_rate();
            s.total_direct_flops = rep.total_direct_flops;
            s.total_vanilla_flops = rep.total_vanilla_flops;
            s.total_cached_flops = rep.total_cached_flops;
            s.max_divergence = rep.max_divergence;
            s.agent_builds = rep.agent_builds;
            result.summary.serving = s;
        } catch (const std::exception& e) {
            stage_error("serving", digest, e);
        }
    }
    return result;
}

} // namespace

EvalReport run_pipeline(const EvalConfig& config) {
    config.validate();

    EvalReport report;
    report.schema_version = 1;
    report.config_echo = config_to_json(config).dump();
    report.methods = config.methods;
    report.seeds = config.seeds;

    std::vector<SeedResult> per_seed(config.seeds.size());
    // seeds are independent pipelines; results merge in seed order
    parallel_for(config.seeds.size(), std::min<uint32_t>(config.threads, 4),
                 [&](std::size_t s) { per_seed[s] = run_seed(config, config.seeds[s]); });

    for (const auto& sr : per_seed) {
        report.seed_summaries.push_back(sr.summary);
        for (const auto& m : sr.metrics) report.metrics.push_back(m);
    }

    // every configured method must have one metric row per seed
    for (const auto& method : config.methods) {
        std::vector<double> errors;
        for (const auto& m : report.metrics) {
            if (m.method == method) errors.push_back(m.quantization_error);
        }
        if (errors.size() != config.seeds.size()) {
            throw std::runtime_error("eval: method '" + method + "' missing from metrics");
        }
        MethodSummary summary;
        summary.method = method;
        summary.quantization_error_mean = mean_of(errors);
        summary.quantization_error_std = std_of(errors, summary.quantization_error_mean);
        report.method_summaries.push_back(std::move(summary));
    }

    std::vector<std::pair<double, std::string>> ranking;
    for (const auto& s : report.method_summaries) {
        ranking.emplace_back(s.quantization_error_mean, s.method);
    }
    std::sort(ranking.begin(), ranking.end());
    for (const auto& [err, name] : ranking) report.method_ranking.push_back(name);
    return report;
}

EvalReport run_pipeline(const std::string& config_path) {
    return run_pipeline(load_eval_config(config_path));
}

namespace {

json report_to_json(const EvalReport& report) {
    json j;
    j["schema_version"] = report.schema_version;
    j["config"] = json::parse(report.config_echo);
    j["methods"] = report.methods;
    j["seeds"] = report.seeds;
    json metrics = json::array();
    for (const auto& m : report.metrics) {
        metrics.push_back({{"method", m.method},
                           {"seed", m.seed},
                           {"quantization_error", m.quantization_error},
                           {"silhouette", m.silhouette},
                           {"mean_groups", m.mean_groups}});
    }
    j["metrics"] = metrics;
    json summaries = json::array();
    for (const auto& s : report.method_summaries) {
        summaries.push_back({{"method", s.method},
                             {"quantization_error_mean", s.quantization_error_mean},
                             {"quantization_error_std", s.quantization_error_std}});
    }
    j["method_summaries"] = summaries;
    j["method_ranking"] = report.method_ranking;
    json seeds = json::array();
    for (const auto& s : report.seed_summaries) {
        json sj = {{"seed", s.seed},
                   {"agent_recovery", s.agent_recovery},
                   {"mean_agents", s.mean_agents},
                   {"rq_reconstruction", s.rq_reconstruction},
                   {"rq_total_loss", s.rq_total_loss}};
        if (s.serving) {
            sj["serving"] = {{"hit_rate", s.serving->hit_rate},
                             {"total_direct_flops", s.serving->total_direct_flops},
                             {"total_vanilla_flops", s.serving->total_vanilla_flops},
                             {"total_cached_flops", s.serving->total_cached_flops},
                             {"max_divergence", s.serving->max_divergence},
                             {"agent_builds", s.serving->agent_builds}};
        }
        seeds.push_back(std::move(sj));
    }
    j["seed_summaries"] = seeds;
    return j;
}

} // namespace

std::string report_canonical_json(const EvalReport& report) {
    return report_to_json(report).dump(2);
}

void export_report(const EvalReport& report, const std::string& path, ReportFormat format) {
    if (format == ReportFormat::json) {
        json j = report_to_json(report);
        const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&now, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        j["generated_at"] = buf;
        std::ofstream os(path);
        if (!os) throw IoError("cannot open " + path + " for writing");
        os << j.dump(2) << "\n";
        if (!os) throw IoError("write failed: " + path);
        return;
    }

    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os << "method,seed,quantization_error,silhouette,mean_groups\n";
    os.precision(17);
    for (const auto& m : report.metrics) {
        os << m.method << ',' << m.seed << ',' << m.quantization_error << ',' << m.silhouette
           << ',' << m.mean_groups << "\n";
    }
    if (!os) throw IoError("write failed: " + path);
}

} // namespace sqz
