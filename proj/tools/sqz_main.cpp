// sqz: sequence-compression toolkit CLI.
// Exit codes: 0 success, 2 validation/config error, 1 runtime error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "sqz/baselines.hpp"
#include "sqz/corpus.hpp"
#include "sqz/error.hpp"
#include "sqz/eval.hpp"
#include "sqz/routing.hpp"
#include "sqz/rq.hpp"
#include "sqz/serving.hpp"
#include "sqz/tree.hpp"

namespace {

using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

int g_log_level = 1; // 0=error 1=info 2=debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::cerr << "[info] " << msg << "\n";
}
void log_debug(const std::string& msg) {
    if (g_log_level >= 2) std::cerr << "[debug] " << msg << "\n";
}

sqz::CorpusFormat parse_format(const std::string& s) {
    if (s == "binary") return sqz::CorpusFormat::binary;
    if (s == "csv") return sqz::CorpusFormat::csv;
    throw sqz::ValidationError("unknown format '" + s + "' (use binary|csv)");
}

std::vector<uint32_t> parse_budget(const std::string& s) {
    std::vector<uint32_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(static_cast<uint32_t>(std::stoul(tok)));
    }
    if (out.empty()) throw sqz::ValidationError("empty budget");
    return out;
}

sqz::InteractionSequence load_single_history(const std::string& path, uint64_t user_filter) {
    const auto histories = sqz::load_events(path);
    if (histories.empty()) throw sqz::ValidationError(path + ": no events");
    if (user_filter != 0) {
        for (const auto& h : histories) {
            if (h.user_id == user_filter) return h;
        }
        throw sqz::ValidationError(path + ": no events for user " + std::to_string(user_filter));
    }
    if (histories.size() > 1) {
        throw sqz::ValidationError(path + " contains " + std::to_string(histories.size()) +
                                   " users; pass --user to pick one");
    }
    return histories.front();
}

json agents_to_json(const sqz::InterestAgentSet& agents) {
    json out;
    out["schema_version"] = 1;
    out["user_id"] = agents.user_id;
    out["budget"] = agents.budget;
    json list = json::array();
    for (const auto& a : agents.agents) {
        list.push_back({{"path", a.path.codes},
                        {"raw_count", a.raw_count},
                        {"weight", a.weight},
                        {"prototype", a.prototype}});
    }
    out["agents"] = list;
    return out;
}

sqz::InterestAgentSet agents_from_json(const json& j) {
    sqz::InterestAgentSet set;
    set.user_id = j.value("user_id", 0ull);
    set.budget = j.at("budget").get<std::vector<uint32_t>>();
    for (const auto& a : j.at("agents")) {
        sqz::InterestAgent agent;
        agent.path.codes = a.at("path").get<std::vector<uint32_t>>();
        agent.raw_count = a.at("raw_count").get<uint64_t>();
        agent.weight = a.at("weight").get<double>();
        agent.prototype = a.at("prototype").get<std::vector<float>>();
        set.agents.push_back(std::move(agent));
    }
    if (set.agents.empty()) throw sqz::ValidationError("agents file has no agents");
    return set;
}

void write_json(const json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw sqz::IoError("cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
    if (!os) throw sqz::IoError("write failed: " + path);
}

json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw sqz::IoError("cannot open " + path);
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw sqz::ValidationError(path + ": " + e.what());
    }
}

std::vector<sqz::SemanticId> load_sids(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw sqz::IoError("cannot open " + path);
    std::vector<sqz::SemanticId> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        sqz::SemanticId sid;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            sid.codes.push_back(static_cast<uint32_t>(std::stoul(tok)));
        }
        out.push_back(std::move(sid));
    }
    return out;
}

void save_sids(const std::vector<sqz::SemanticId>& sids, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw sqz::IoError("cannot open " + path + " for writing");
    for (const auto& sid : sids) {
        for (std::size_t i = 0; i < sid.codes.size(); ++i) {
            if (i) os << ',';
            os << sid.codes[i];
        }
        os << "\n";
    }
}

json ledger_to_json(const sqz::FlopLedger& l) {
    return {{"projection_flops", l.projection_flops},
            {"score_flops", l.score_flops},
            {"weighted_sum_flops", l.weighted_sum_flops},
            {"output_flops", l.output_flops},
            {"total", l.total()},
            {"projection_share", l.projection_share()}};
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct GenerateArgs {
    sqz::SyntheticConfig syn;
    std::string out_corpus;
    std::string out_events;
    std::string out_truth;
    std::string format = "binary";
};

int run_generate(const GenerateArgs& args) {
    auto [corpus, truth] = sqz::generate_synthetic_corpus(args.syn);
    sqz::save_embeddings(corpus, args.out_corpus, parse_format(args.format));
    log_info("wrote " + std::to_string(corpus.size()) + " items to " + args.out_corpus);
    if (!args.out_events.empty()) {
        const auto histories = sqz::generate_user_histories(args.syn, corpus);
        sqz::save_events(histories, args.out_events);
        log_info("wrote " + std::to_string(histories.size()) + " user histories to " +
                 args.out_events);
    }
    if (!args.out_truth.empty()) {
        json t;
        t["coarse_label"] = truth.coarse_label;
        t["fine_label"] = truth.fine_label;
        write_json(t, args.out_truth);
    }
    return 0;
}

struct TrainArgs {
    std::string input;
    std::string format = "binary";
    sqz::RqConfig rq;
    double beta = 0.25;
    std::string out;
};

int run_train(const TrainArgs& args) {
    const auto corpus = sqz::load_embeddings(args.input, parse_format(args.format));
    const auto stack = sqz::train_codebooks(corpus.semantic(), args.rq);
    sqz::save_codebooks(stack, args.out);
    const auto loss = sqz::rq_loss(corpus.semantic(), stack, args.beta);
    std::cout << "trained " << stack.num_levels() << " levels on " << corpus.size() << " items\n";
    std::cout << "reconstruction_mse=" << loss.reconstruction << " total_loss=" << loss.total
              << " (beta=" << loss.beta << ")\n";
    return 0;
}

struct TokenizeArgs {
    std::string corpus_path;
    std::string format = "binary";
    std::string codebooks;
    std::string history;
    uint64_t user = 0;
    std::string out;
};

int run_tokenize(const TokenizeArgs& args) {
    const auto corpus = sqz::load_embeddings(args.corpus_path, parse_format(args.format));
    const auto stack = sqz::load_codebooks(args.codebooks);
    std::vector<sqz::SemanticId> sids;
    if (args.history.empty()) {
        sids = sqz::quantize_all(corpus.semantic(), stack); // whole corpus, row order
    } else {
        const auto history = load_single_history(args.history, args.user);
        sids = sqz::tokenize_history(history, corpus, stack);
    }
    save_sids(sids, args.out);
    log_info("wrote " + std::to_string(sids.size()) + " SIDs to " + args.out);
    return 0;
}

struct VoteArgs {
    std::string sids;
    std::string budget = "100,2";
    std::string codebooks;
    double count_scale = 1.0;
    uint64_t user_id = 0;
    std::string out;
};

int run_vote(const VoteArgs& args) {
    const auto sids = load_sids(args.sids);
    const auto stack = sqz::load_codebooks(args.codebooks);
    const auto trie = sqz::build_vote_trie(sids);
    const auto agents =
        sqz::vote(trie, parse_budget(args.budget), stack, args.count_scale, args.user_id);
    write_json(agents_to_json(agents), args.out);
    log_info(std::to_string(agents.size()) + " agents -> " + args.out);
    return 0;
}

struct CompressArgs {
    std::string agents;
    std::string history;
    uint64_t user = 0;
    std::string corpus_path;
    std::string format = "binary";
    std::string codebooks;
    double tau = 0.835;
    std::string mode = "soft";
    double decay_half_life = 0.0; // 0 = disabled
    int64_t now = -1;
    std::string out;
};

int run_compress(const CompressArgs& args) {
    auto corpus = sqz::load_embeddings(args.corpus_path, parse_format(args.format));
    const auto agents = agents_from_json(read_json(args.agents));
    const auto history = load_single_history(args.history, args.user);

    sqz::RoutingConfig cfg;
    cfg.tau = args.tau;
    if (args.decay_half_life > 0) {
        cfg.time_decay.enabled = true;
        cfg.time_decay.half_life = args.decay_half_life;
    }
    if (args.mode == "soft") cfg.mode = sqz::RoutingMode::soft;
    else if (args.mode == "hard") cfg.mode = sqz::RoutingMode::hard;
    else if (args.mode == "soft_matched_only") cfg.mode = sqz::RoutingMode::soft_matched_only;
    else throw sqz::ValidationError("unknown mode '" + args.mode + "'");

    if (cfg.mode != sqz::RoutingMode::soft) {
        if (args.codebooks.empty()) {
            throw sqz::ValidationError("mode " + args.mode + " needs --codebooks to tokenize");
        }
        const auto stack = sqz::load_codebooks(args.codebooks);
        corpus.assign_sids(sqz::quantize_all(corpus.semantic(), stack));
    }

    const int64_t now = args.now >= 0 ? args.now : history.events.back().timestamp;
    const auto compressed = sqz::compress(agents, history, corpus, cfg, now);

    // SQZ1 container: rows are the compressed vectors, ids are agent ordinals
    std::vector<uint64_t> ids(compressed.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    sqz::ItemCorpus out_mat(std::move(ids), compressed.vectors,
                            sqz::MatF(compressed.size(), 0));
    sqz::save_embeddings(out_mat, args.out, sqz::CorpusFormat::binary);

    json sidecar;
    sidecar["schema_version"] = 1;
    sidecar["mode"] = args.mode;
    sidecar["tau"] = args.tau;
    sidecar["time_decay_half_life"] = args.decay_half_life;
    json paths = json::array();
    for (const auto& p : compressed.agent_paths) paths.push_back(p.codes);
    sidecar["agent_paths"] = paths;
    sidecar["weights"] = compressed.weights;
    std::vector<int> flags(compressed.zero_match.begin(), compressed.zero_match.end());
    sidecar["zero_match"] = flags;
    write_json(sidecar, args.out + ".agents.json");
    log_info("compressed " + std::to_string(history.size()) + " events into " +
             std::to_string(compressed.size()) + " vectors -> " + args.out);
    return 0;
}

struct BenchArgs {
    std::string corpus_path;
    std::string format = "binary";
    std::string histories;
    uint32_t groups = 200;
    std::string methods = "patch,kmeans,lsh";
    uint32_t kmeans_iters = 10;
    uint32_t lsh_bits = 8;
    uint64_t seed = 1;
    std::string out;
};

int run_bench(const BenchArgs& args) {
    const auto corpus = sqz::load_embeddings(args.corpus_path, parse_format(args.format));
    const auto histories = sqz::load_events(args.histories);
    if (histories.empty()) throw sqz::ValidationError("no histories in " + args.histories);

    std::vector<std::string> methods;
    {
        std::stringstream ss(args.methods);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok != "patch" && tok != "kmeans" && tok != "lsh") {
                throw sqz::ValidationError("unknown baseline '" + tok + "'");
            }
            methods.push_back(tok);
        }
    }

    json per_method = json::object();
    for (const auto& method : methods) {
        double err_sum = 0.0, group_sum = 0.0, sil_sum = 0.0;
        std::size_t sil_count = 0;
        for (const auto& history : histories) {
            sqz::GroupingResult g;
            if (method == "patch") {
                g = sqz::patch_compress(history, corpus, args.groups);
            } else if (method == "kmeans") {
                const auto k = std::min<uint32_t>(args.groups,
                                                  static_cast<uint32_t>(history.events.size()));
                g = sqz::kmeans_compress(history, corpus, k, args.kmeans_iters, args.seed);
            } else {
                g = sqz::lsh_compress(history, corpus, args.lsh_bits, args.seed);
            }
            err_sum += sqz::grouping_quantization_error(g, history, corpus);
            group_sum += static_cast<double>(g.num_groups());
            if (g.num_groups() >= 2) {
                sqz::MatF points(history.events.size(), corpus.dim_semantic());
                for (std::size_t n = 0; n < history.events.size(); ++n) {
                    const auto idx = corpus.index_of(history.events[n].item_id);
                    if (!idx) throw sqz::ValidationError("unknown item in history");
                    std::copy_n(corpus.semantic().row(*idx), corpus.dim_semantic(),
                                points.row(n));
                }
                sil_sum += sqz::silhouette(points, g.group_of);
                sil_count += 1;
            }
        }
        const double users = static_cast<double>(histories.size());
        per_method[method] = {
            {"quantization_error_mean", err_sum / users},
            {"mean_groups", group_sum / users},
            {"silhouette_mean", sil_count ? sil_sum / static_cast<double>(sil_count) : 0.0}};
    }

    json report;
    report["schema_version"] = 1;
    report["groups"] = args.groups;
    report["seed"] = args.seed;
    report["num_users"] = histories.size();
    report["methods"] = per_method;
    write_json(report, args.out);
    log_info("baseline report -> " + args.out);
    return 0;
}

struct ServeArgs {
    std::string replay;
    std::string config;
    std::string out;
};

int run_serve(const ServeArgs& args) {
    const json cfg_json = read_json(args.config);
    const std::string corpus_path = cfg_json.at("corpus").get<std::string>();
    const std::string codebooks_path = cfg_json.at("codebooks").get<std::string>();
    const std::string events_path = cfg_json.at("events").get<std::string>();

    sqz::ServingConfig cfg;
    cfg.max_history = cfg_json.value("max_history", cfg.max_history);
    cfg.candidates_per_request = cfg_json.value("candidates_per_request", cfg.candidates_per_request);
    if (cfg_json.contains("budget")) cfg.budget = cfg_json.at("budget").get<std::vector<uint32_t>>();
    cfg.count_scale = cfg_json.value("count_scale", cfg.count_scale);
    cfg.tau = cfg_json.value("tau", cfg.tau);
    const double half_life = cfg_json.value("decay_half_life", 0.0);
    if (half_life > 0) {
        cfg.time_decay.enabled = true;
        cfg.time_decay.half_life = half_life;
    }
    cfg.agent_refresh_period = cfg_json.value("agent_refresh_period", cfg.agent_refresh_period);
    cfg.cache_capacity = cfg_json.value("cache_capacity", cfg.cache_capacity);
    cfg.cache_enabled = cfg_json.value("cache_enabled", cfg.cache_enabled);
    cfg.kv_reuse_within_request = cfg_json.value("kv_reuse_within_request", true);
    cfg.measure_wall_time = cfg_json.value("measure_wall_time", false);
    cfg.heads = cfg_json.value("heads", cfg.heads);
    cfg.head_dim = cfg_json.value("head_dim", cfg.head_dim);
    cfg.d_out = cfg_json.value("d_out", cfg.d_out);
    cfg.seed = cfg_json.value("seed", cfg.seed);

    const auto corpus = sqz::load_embeddings(corpus_path, sqz::CorpusFormat::binary);
    const auto stack = sqz::load_codebooks(codebooks_path);
    const auto histories = sqz::load_events(events_path);
    const auto replay = sqz::load_replay(args.replay);
    log_info("replaying " + std::to_string(replay.size()) + " requests");
    const auto report = sqz::simulate_serving(replay, corpus, stack, histories, cfg);

    json out;
    out["schema_version"] = 1;
    out["flop_convention"] =
        "1 multiply-accumulate = 2 FLOPs; softmax/exp excluded; compressed score_flops "
        "includes the 2*N*K*d routing cost";
    out["num_requests"] = report.requests.size();
    out["agent_builds"] = report.agent_builds;
    out["hit_rate"] = report.query_cache.hit_rate();
    out["max_divergence"] = report.max_divergence;
    out["total_direct_flops"] = report.total_direct_flops;
    out["total_vanilla_flops"] = report.total_vanilla_flops;
    out["total_cached_flops"] = report.total_cached_flops;
    out["wall_time_proxy_vanilla"] = report.wall_time_proxy_vanilla;
    out["wall_time_proxy_cached"] = report.wall_time_proxy_cached;
    json reqs = json::array();
    for (const auto& r : report.requests) {
        json rj;
        rj["timestamp"] = r.timestamp;
        rj["user_id"] = r.user_id;
        rj["n_tokens"] = r.n_tokens;
        rj["k_agents"] = r.k_agents;
        rj["m_candidates"] = r.m_candidates;
        rj["agents_rebuilt"] = r.agents_rebuilt;
        rj["direct"] = ledger_to_json(r.direct);
        rj["vanilla"] = ledger_to_json(r.vanilla);
        rj["cached"] = ledger_to_json(r.cached);
        rj["query_hits"] = r.query_cache.hits;
        rj["query_misses"] = r.query_cache.misses;
        rj["max_divergence"] = r.max_divergence;
        if (cfg.measure_wall_time) {
            rj["wall_micros_vanilla"] = r.wall_micros_vanilla;
            rj["wall_micros_cached"] = r.wall_micros_cached;
        }
        reqs.push_back(std::move(rj));
    }
    out["requests"] = reqs;
    write_json(out, args.out);
    log_info("serving report -> " + args.out);
    return 0;
}

struct EvalArgs {
    std::string config;
    std::string out_dir;
    uint32_t threads_override = 0;
};

int run_eval(const EvalArgs& args) {
    auto cfg = sqz::load_eval_config(args.config);
    if (args.threads_override > 0) cfg.threads = args.threads_override;
    log_debug("eval config: " + std::to_string(cfg.methods.size()) + " methods, threads=" +
              std::to_string(cfg.threads));
    std::filesystem::create_directories(args.out_dir);
    log_info("running eval pipeline with " + std::to_string(cfg.seeds.size()) + " seeds");
    const auto report = sqz::run_pipeline(cfg);
    sqz::export_report(report, args.out_dir + "/report.json", sqz::ReportFormat::json);
    sqz::export_report(report, args.out_dir + "/report.csv", sqz::ReportFormat::csv);
    std::cout << "method ranking by quantization error:\n";
    for (std::size_t i = 0; i < report.method_ranking.size(); ++i) {
        const auto& name = report.method_ranking[i];
        for (const auto& s : report.method_summaries) {
            if (s.method == name) {
                std::cout << "  " << (i + 1) << ". " << name << "  "
                          << s.quantization_error_mean << " +- " << s.quantization_error_std
                          << "\n";
            }
        }
    }
    std::cout << "report written to " << args.out_dir << "/report.json\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sqz: residual-quantized sequence compression toolkit"};
    app.require_subcommand(0, 1);

    bool show_version = false;
    app.add_flag("--version", show_version, "print version and exit");
    uint32_t threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = sequential)");
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "error|info|debug");

    GenerateArgs gen;
    auto* cmd_gen = app.add_subcommand("generate-corpus", "synthesize a planted-cluster corpus");
    cmd_gen->add_option("--coarse", gen.syn.num_coarse_clusters, "coarse clusters");
    cmd_gen->add_option("--fine", gen.syn.num_fine_per_coarse, "fine clusters per coarse");
    cmd_gen->add_option("--items", gen.syn.items_per_fine, "items per fine cluster");
    cmd_gen->add_option("--dim", gen.syn.d, "semantic dimension d");
    cmd_gen->add_option("--rank-dim", gen.syn.d_prime, "ranking dimension d'");
    cmd_gen->add_option("--coarse-spread", gen.syn.coarse_spread, "coarse center spread");
    cmd_gen->add_option("--fine-spread", gen.syn.fine_spread, "fine offset spread");
    cmd_gen->add_option("--noise", gen.syn.noise_sigma, "per-item noise sigma");
    cmd_gen->add_option("--users", gen.syn.num_users, "number of users");
    cmd_gen->add_option("--history", gen.syn.history_length, "events per user");
    cmd_gen->add_option("--zipf", gen.syn.zipf_exponent, "interest skew exponent");
    cmd_gen->add_option("--seed", gen.syn.seed, "seed");
    cmd_gen->add_option("--format", gen.format, "binary|csv");
    cmd_gen->add_option("--out", gen.out_corpus, "corpus output path")->required();
    cmd_gen->add_option("--events", gen.out_events, "also write user histories here");
    cmd_gen->add_option("--truth", gen.out_truth, "also write planted labels here");

    TrainArgs train;
    train.rq.codebook_sizes = {512};
    auto* cmd_train = app.add_subcommand("train-codebooks", "learn residual codebooks");
    cmd_train->add_option("--input", train.input, "corpus file")->required();
    cmd_train->add_option("--format", train.format, "binary|csv");
    cmd_train->add_option("--levels", train.rq.levels, "quantization levels L");
    cmd_train->add_option("--codebook-size", train.rq.codebook_sizes[0], "entries per level C");
    cmd_train->add_option("--decay", train.rq.ema_decay, "EMA decay");
    cmd_train->add_option("--epochs", train.rq.epochs, "training epochs");
    cmd_train->add_option("--beta", train.beta, "commitment coefficient for the loss report");
    cmd_train->add_option("--seed", train.rq.seed, "seed");
    cmd_train->add_option("--out", train.out, "codebook stack output")->required();

    TokenizeArgs tok;
    auto* cmd_tok = app.add_subcommand("tokenize", "assign SIDs to a corpus or history");
    cmd_tok->add_option("--corpus", tok.corpus_path, "corpus file")->required();
    cmd_tok->add_option("--format", tok.format, "binary|csv");
    cmd_tok->add_option("--codebooks", tok.codebooks, "codebook stack")->required();
    cmd_tok->add_option("--history", tok.history, "event CSV (omit to tokenize the corpus)");
    cmd_tok->add_option("--user", tok.user, "user id when the event file has several");
    cmd_tok->add_option("--out", tok.out, "SID CSV output")->required();

    VoteArgs vote;
    auto* cmd_vote = app.add_subcommand("vote", "hierarchical voting over tokenized history");
    cmd_vote->add_option("--sids", vote.sids, "SID CSV from tokenize")->required();
    cmd_vote->add_option("--budget", vote.budget, "per-level top-k, e.g. 100,2");
    cmd_vote->add_option("--codebooks", vote.codebooks, "codebook stack (for prototypes)")
        ->required();
    cmd_vote->add_option("--count-scale", vote.count_scale, "softmax count divisor");
    cmd_vote->add_option("--user-id", vote.user_id, "user id recorded in the output");
    cmd_vote->add_option("--out", vote.out, "agents JSON output")->required();

    CompressArgs comp;
    auto* cmd_comp = app.add_subcommand("compress", "compress a history into agent vectors");
    cmd_comp->add_option("--agents", comp.agents, "agents JSON from vote")->required();
    cmd_comp->add_option("--history", comp.history, "event CSV")->required();
    cmd_comp->add_option("--user", comp.user, "user id when the event file has several");
    cmd_comp->add_option("--corpus", comp.corpus_path, "corpus file")->required();
    cmd_comp->add_option("--format", comp.format, "binary|csv");
    cmd_comp->add_option("--codebooks", comp.codebooks, "needed for hard/soft_matched_only");
    cmd_comp->add_option("--tau", comp.tau, "softmax temperature");
    cmd_comp->add_option("--mode", comp.mode, "soft|hard|soft_matched_only");
    cmd_comp->add_option("--decay-half-life", comp.decay_half_life,
                         "time-decay half life in seconds (0 = off)");
    cmd_comp->add_option("--now", comp.now, "request timestamp (default: last event)");
    cmd_comp->add_option("--out", comp.out, "compressed output (SQZ1 + .agents.json)")->required();

    BenchArgs bench;
    auto* cmd_bench = app.add_subcommand("bench-baselines", "run training-free baselines");
    cmd_bench->add_option("--corpus", bench.corpus_path, "corpus file")->required();
    cmd_bench->add_option("--format", bench.format, "binary|csv");
    cmd_bench->add_option("--histories", bench.histories, "event CSV")->required();
    cmd_bench->add_option("--groups", bench.groups, "target group count");
    cmd_bench->add_option("--methods", bench.methods, "comma list: patch,kmeans,lsh");
    cmd_bench->add_option("--kmeans-iters", bench.kmeans_iters, "Lloyd iterations");
    cmd_bench->add_option("--lsh-bits", bench.lsh_bits, "hyperplane count");
    cmd_bench->add_option("--seed", bench.seed, "seed");
    cmd_bench->add_option("--out", bench.out, "report JSON output")->required();

    ServeArgs serve;
    auto* cmd_serve = app.add_subcommand("simulate-serving", "replay requests through both paths");
    cmd_serve->add_option("--replay", serve.replay, "replay CSV")->required();
    cmd_serve->add_option("--config", serve.config, "serving config JSON")->required();
    cmd_serve->add_option("--out", serve.out, "report JSON output")->required();

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "end-to-end experiment pipeline");
    cmd_eval->add_option("--config", eval.config, "YAML or JSON config")->required();
    cmd_eval->add_option("--out", eval.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (log_level == "error") g_log_level = 0;
    else if (log_level == "info") g_log_level = 1;
    else if (log_level == "debug") g_log_level = 2;
    else {
        std::cerr << "unknown log level '" << log_level << "'\n";
        return 2;
    }

    if (show_version) {
        std::cout << "sqz " << kVersion << "\n";
        return 0;
    }

    try {
        if (cmd_gen->parsed()) return run_generate(gen);
        if (cmd_train->parsed()) return run_train(train);
        if (cmd_tok->parsed()) return run_tokenize(tok);
        if (cmd_vote->parsed()) return run_vote(vote);
        if (cmd_comp->parsed()) return run_compress(comp);
        if (cmd_bench->parsed()) return run_bench(bench);
        if (cmd_serve->parsed()) return run_serve(serve);
        if (cmd_eval->parsed()) {
            eval.threads_override = threads;
            return run_eval(eval);
        }
        std::cout << app.help();
        return 0;
    } catch (const sqz::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
