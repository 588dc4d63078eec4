#include "sqz/routing.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "sqz/error.hpp"

namespace sqz {

namespace {

double euclidean(const float* a, const float* b, std::size_t d) {
    return std::sqrt(squared_l2(a, b, d));
}

void check_finite(const MatF& m, const char* what) {
    for (float v : m.storage()) {
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite input");
    }
}

// distances[i][j] = ||E_j - Z_i||_2
MatD distance_matrix(const MatF& Z, const MatF& E) {
    if (Z.cols() != E.cols()) {
        throw ValidationError("routing: agent dim " + std::to_string(Z.cols()) +
                              " != item dim " + std::to_string(E.cols()));
    }
    if (Z.rows() == 0 || E.rows() == 0) {
        throw ValidationError("routing: need at least one agent and one item");
    }
    check_finite(Z, "agent prototypes");
    check_finite(E, "item embeddings");
    MatD D(Z.rows(), E.rows());
    for (std::size_t i = 0; i < Z.rows(); ++i) {
        for (std::size_t j = 0; j < E.rows(); ++j) {
            D(i, j) = euclidean(E.row(j), Z.row(i), Z.cols());
        }
    }
    return D;
}

std::vector<std::size_t> resolve_items(const InteractionSequence& history,
                                       const ItemCorpus& corpus) {
    std::vector<std::size_t> idx;
    idx.reserve(history.events.size());
    for (std::size_t n = 0; n < history.events.size(); ++n) {
        const auto i = corpus.index_of(history.events[n].item_id);
        if (!i) {
            throw ValidationError("compress: unknown item " +
                                  std::to_string(history.events[n].item_id) + " at event index " +
                                  std::to_string(n));
        }
        idx.push_back(*i);
    }
    return idx;
}

MatF gather_semantic(const ItemCorpus& corpus, const std::vector<std::size_t>& idx) {
    MatF E(idx.size(), corpus.dim_semantic());
    for (std::size_t n = 0; n < idx.size(); ++n) {
        std::copy_n(corpus.semantic().row(idx[n]), corpus.dim_semantic(), E.row(n));
    }
    return E;
}

MatF agent_matrix(const InterestAgentSet& agents) {
    if (agents.agents.empty()) throw ValidationError("compress: empty agent set");
    const std::size_t d = agents.agents.front().prototype.size();
    MatF Z(agents.agents.size(), d);
    for (std::size_t k = 0; k < agents.agents.size(); ++k) {
        if (agents.agents[k].prototype.size() != d) {
            throw ValidationError("compress: inconsistent prototype dimensions");
        }
        std::copy_n(agents.agents[k].prototype.data(), d, Z.row(k));
    }
    return Z;
}

CompressedSequence make_skeleton(const InterestAgentSet& agents, std::size_t content_dim) {
    CompressedSequence out;
    out.vectors = MatF(agents.size(), content_dim);
    out.prototypes = agent_matrix(agents);
    out.zero_match.assign(agents.size(), false);
    out.agent_paths.reserve(agents.size());
    out.weights.reserve(agents.size());
    for (const auto& a : agents.agents) {
        out.agent_paths.push_back(a.path);
        out.weights.push_back(a.weight);
    }
    return out;
}

std::unordered_map<SemanticId, std::size_t, SemanticIdHash>
path_index(const InterestAgentSet& agents) {
    std::unordered_map<SemanticId, std::size_t, SemanticIdHash> map;
    map.reserve(agents.size());
    for (std::size_t k = 0; k < agents.agents.size(); ++k) {
        map.emplace(agents.agents[k].path, k);
    }
    return map;
}

const SemanticId& corpus_sid(const ItemCorpus& corpus, std::size_t index) {
    if (!corpus.has_sids()) {
        throw ValidationError("compress: corpus has no SIDs; run tokenization first");
    }
    return corpus.sid_of(index);
}

} // namespace

void RoutingConfig::validate() const {
    if (!(tau > 0)) throw ValidationError("routing config: tau must be > 0");
    if (time_decay.enabled && !(time_decay.half_life > 0)) {
        throw ValidationError("routing config: half_life must be > 0");
    }
}

MatD routing_weight_matrix(const MatF& agent_prototypes, const MatF& item_semantic, double tau) {
    if (!(tau > 0)) throw ValidationError("routing_weight_matrix: tau must be > 0");
    const MatD D = distance_matrix(agent_prototypes, item_semantic);
    MatD W(D.rows(), D.cols());
    for (std::size_t i = 0; i < D.rows(); ++i) {
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < D.cols(); ++j) row_max = std::max(row_max, -D(i, j) / tau);
        double denom = 0.0;
        for (std::size_t j = 0; j < D.cols(); ++j) {
            W(i, j) = std::exp(-D(i, j) / tau - row_max);
            denom += W(i, j);
        }
        for (std::size_t j = 0; j < D.cols(); ++j) W(i, j) /= denom;
    }
    return W;
}

MatD item_assignment_weights(const MatF& agent_prototypes, const MatF& item_semantic, double tau) {
    if (!(tau > 0)) throw ValidationError("item_assignment_weights: tau must be > 0");
    const MatD D = distance_matrix(agent_prototypes, item_semantic);
    MatD W(D.rows(), D.cols());
    for (std::size_t j = 0; j < D.cols(); ++j) {
        double col_max = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < D.rows(); ++i) col_max = std::max(col_max, -D(i, j) / tau);
        double denom = 0.0;
        for (std::size_t i = 0; i < D.rows(); ++i) {
            W(i, j) = std::exp(-D(i, j) / tau - col_max);
            denom += W(i, j);
        }
        for (std::size_t i = 0; i < D.rows(); ++i) W(i, j) /= denom;
    }
    return W;
}

MatD soft_routing_outputs(const MatF& agent_prototypes, const MatF& item_semantic,
                          const MatF& content, const std::vector<double>& agent_weights,
                          double tau) {
    if (content.rows() != item_semantic.rows()) {
        throw ValidationError("soft_routing_outputs: content/semantic row mismatch");
    }
    if (agent_weights.size() != agent_prototypes.rows()) {
        throw ValidationError("soft_routing_outputs: weight count mismatch");
    }
    const MatD W = routing_weight_matrix(agent_prototypes, item_semantic, tau);
    MatD out(W.rows(), content.cols());
    for (std::size_t k = 0; k < W.rows(); ++k) {
        double* o = out.row(k);
        for (std::size_t j = 0; j < W.cols(); ++j) {
            const double w = W(k, j);
            const float* c = content.row(j);
            for (std::size_t t = 0; t < content.cols(); ++t) o[t] += w * static_cast<double>(c[t]);
        }
        for (std::size_t t = 0; t < content.cols(); ++t) o[t] *= agent_weights[k];
    }
    return out;
}

MatF build_content_rows(const InteractionSequence& history, const ItemCorpus& corpus,
                        const TimeDecay& decay, int64_t now) {
    const auto idx = resolve_items(history, corpus);
    const std::size_t dp = corpus.dim_ranking();
    const std::size_t cols = dp + (decay.enabled ? 1 : 0);
    MatF content(idx.size(), cols);
    for (std::size_t n = 0; n < idx.size(); ++n) {
        std::copy_n(corpus.ranking().row(idx[n]), dp, content.row(n));
        if (decay.enabled) {
            const int64_t t = history.events[n].timestamp;
            if (now < t) {
                throw ValidationError("time decay: request time " + std::to_string(now) +
                                      " earlier than event at " + std::to_string(t));
            }
            content(n, dp) =
                static_cast<float>(std::exp(-static_cast<double>(now - t) / decay.half_life));
        }
    }
    return content;
}

CompressedSequence soft_compress(const InterestAgentSet& agents, const InteractionSequence& history,
                                 const ItemCorpus& corpus, const RoutingConfig& cfg, int64_t now) {
    cfg.validate();
    if (cfg.mode != RoutingMode::soft) throw ValidationError("soft_compress: cfg.mode must be soft");
    if (history.events.empty()) throw ValidationError("soft_compress: empty history");

    const auto idx = resolve_items(history, corpus);
    const MatF E = gather_semantic(corpus, idx);
    const MatF content = build_content_rows(history, corpus, cfg.time_decay, now);

    CompressedSequence out = make_skeleton(agents, content.cols());
    const MatD z = soft_routing_outputs(out.prototypes, E, content, out.weights, cfg.tau);
    for (std::size_t k = 0; k < z.rows(); ++k) {
        for (std::size_t t = 0; t < z.cols(); ++t) {
            out.vectors(k, t) = static_cast<float>(z(k, t));
        }
    }
    return out;
}

CompressedSequence hard_compress(const InterestAgentSet& agents, const InteractionSequence& history,
                                 const ItemCorpus& corpus, const RoutingConfig& cfg, int64_t now) {
    cfg.validate();
    if (cfg.mode != RoutingMode::hard) throw ValidationError("hard_compress: cfg.mode must be hard");
    if (history.events.empty()) throw ValidationError("hard_compress: empty history");

    const auto idx = resolve_items(history, corpus);
    const MatF content = build_content_rows(history, corpus, cfg.time_decay, now);
    CompressedSequence out = make_skeleton(agents, content.cols());
    const auto paths = path_index(agents);

    MatD sums(agents.size(), content.cols());
    std::vector<uint64_t> matches(agents.size(), 0);
    for (std::size_t n = 0; n < idx.size(); ++n) {
        const auto it = paths.find(corpus_sid(corpus, idx[n]));
        if (it == paths.end()) continue; // long-tail item: dropped
        const std::size_t k = it->second;
        matches[k] += 1;
        const float* c = content.row(n);
        double* s = sums.row(k);
        for (std::size_t t = 0; t < content.cols(); ++t) s[t] += static_cast<double>(c[t]);
    }
    for (std::size_t k = 0; k < agents.size(); ++k) {
        if (matches[k] == 0) {
            out.zero_match[k] = true; // zero row, shape stays stable
            continue;
        }
        const double scale = out.weights[k] / static_cast<double>(matches[k]);
        for (std::size_t t = 0; t < content.cols(); ++t) {
            out.vectors(k, t) = static_cast<float>(sums(k, t) * scale);
        }
    }
    return out;
}

CompressedSequence matched_only_compress(const InterestAgentSet& agents,
                                         const InteractionSequence& history,
                                         const ItemCorpus& corpus, const RoutingConfig& cfg,
                                         int64_t now) {
    cfg.validate();
    if (cfg.mode != RoutingMode::soft_matched_only) {
        throw ValidationError("matched_only_compress: cfg.mode must be soft_matched_only");
    }
    if (history.events.empty()) throw ValidationError("matched_only_compress: empty history");

    const auto idx = resolve_items(history, corpus);
    const auto paths = path_index(agents);

    InteractionSequence kept;
    kept.user_id = history.user_id;
    for (std::size_t n = 0; n < idx.size(); ++n) {
        if (paths.contains(corpus_sid(corpus, idx[n]))) kept.events.push_back(history.events[n]);
    }

    if (kept.events.empty()) {
        const std::size_t cols = corpus.dim_ranking() + (cfg.time_decay.enabled ? 1 : 0);
        CompressedSequence out = make_skeleton(agents, cols);
        out.zero_match.assign(agents.size(), true);
        return out;
    }

    RoutingConfig soft_cfg = cfg;
    soft_cfg.mode = RoutingMode::soft;
    return soft_compress(agents, kept, corpus, soft_cfg, now);
}

CompressedSequence compress(const InterestAgentSet& agents, const InteractionSequence& history,
                            const ItemCorpus& corpus, const RoutingConfig& cfg, int64_t now) {
    switch (cfg.mode) {
        case RoutingMode::soft: return soft_compress(agents, history, corpus, cfg, now);
        case RoutingMode::hard: return hard_compress(agents, history, corpus, cfg, now);
        case RoutingMode::soft_matched_only:
            return matched_only_compress(agents, history, corpus, cfg, now);
    }
    throw ValidationError("compress: unknown mode");
}

double quantization_error(const CompressedSequence& compressed, const InteractionSequence& history,
                          const ItemCorpus& corpus, const QuantizationRule& rule) {
    if (history.events.empty()) return 0.0;
    const auto idx = resolve_items(history, corpus);
    const std::size_t d = corpus.dim_semantic();
    const std::size_t K = compressed.prototypes.rows();
    if (K == 0) throw ValidationError("quantization_error: no prototypes");

    std::unordered_map<SemanticId, std::size_t, SemanticIdHash> paths;
    if (rule.kind == QuantizationRule::Kind::exact_match ||
        rule.kind == QuantizationRule::Kind::matched_mixture) {
        for (std::size_t k = 0; k < compressed.agent_paths.size(); ++k) {
            paths.emplace(compressed.agent_paths[k], k);
        }
    }

    auto mixture_error = [&](const float* e) {
        if (!(rule.tau > 0)) throw ValidationError("quantization_error: tau must be > 0");
        std::vector<double> score(K);
        double col_max = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < K; ++k) {
            score[k] = -std::sqrt(squared_l2(e, compressed.prototypes.row(k), d)) / rule.tau;
            col_max = std::max(col_max, score[k]);
        }
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            score[k] = std::exp(score[k] - col_max);
            denom += score[k];
        }
        std::vector<double> mixture(d, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            const double w = score[k] / denom;
            const float* z = compressed.prototypes.row(k);
            for (std::size_t j = 0; j < d; ++j) mixture[j] += w * static_cast<double>(z[j]);
        }
        double err = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = static_cast<double>(e[j]) - mixture[j];
            err += diff * diff;
        }
        return err;
    };

    double total = 0.0;
    for (const std::size_t item : idx) {
        const float* e = corpus.semantic().row(item);
        switch (rule.kind) {
            case QuantizationRule::Kind::exact_match: {
                const auto it = paths.find(corpus_sid(corpus, item));
                if (it == paths.end()) {
                    total += squared_norm({e, d}); // unrepresented item
                } else {
                    total += squared_l2(e, compressed.prototypes.row(it->second), d);
                }
                break;
            }
            case QuantizationRule::Kind::matched_mixture: {
                if (paths.contains(corpus_sid(corpus, item))) {
                    total += mixture_error(e);
                } else {
                    total += squared_norm({e, d}); // dropped long-tail item
                }
                break;
            }
            case QuantizationRule::Kind::nearest_prototype: {
                double best = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < K; ++k) {
                    best = std::min(best, squared_l2(e, compressed.prototypes.row(k), d));
                }
                total += best;
                break;
            }
            case QuantizationRule::Kind::soft_mixture:
                total += mixture_error(e);
                break;
        }
    }
    return total / static_cast<double>(idx.size());
}

} // namespace sqz
