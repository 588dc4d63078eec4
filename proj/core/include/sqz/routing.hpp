#pragma once

#include <cstdint>
#include <vector>

#include "sqz/corpus.hpp"
#include "sqz/matrix.hpp"
#include "sqz/tree.hpp"

namespace sqz {

enum class RoutingMode { soft, hard, soft_matched_only };

struct TimeDecay {
    bool enabled = false;
    double half_life = 604800.0; // seconds; default 7 days
};

struct RoutingConfig {
    double tau = 0.835; // exp(-0.18), the reported optimum
    TimeDecay time_decay;
    RoutingMode mode = RoutingMode::soft;

    void validate() const;
};

/// K aggregated content vectors, aligned index-for-index with the agent set.
/// `zero_match` marks agents that matched nothing under exact-SID modes and
/// therefore emitted a zero row.
struct CompressedSequence {
    MatF vectors;                        // K_actual x d'' (d' plus 1 with time decay)
    std::vector<SemanticId> agent_paths; // aligned
    std::vector<double> weights;         // aligned agent weights
    MatF prototypes;                     // aligned, semantic space (for diagnostics)
    std::vector<bool> zero_match;        // aligned

    std::size_t size() const { return vectors.rows(); }
};

/// Row-stochastic K x N matrix: row-wise softmax of -||E_j - Z_i||_2 / tau
/// with per-row max subtraction. Unsquared L2, per the distance convention.
MatD routing_weight_matrix(const MatF& agent_prototypes, const MatF& item_semantic, double tau);

/// Column-stochastic counterpart: per-item softmax over agents. This is the
/// item -> agent assignment view used for quantization diagnostics; its
/// argmax converges to the nearest prototype as tau -> 0.
MatD item_assignment_weights(const MatF& agent_prototypes, const MatF& item_semantic, double tau);

/// Matrix form of the compression: diag(agent_weights) * Softmax(W) * content.
/// Double precision throughout; soft_compress stores the float32 rendering.
MatD soft_routing_outputs(const MatF& agent_prototypes, const MatF& item_semantic,
                          const MatF& content, const std::vector<double>& agent_weights,
                          double tau);

/// Content rows for a history: ranking embeddings, with the time-decay scalar
/// exp(-(now - t_n)/half_life) appended when enabled.
MatF build_content_rows(const InteractionSequence& history, const ItemCorpus& corpus,
                        const TimeDecay& decay, int64_t now);

CompressedSequence soft_compress(const InterestAgentSet& agents, const InteractionSequence& history,
                                 const ItemCorpus& corpus, const RoutingConfig& cfg, int64_t now);

/// Exact SID matching; items whose SID matches no agent are dropped. The
/// corpus must carry SIDs (assign_sids after tokenization).
CompressedSequence hard_compress(const InterestAgentSet& agents, const InteractionSequence& history,
                                 const ItemCorpus& corpus, const RoutingConfig& cfg,
                                 int64_t now = 0);

/// Soft aggregation restricted to items that exact-match some agent path
/// (the drop-long-tail variant).
CompressedSequence matched_only_compress(const InterestAgentSet& agents,
                                         const InteractionSequence& history,
                                         const ItemCorpus& corpus, const RoutingConfig& cfg,
                                         int64_t now);

/// Dispatch on cfg.mode.
CompressedSequence compress(const InterestAgentSet& agents, const InteractionSequence& history,
                            const ItemCorpus& corpus, const RoutingConfig& cfg, int64_t now);

struct QuantizationRule {
    // exact_match: the prototype of the exact-SID agent, if any.
    // soft_mixture: per-item softmax mixture of prototypes at `tau`.
    // matched_mixture: soft mixture, but only for items with an exact match
    //   (the drop-long-tail accounting).
    // nearest_prototype: closest prototype by L2.
    enum class Kind { exact_match, soft_mixture, matched_mixture, nearest_prototype };
    Kind kind = Kind::soft_mixture;
    double tau = 0.835;
    // Items a rule leaves unassigned reconstruct to nothing and contribute
    // their full squared norm.
};

/// Mean over history items of the squared L2 distance between the item's
/// semantic embedding and the prototype (or prototype mixture) the rule
/// assigns it.
double quantization_error(const CompressedSequence& compressed, const InteractionSequence& history,
                          const ItemCorpus& corpus, const QuantizationRule& rule);

} // namespace sqz
