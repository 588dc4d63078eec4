#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqz/corpus.hpp"
#include "sqz/matrix.hpp"

namespace sqz {

/// A training-free grouping of a history: every item lands in exactly one
/// group; group vectors are mean-pooled ranking embeddings.
struct GroupingResult {
    std::vector<uint32_t> group_of; // per event
    MatF group_vectors;             // G x d'
    std::string method;

    std::size_t num_groups() const { return group_vectors.rows(); }
};

/// Contiguous time-ordered patches of near-equal size; the earlier patches
/// absorb the remainder. G is capped at N.
GroupingResult patch_compress(const InteractionSequence& history, const ItemCorpus& corpus,
                              uint32_t patch_count);

/// Lloyd iterations on semantic embeddings, distinct-sample seeded init,
/// lowest-index tie-break, deterministic empty-cluster reseeding.
GroupingResult kmeans_compress(const InteractionSequence& history, const ItemCorpus& corpus,
                               uint32_t groups, uint32_t iters, uint64_t seed);

/// Random-hyperplane signatures over semantic embeddings; groups are the
/// nonempty buckets (at most 2^num_bits).
GroupingResult lsh_compress(const InteractionSequence& history, const ItemCorpus& corpus,
                            uint32_t num_bits, uint64_t seed);

/// Mean silhouette (b - a) / max(a, b) under Euclidean distance; singleton
/// clusters score 0 by convention. Requires at least two distinct labels.
double silhouette(const MatF& points, const std::vector<uint32_t>& labels);

/// Per-group mean semantic embedding (the grouping's implied prototype),
/// for quantization-error comparisons against routing methods.
MatF group_semantic_centroids(const GroupingResult& grouping, const InteractionSequence& history,
                              const ItemCorpus& corpus);

/// Mean squared distance from each item's semantic embedding to its group's
/// semantic centroid.
double grouping_quantization_error(const GroupingResult& grouping,
                                   const InteractionSequence& history, const ItemCorpus& corpus);

} // namespace sqz
