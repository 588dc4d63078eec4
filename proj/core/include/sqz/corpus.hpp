#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sqz/matrix.hpp"
#include "sqz/sid.hpp"

namespace sqz {

struct InteractionEvent {
    uint64_t item_id = 0;
    int64_t timestamp = 0; // seconds since epoch, >= 0
};

struct InteractionSequence {
    uint64_t user_id = 0;
    std::vector<InteractionEvent> events; // sorted non-decreasing by timestamp

    std::size_t size() const { return events.size(); }
};

/// Item embeddings in two decoupled spaces: `semantic` (frozen, used for
/// routing decisions) and `ranking` (content that gets aggregated).
/// Immutable after construction except for the one-shot SID assignment
/// produced by tokenization.
class ItemCorpus {
public:
    ItemCorpus() = default;
    ItemCorpus(std::vector<uint64_t> ids, MatF semantic, MatF ranking);

    std::size_t size() const { return ids_.size(); }
    std::size_t dim_semantic() const { return semantic_.cols(); }
    std::size_t dim_ranking() const { return ranking_.cols(); }

    const std::vector<uint64_t>& ids() const { return ids_; }
    const MatF& semantic() const { return semantic_; }
    const MatF& ranking() const { return ranking_; }

    std::span<const float> semantic_of(std::size_t index) const { return semantic_.row_span(index); }
    std::span<const float> ranking_of(std::size_t index) const { return ranking_.row_span(index); }

    /// Index of an item id, or nullopt if unknown.
    std::optional<std::size_t> index_of(uint64_t item_id) const;

    /// One-shot attachment of per-item SIDs after tokenization.
    void assign_sids(std::vector<SemanticId> sids);
    bool has_sids() const { return !sids_.empty(); }
    const std::vector<SemanticId>& sids() const { return sids_; }
    const SemanticId& sid_of(std::size_t index) const { return sids_[index]; }

private:
    std::vector<uint64_t> ids_;
    MatF semantic_;
    MatF ranking_;
    std::vector<SemanticId> sids_;
    std::unordered_map<uint64_t, std::size_t> index_;
};

struct SyntheticConfig {
    uint32_t num_coarse_clusters = 4;
    uint32_t num_fine_per_coarse = 3;
    uint32_t items_per_fine = 10;
    uint32_t d = 64;
    uint32_t d_prime = 32;
    double coarse_spread = 10.0;
    double fine_spread = 1.0;
    double noise_sigma = 0.05;
    uint32_t num_users = 10;
    uint32_t history_length = 100;
    double zipf_exponent = 1.0;
    int64_t base_timestamp = 1'000'000;
    int64_t timestamp_spacing = 1;
    uint64_t seed = 1;

    void validate() const; // throws ValidationError
};

/// Planted labels for synthetic corpora: per-item (coarse, fine) cluster
/// indices plus the generating centers, for oracle checks.
struct GroundTruth {
    std::vector<uint32_t> coarse_label; // per item
    std::vector<uint32_t> fine_label;   // per item, global fine index
    MatF coarse_centers;                // num_coarse x d
    MatF fine_centers;                  // num_coarse*num_fine x d

    uint32_t num_fine_clusters() const { return static_cast<uint32_t>(fine_centers.rows()); }
};

enum class CorpusFormat { binary, csv };

/// SQZ1 binary container or the documented CSV layout.
ItemCorpus load_embeddings(const std::string& path, CorpusFormat format);
void save_embeddings(const ItemCorpus& corpus, const std::string& path, CorpusFormat format);

/// Event CSV `user_id,item_id,timestamp` sorted by (user_id, timestamp).
std::vector<InteractionSequence> load_events(const std::string& path);
void save_events(std::span<const InteractionSequence> histories, const std::string& path);

std::pair<ItemCorpus, GroundTruth> generate_synthetic_corpus(const SyntheticConfig& cfg);

std::vector<InteractionSequence> generate_user_histories(const SyntheticConfig& cfg,
                                                         const ItemCorpus& corpus);

/// Zipf probability masses over ranks 0..n-1 with exponent s (s=0 is uniform).
std::vector<double> zipf_masses(uint32_t n, double exponent);

} // namespace sqz
