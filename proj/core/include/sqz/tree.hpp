#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sqz/corpus.hpp"
#include "sqz/rq.hpp"
#include "sqz/sid.hpp"

namespace sqz {

/// Sparse per-user vote trie over the global SID space. The SID path is the
/// global tree address, so per-user tries share the global structure
/// implicitly; only prefixes that actually occur are materialized.
class VoteTrie {
public:
    struct Node {
        uint64_t count = 0;
        std::map<uint32_t, Node> children; // ordered: deterministic traversal
    };

    VoteTrie() = default;
    VoteTrie(Node root, uint32_t levels) : root_(std::move(root)), levels_(levels) {}

    const Node& root() const { return root_; }
    uint32_t levels() const { return levels_; }
    uint64_t total() const { return root_.count; }

private:
    Node root_;
    uint32_t levels_ = 0;
};

struct InterestAgent {
    SemanticId path;
    uint64_t raw_count = 0;
    double weight = 0.0;          // softmax-normalized over surviving agents
    std::vector<float> prototype; // reconstruct(path)
};

struct InterestAgentSet {
    uint64_t user_id = 0;
    std::vector<uint32_t> budget; // k^(1)..k^(L)
    std::vector<InterestAgent> agents; // sorted lexicographically by path

    std::size_t size() const { return agents.size(); }
};

/// SID per event, order preserved. Throws on items missing from the corpus,
/// naming the event index.
std::vector<SemanticId> tokenize_history(const InteractionSequence& seq, const ItemCorpus& corpus,
                                         const CodebookStack& stack);

/// Leaf counts are SID multiplicities; internal counts sum their subtrees.
VoteTrie build_vote_trie(const std::vector<SemanticId>& sids);

/// Top-down retention of the top-k^(l) children per active parent (ties keep
/// the lower codeword index). Surviving leaves become agents, weighted by a
/// max-subtracted softmax over raw counts / count_scale.
InterestAgentSet vote(const VoteTrie& trie, const std::vector<uint32_t>& budget,
                      const CodebookStack& stack, double count_scale = 1.0,
                      uint64_t user_id = 0);

/// tokenize -> trie -> vote in one call.
InterestAgentSet build_agents(const InteractionSequence& seq, const ItemCorpus& corpus,
                              const CodebookStack& stack, const std::vector<uint32_t>& budget,
                              double count_scale = 1.0);

} // namespace sqz
