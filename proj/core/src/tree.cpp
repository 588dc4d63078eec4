#include "sqz/tree.hpp"

#include <algorithm>
#include <cmath>

#include "sqz/error.hpp"

namespace sqz {

std::vector<SemanticId> tokenize_history(const InteractionSequence& seq, const ItemCorpus& corpus,
                                         const CodebookStack& stack) {
    std::vector<SemanticId> out;
    out.reserve(seq.events.size());
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const auto idx = corpus.index_of(seq.events[i].item_id);
        if (!idx) {
            throw ValidationError("tokenize_history: unknown item " +
                                  std::to_string(seq.events[i].item_id) + " at event index " +
                                  std::to_string(i));
        }
        out.push_back(quantize(corpus.semantic_of(*idx), stack).sid);
    }
    return out;
}

VoteTrie build_vote_trie(const std::vector<SemanticId>& sids) {
    if (sids.empty()) return VoteTrie({}, 0);
    const std::size_t L = sids.front().codes.size();
    VoteTrie::Node root;
    for (const auto& sid : sids) {
        if (sid.codes.size() != L) {
            throw ValidationError("build_vote_trie: mixed SID lengths (" + std::to_string(L) +
                                  " vs " + std::to_string(sid.codes.size()) + ")");
        }
        root.count += 1;
        VoteTrie::Node* node = &root;
        for (uint32_t code : sid.codes) {
            node = &node->children[code];
            node->count += 1;
        }
    }
    return VoteTrie(std::move(root), static_cast<uint32_t>(L));
}

namespace {

// children of `parent` ranked by vote count, ties to the lower index
std::vector<const std::pair<const uint32_t, VoteTrie::Node>*>
top_children(const VoteTrie::Node& parent, uint32_t k) {
    std::vector<const std::pair<const uint32_t, VoteTrie::Node>*> ranked;
    ranked.reserve(parent.children.size());
    for (const auto& kv : parent.children) ranked.push_back(&kv);
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) {
        if (a->second.count != b->second.count) return a->second.count > b->second.count;
        return a->first < b->first;
    });
    if (ranked.size() > k) ranked.resize(k);
    // ascending index afterwards so the leaf walk is lexicographic
    std::sort(ranked.begin(), ranked.end(),
              [](const auto* a, const auto* b) { return a->first < b->first; });
    return ranked;
}

void collect(const VoteTrie::Node& node, const std::vector<uint32_t>& budget, std::size_t level,
             std::vector<uint32_t>& prefix, std::vector<InterestAgent>& out) {
    if (level == budget.size()) {
        InterestAgent agent;
        agent.path.codes = prefix;
        agent.raw_count = node.count;
        out.push_back(std::move(agent));
        return;
    }
    for (const auto* kv : top_children(node, budget[level])) {
        prefix.push_back(kv->first);
        collect(kv->second, budget, level + 1, prefix, out);
        prefix.pop_back();
    }
}

} // namespace

InterestAgentSet vote(const VoteTrie& trie, const std::vector<uint32_t>& budget,
                      const CodebookStack& stack, double count_scale, uint64_t user_id) {
    if (trie.total() == 0) throw ValidationError("vote: empty trie");
    if (budget.size() != trie.levels()) {
        throw ValidationError("vote: budget has " + std::to_string(budget.size()) +
                              " levels, trie has " + std::to_string(trie.levels()));
    }
    for (uint32_t k : budget) {
        if (k < 1) throw ValidationError("vote: every k^(l) must be >= 1");
    }
    if (count_scale <= 0) throw ValidationError("vote: count_scale must be positive");

    InterestAgentSet set;
    set.user_id = user_id;
    set.budget = budget;
    std::vector<uint32_t> prefix;
    collect(trie.root(), budget, 0, prefix, set.agents);

    double max_score = -std::numeric_limits<double>::infinity();
    for (const auto& a : set.agents) {
        max_score = std::max(max_score, static_cast<double>(a.raw_count) / count_scale);
    }
    double denom = 0.0;
    for (auto& a : set.agents) {
        a.weight = std::exp(static_cast<double>(a.raw_count) / count_scale - max_score);
        denom += a.weight;
    }
    for (auto& a : set.agents) {
        a.weight /= denom;
        a.prototype = reconstruct(a.path, stack);
    }
    return set;
}

InterestAgentSet build_agents(const InteractionSequence& seq, const ItemCorpus& corpus,
                              const CodebookStack& stack, const std::vector<uint32_t>& budget,
                              double count_scale) {
    const auto sids = tokenize_history(seq, corpus, stack);
    const auto trie = build_vote_trie(sids);
    return vote(trie, budget, stack, count_scale, seq.user_id);
}

} // namespace sqz
