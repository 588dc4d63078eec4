#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

namespace sqz {

/// L-level semantic identifier: one codeword index per residual level.
/// Lexicographic order on codes doubles as the tree address order.
struct SemanticId {
    std::vector<uint32_t> codes;

    std::size_t levels() const { return codes.size(); }
    auto operator<=>(const SemanticId&) const = default;
};

inline std::string to_string(const SemanticId& sid) {
    std::string out;
    for (std::size_t i = 0; i < sid.codes.size(); ++i) {
        if (i) out.push_back('.');
        out += std::to_string(sid.codes[i]);
    }
    return out;
}

struct SemanticIdHash {
    std::size_t operator()(const SemanticId& sid) const {
        // FNV-1a over the code words
        uint64_t h = 1469598103934665603ULL;
        for (uint32_t c : sid.codes) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return static_cast<std::size_t>(h);
    }
};

} // namespace sqz
