#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prunelab/common.hpp"

namespace prunelab {

// Byte-level BPE vocabulary. Ids 0..3 are reserved (pad, unk, bos, eos),
// ids 4..259 are the raw bytes, everything above is a learned merge.
// Encoding is greedy longest-match-first over the token strings, which makes
// decode(encode(text)) exact for any byte string.
class Vocabulary {
public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kUnk = 1;
    static constexpr int32_t kBos = 2;
    static constexpr int32_t kEos = 3;
    static constexpr int32_t kNumReserved = 4;
    static constexpr int32_t kBaseSize = 260;  // reserved + 256 bytes

    struct Merge {
        int32_t left;
        int32_t right;
        int32_t result;
    };

    // Greedy pair-merge training. Deterministic given corpus order: the most
    // frequent adjacent pair wins, ties go to the smaller (left, right) id
    // pair. Stops early if no pair occurs at least twice.
    static Vocabulary train_bpe(const std::vector<std::string>& corpus,
                                int64_t vocab_size);

    std::vector<int32_t> encode(std::string_view text) const;
    std::string decode(const std::vector<int32_t>& ids) const;

    int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
    const std::string& token(int32_t id) const { return tokens_.at(id); }
    const std::vector<Merge>& merges() const { return merges_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    // Stable content hash used to detect vocabulary mismatches across
    // checkpoints.
    uint64_t content_hash() const;

private:
    Vocabulary();  // base alphabet only

    std::vector<std::string> tokens_;  // id -> byte string; reserved hold labels
    std::vector<Merge> merges_;
    std::unordered_map<std::string, int32_t> lookup_;  // byte string -> id
    size_t max_token_len_{1};

    void index_token(int32_t id);
};

}  // namespace prunelab
