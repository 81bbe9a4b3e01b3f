#include "prunelab/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace prunelab {

namespace {

const char* const kReservedLabels[4] = {"<pad>", "<unk>", "<bos>", "<eos>"};

// Tokens are stored in the vocab file with every byte outside printable
// non-space ASCII escaped as \xNN so the file stays line oriented.
std::string escape_token(const std::string& raw) {
    std::string out;
    for (unsigned char c : raw) {
        if (c > 32 && c < 127 && c != '\\') {
            out.push_back(static_cast<char>(c));
        } else {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\x%02X", c);
            out += buf;
        }
    }
    return out;
}

std::string unescape_token(const std::string& esc, const std::string& path) {
    std::string out;
    for (size_t i = 0; i < esc.size();) {
        if (esc[i] != '\\') {
            out.push_back(esc[i]);
            ++i;
            continue;
        }
        if (i + 3 >= esc.size() || esc[i + 1] != 'x') {
            throw IoError("bad escape in vocabulary file " + path);
        }
        auto hex = [&](char c) -> int {
            if (c >= '0' && c <= '9') return c - '0';
            if (c >= 'A' && c <= 'F') return c - 'A' + 10;
            if (c >= 'a' && c <= 'f') return c - 'a' + 10;
            throw IoError("bad hex digit in vocabulary file " + path);
        };
        out.push_back(static_cast<char>(hex(esc[i + 2]) * 16 + hex(esc[i + 3])));
        i += 4;
    }
    return out;
}

}  // namespace

Vocabulary::Vocabulary() {
    tokens_.reserve(kBaseSize);
    for (int i = 0; i < kNumReserved; ++i) tokens_.push_back(kReservedLabels[i]);
    for (int b = 0; b < 256; ++b) {
        tokens_.push_back(std::string(1, static_cast<char>(b)));
    }
    for (int32_t id = kNumReserved; id < kBaseSize; ++id) index_token(id);
}

void Vocabulary::index_token(int32_t id) {
    const std::string& tok = tokens_[id];
    lookup_.emplace(tok, id);
    max_token_len_ = std::max(max_token_len_, tok.size());
}

Vocabulary Vocabulary::train_bpe(const std::vector<std::string>& corpus,
                                 int64_t vocab_size) {
    if (corpus.empty()) throw IoError("cannot train a vocabulary on an empty corpus");
    if (vocab_size <= kBaseSize) {
        throw ConfigError("vocab_size must exceed the base alphabet size of " +
                          std::to_string(kBaseSize) + ", got " +
                          std::to_string(vocab_size));
    }

    Vocabulary vocab;

    // Working copy of the corpus as symbol sequences.
    std::vector<std::vector<int32_t>> seqs;
    seqs.reserve(corpus.size());
    for (const std::string& line : corpus) {
        std::vector<int32_t> s;
        s.reserve(line.size());
        for (unsigned char c : line) s.push_back(kNumReserved + c);
        seqs.push_back(std::move(s));
    }

    auto pair_key = [](int32_t l, int32_t r) -> uint64_t {
        return (static_cast<uint64_t>(static_cast<uint32_t>(l)) << 32) |
               static_cast<uint32_t>(r);
    };

    while (vocab.size() < vocab_size) {
        std::unordered_map<uint64_t, int64_t> counts;
        for (const auto& s : seqs) {
            for (size_t i = 0; i + 1 < s.size(); ++i) {
                ++counts[pair_key(s[i], s[i + 1])];
            }
        }

        // Pick the winning pair independently of hash iteration order.
        int64_t best_count = 0;
        int32_t best_l = 0, best_r = 0;
        for (const auto& [key, count] : counts) {
            int32_t l = static_cast<int32_t>(key >> 32);
            int32_t r = static_cast<int32_t>(key & 0xffffffffu);
            if (count > best_count ||
                (count == best_count &&
                 (l < best_l || (l == best_l && r < best_r)))) {
                best_count = count;
                best_l = l;
                best_r = r;
            }
        }
        if (best_count < 2) break;

        int32_t new_id = vocab.size();
        vocab.tokens_.push_back(vocab.tokens_[best_l] + vocab.tokens_[best_r]);
        vocab.merges_.push_back({best_l, best_r, new_id});
        vocab.index_token(new_id);

        // Replace left-to-right, non-overlapping.
        for (auto& s : seqs) {
            size_t w = 0;
            for (size_t i = 0; i < s.size();) {
                if (i + 1 < s.size() && s[i] == best_l && s[i + 1] == best_r) {
                    s[w++] = new_id;
                    i += 2;
                } else {
                    s[w++] = s[i++];
                }
            }
            s.resize(w);
        }
    }
    return vocab;
}

std::vector<int32_t> Vocabulary::encode(std::string_view text) const {
    std::vector<int32_t> out;
    size_t i = 0;
    while (i < text.size()) {
        size_t limit = std::min(max_token_len_, text.size() - i);
        int32_t id = kUnk;
        size_t taken = 1;
        for (size_t len = limit; len >= 1; --len) {
            auto it = lookup_.find(std::string(text.substr(i, len)));
            if (it != lookup_.end()) {
                id = it->second;
                taken = len;
                break;
            }
        }
        out.push_back(id);
        i += taken;
    }
    return out;
}

std::string Vocabulary::decode(const std::vector<int32_t>& ids) const {
    std::string out;
    for (int32_t id : ids) {
        if (id < 0 || id >= size()) {
            throw RangeError("token id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(size()));
        }
        if (id < kNumReserved) continue;  // reserved ids carry no bytes
        out += tokens_[id];
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "bpevocab 1\n";
    f << "size " << size() << "\n";
    f << "merges " << merges_.size() << "\n";
    for (int32_t id = 0; id < size(); ++id) {
        f << "token " << id << " " << escape_token(tokens_[id]) << "\n";
    }
    for (const Merge& m : merges_) {
        f << "merge " << m.left << " " << m.right << " " << m.result << "\n";
    }
    if (!f) throw IoError("failed writing vocabulary to " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open vocabulary file " + path);
    std::string word;
    int version = 0;
    f >> word >> version;
    if (word != "bpevocab" || version != 1) {
        throw IoError(path + " is not a version-1 vocabulary file");
    }
    int32_t total = 0;
    size_t n_merges = 0;
    f >> word >> total;
    if (word != "size" || total < kBaseSize) throw IoError("bad size line in " + path);
    f >> word >> n_merges;
    if (word != "merges") throw IoError("bad merges line in " + path);
    if (total != kBaseSize + static_cast<int32_t>(n_merges)) {
        throw IoError("size and merge count disagree in " + path);
    }

    Vocabulary vocab;
    for (int32_t i = 0; i < total; ++i) {
        int32_t id = -1;
        std::string esc;
        f >> word >> id >> esc;
        if (!f || word != "token" || id != i) {
            throw IoError("bad token line " + std::to_string(i) + " in " + path);
        }
        std::string raw = unescape_token(esc, path);
        if (id < kBaseSize) {
            if (raw != vocab.tokens_[id]) {
                throw IoError("base token " + std::to_string(id) + " mismatch in " + path);
            }
        } else {
            vocab.tokens_.push_back(raw);
            vocab.index_token(id);
        }
    }
    for (size_t i = 0; i < n_merges; ++i) {
        Merge m{};
        f >> word >> m.left >> m.right >> m.result;
        if (!f || word != "merge" || m.result != kBaseSize + static_cast<int32_t>(i) ||
            m.left < 0 || m.left >= m.result || m.right < 0 || m.right >= m.result) {
            throw IoError("bad merge line " + std::to_string(i) + " in " + path);
        }
        if (vocab.tokens_[m.result] != vocab.tokens_[m.left] + vocab.tokens_[m.right]) {
            throw IoError("merge " + std::to_string(i) + " does not reproduce its token in " + path);
        }
        vocab.merges_.push_back(m);
    }
    return vocab;
}

uint64_t Vocabulary::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        h ^= 0xff;
        h *= 0x100000001b3ull;
    };
    for (const std::string& t : tokens_) mix(t);
    return h;
}

}  // namespace prunelab
