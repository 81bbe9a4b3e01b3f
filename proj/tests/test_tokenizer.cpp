#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <string>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/tokenizer.hpp"

using namespace prunelab;

namespace {

std::vector<std::string> sample_corpus() {
    return {
        "the cat sat on the mat",
        "the dog sat on the log",
        "a cat and a dog sat together",
        "the mat was flat",
        "dogs and cats and mats",
        "the the the cat cat",
    };
}

// Longest-match oracle: scan the token table directly at every position.
std::vector<int32_t> greedy_reference(const Vocabulary& v, const std::string& text) {
    std::vector<int32_t> out;
    size_t pos = 0;
    while (pos < text.size()) {
        int32_t best_id = -1;
        size_t best_len = 0;
        for (int32_t id = Vocabulary::kNumReserved; id < v.size(); ++id) {
            const std::string& tok = v.token(id);
            if (tok.size() > best_len && pos + tok.size() <= text.size() &&
                text.compare(pos, tok.size(), tok) == 0) {
                best_id = id;
                best_len = tok.size();
            }
        }
        REQUIRE(best_id >= 0);
        out.push_back(best_id);
        pos += best_len;
    }
    return out;
}

}  // namespace

TEST_CASE("roundtrip is exact for corpus text and arbitrary bytes") {
    Vocabulary v = Vocabulary::train_bpe(sample_corpus(), 300);
    for (const std::string& line : sample_corpus()) {
        CHECK(v.decode(v.encode(line)) == line);
    }
    std::string bytes;
    for (int i = 0; i < 256; ++i) bytes.push_back(static_cast<char>(i));
    CHECK(v.decode(v.encode(bytes)) == bytes);
    CHECK(v.decode(v.encode("")) == "");
    CHECK(v.decode(v.encode("völlig unbekannt 日本語")) == "völlig unbekannt 日本語");
}

TEST_CASE("encode is greedy longest-match over the token table") {
    Vocabulary v = Vocabulary::train_bpe(sample_corpus(), 320);
    REQUIRE(v.size() > Vocabulary::kBaseSize);  // merges actually learned
    for (const std::string& line : sample_corpus()) {
        CHECK(v.encode(line) == greedy_reference(v, line));
    }
    CHECK(v.encode("the cattle dogma") == greedy_reference(v, "the cattle dogma"));
}

TEST_CASE("segmentation concatenates back to the original bytes") {
    Vocabulary v = Vocabulary::train_bpe(sample_corpus(), 320);
    const std::string text = "the dog and the cat sat";
    std::string rebuilt;
    for (int32_t id : v.encode(text)) {
        CHECK(id >= Vocabulary::kNumReserved);
        rebuilt += v.token(id);
    }
    CHECK(rebuilt == text);
}

TEST_CASE("merges reduce in-distribution token counts") {
    Vocabulary v = Vocabulary::train_bpe(sample_corpus(), 340);
    const std::string line = "the cat sat on the mat";
    CHECK(v.encode(line).size() < line.size());
}

TEST_CASE("training is deterministic and respects the size budget") {
    Vocabulary a = Vocabulary::train_bpe(sample_corpus(), 320);
    Vocabulary b = Vocabulary::train_bpe(sample_corpus(), 320);
    REQUIRE(a.size() == b.size());
    CHECK(a.size() <= 320);
    for (int32_t id = 0; id < a.size(); ++id) CHECK(a.token(id) == b.token(id));
    CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("equal pair counts break ties toward the smaller id pair") {
    // (a,b) and (c,d) both occur twice; (a,b) has the smaller ids and must
    // win the first merge.
    Vocabulary v = Vocabulary::train_bpe({"abab", "cdcd"}, 261);
    REQUIRE(v.merges().size() == 1);
    CHECK(v.token(v.merges()[0].result) == "ab");
}

TEST_CASE("training stops when no pair repeats") {
    Vocabulary v = Vocabulary::train_bpe({"abcdefg"}, 400);
    CHECK(v.size() == Vocabulary::kBaseSize);
}

TEST_CASE("save and load reproduce the vocabulary exactly") {
    Vocabulary v = Vocabulary::train_bpe(sample_corpus(), 320);
    const std::string path = "tokenizer_roundtrip.vocab";
    v.save(path);
    Vocabulary r = Vocabulary::load(path);
    std::remove(path.c_str());

    REQUIRE(r.size() == v.size());
    for (int32_t id = 0; id < v.size(); ++id) CHECK(r.token(id) == v.token(id));
    CHECK(r.content_hash() == v.content_hash());
    const std::string line = "the cat sat on the mat";
    CHECK(r.encode(line) == v.encode(line));
}

TEST_CASE("decode skips reserved ids and rejects out-of-range ids") {
    Vocabulary v = Vocabulary::train_bpe(sample_corpus(), 300);
    std::vector<int32_t> ids = v.encode("cat");
    ids.insert(ids.begin(), Vocabulary::kBos);
    ids.push_back(Vocabulary::kEos);
    CHECK(v.decode(ids) == "cat");
    CHECK_THROWS_AS(v.decode({v.size()}), RangeError);
    CHECK_THROWS_AS(v.decode({-1}), RangeError);
}

TEST_CASE("loading a corrupted vocabulary file fails") {
    const std::string path = "tokenizer_bad.vocab";
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("not a vocabulary\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(Vocabulary::load(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(Vocabulary::load("does_not_exist.vocab"), IoError);
}
