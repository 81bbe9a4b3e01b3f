// Generates the bundled synthetic corpus: Zipf-weighted invented words slotted
// into a handful of sentence templates. Deterministic for a given seed, so the
// checked-in corpus can be regenerated exactly.
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "prunelab/common.hpp"

using prunelab::Rng;

namespace {

// Pronounceable word stock: open syllables, one to three per word.
std::vector<std::string> make_words(Rng& rng, size_t count) {
    static const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                   "p", "r", "s", "t", "v", "z", "st", "tr",
                                   "gl", "br", "sk", "pl"};
    static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "or", "en"};
    std::vector<std::string> words;
    words.reserve(count);
    while (words.size() < count) {
        int syllables = 1 + static_cast<int>(rng.uniform_int(3));
        std::string w;
        for (int s = 0; s < syllables; ++s) {
            w += onsets[rng.uniform_int(sizeof(onsets) / sizeof(onsets[0]))];
            w += vowels[rng.uniform_int(sizeof(vowels) / sizeof(vowels[0]))];
        }
        bool dup = false;
        for (const std::string& prev : words) {
            if (prev == w) { dup = true; break; }
        }
        if (!dup) words.push_back(std::move(w));
    }
    return words;
}

// Zipf-ish sampler over a word class: rank r gets weight 1/(r+2)^1.05.
class ZipfClass {
public:
    ZipfClass(std::vector<std::string> words) : words_(std::move(words)) {
        double acc = 0.0;
        for (size_t r = 0; r < words_.size(); ++r) {
            acc += 1.0 / std::pow(static_cast<double>(r) + 2.0, 1.05);
            cumulative_.push_back(acc);
        }
    }

    const std::string& sample(Rng& rng) const {
        double u = rng.uniform() * cumulative_.back();
        size_t lo = 0, hi = cumulative_.size() - 1;
        while (lo < hi) {
            size_t mid = (lo + hi) / 2;
            if (cumulative_[mid] < u) lo = mid + 1; else hi = mid;
        }
        return words_[lo];
    }

private:
    std::vector<std::string> words_;
    std::vector<double> cumulative_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Write a deterministic synthetic corpus"};
    std::string out_path;
    int64_t lines = 10000;
    uint64_t seed = 7;
    app.add_option("output", out_path, "File to write")->required();
    app.add_option("--lines", lines, "Number of lines")->capture_default_str();
    app.add_option("--seed", seed, "Generator seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    Rng rng(seed);
    std::vector<std::string> stock = make_words(rng, 700);
    ZipfClass nouns({stock.begin(), stock.begin() + 300});
    ZipfClass verbs({stock.begin() + 300, stock.begin() + 480});
    ZipfClass adjectives({stock.begin() + 480, stock.begin() + 620});
    ZipfClass adverbs({stock.begin() + 620, stock.end()});

    static const char* determiners[] = {"the", "a", "its", "every", "no"};
    static const char* connectors[] = {"and", "but", "so", "while", "because"};

    std::ofstream out(out_path);
    if (!out) {
        std::fprintf(stderr, "error: E_IO cannot open %s\n", out_path.c_str());
        return 1;
    }

    for (int64_t i = 0; i < lines; ++i) {
        std::string line;
        int clauses = 1 + static_cast<int>(rng.uniform_int(3));
        for (int c = 0; c < clauses; ++c) {
            if (c > 0) {
                line += ' ';
                line += connectors[rng.uniform_int(5)];
                line += ' ';
            }
            line += determiners[rng.uniform_int(5)];
            line += ' ';
            if (rng.uniform() < 0.45) {
                line += adjectives.sample(rng);
                line += ' ';
            }
            line += nouns.sample(rng);
            line += ' ';
            line += verbs.sample(rng);
            if (rng.uniform() < 0.35) {
                line += ' ';
                line += adverbs.sample(rng);
            }
            if (rng.uniform() < 0.55) {
                line += ' ';
                line += determiners[rng.uniform_int(5)];
                line += ' ';
                line += nouns.sample(rng);
            }
        }
        out << line << '\n';
    }
    return 0;
}
