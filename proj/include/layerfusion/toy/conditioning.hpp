// Prompt registry: turns a prompt string into seeded token embeddings so
// that runs are reproducible and labeled without a text encoder.
//
// Layout of a [T x dmodel] sequence for a prompt of k words (lower-cased,
// split on whitespace, truncated to T - 2 words):
//   row 0          BOS embedding   (seed kBosSeed)
//   rows 1..k      word embeddings (seed fnv1a64(word))
//   row k + 1      EOS = EOS base embedding (seed kEosSeed) + mean of words
//   rows k+2..T-1  copies of the EOS row (padding)
// eos_index = k + 1. Every embedding entry is uniform in [-1, 1).

#pragma once

#include <cctype>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "layerfusion/priors.hpp"
#include "layerfusion/toy/rng.hpp"

namespace layerfusion::toy {

inline constexpr std::uint64_t kBosSeed = 0xB05B05B05ull;
inline constexpr std::uint64_t kEosSeed = 0xE05E05E05ull;

inline std::vector<std::string> prompt_words(std::string_view prompt) {
    std::string lowered(prompt);
    for (char& ch : lowered) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::istringstream in(lowered);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

inline std::vector<float> seeded_embedding(std::uint64_t seed, std::size_t dmodel) {
    SplitMix64 rng(seed);
    std::vector<float> e(dmodel);
    for (float& v : e) v = rng.uniform(-1.0f, 1.0f);
    return e;
}

inline Conditioning encode_prompt(std::string_view prompt, std::size_t text_len,
                                  std::size_t dmodel) {
    if (text_len < 2) throw ConfigError("text length must be at least 2 (BOS + EOS)");
    std::vector<std::string> words = prompt_words(prompt);
    if (words.size() > text_len - 2) words.resize(text_len - 2);

    Tensor tokens({text_len, dmodel});
    auto put = [&](std::size_t r, const std::vector<float>& e) {
        for (std::size_t j = 0; j < dmodel; ++j) tokens.at(r, j) = e[j];
    };
    put(0, seeded_embedding(kBosSeed, dmodel));

    std::vector<float> mean(dmodel, 0.0f);
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto e = seeded_embedding(fnv1a64(words[i]), dmodel);
        put(i + 1, e);
        for (std::size_t j = 0; j < dmodel; ++j) mean[j] += e[j];
    }
    std::vector<float> eos = seeded_embedding(kEosSeed, dmodel);
    if (!words.empty())
        for (std::size_t j = 0; j < dmodel; ++j)
            eos[j] += mean[j] / static_cast<float>(words.size());

    const std::size_t eos_index = words.size() + 1;
    for (std::size_t r = eos_index; r < text_len; ++r) put(r, eos);
    return {std::move(tokens), eos_index, std::string(prompt)};
}

}  // namespace layerfusion::toy
