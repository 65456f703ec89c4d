#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "helprank/error.hpp"
#include "helprank/rng.hpp"

namespace helprank {

// Tokens are runs of ASCII letters/digits or non-ASCII bytes; everything else
// separates. With strip_html, <...> tags and &entity; escapes become
// separators first. ASCII letters are lowercased when lowercase is set.
// tokenize(join(tokenize(t), " ")) == tokenize(t) for any input.
struct TokenizerConfig {
  bool lowercase = true;
  bool strip_html = true;
};

std::vector<std::string> tokenize(std::string_view text,
                                  const TokenizerConfig& cfg = {});

// Token ids, dense in [0, size). Id order is (corpus frequency desc, token
// asc) after the two specials, so the same corpus and min_count always yield
// the same assignment.
class Vocabulary {
 public:
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;
  static constexpr int32_t kFirstRegular = 2;

  static Vocabulary build(const std::vector<std::vector<std::string>>& docs,
                          int64_t min_count);
  static Vocabulary from_counts(
      const std::unordered_map<std::string, int64_t>& counts, int64_t min_count);

  // Encoding lookup: OOV maps to kUnk.
  int32_t id(std::string_view token) const;
  // Exact lookup: -1 when absent.
  int32_t find(std::string_view token) const;

  const std::string& token(int32_t id) const { return tokens_.at(id); }
  int64_t count(int32_t id) const { return counts_.at(id); }
  int32_t size() const { return static_cast<int32_t>(tokens_.size()); }
  int64_t min_count() const { return min_count_; }
  int64_t total_count() const { return total_count_; }

  // FNV over the token list in id order; embedding tables record it so a
  // table can refuse to run against a different vocabulary.
  uint64_t checksum() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  struct StringHash {
    using is_transparent = void;
    size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };

  std::vector<std::string> tokens_;
  std::vector<int64_t> counts_;
  std::unordered_map<std::string, int32_t, StringHash, std::equal_to<>> index_;
  int64_t min_count_ = 1;
  int64_t total_count_ = 0;
};

// Character n-grams of "<word>" hashed into a fixed bucket range. n counts
// code points, and windows never split a UTF-8 sequence. The full bracketed
// word is always included even when longer than n_max.
struct SubwordHasher {
  int n_min = 3;
  int n_max = 6;
  uint32_t bucket_count = 1u << 18;

  std::vector<uint32_t> ngram_ids(std::string_view word) const;
};

struct EncodedSequence {
  std::vector<int32_t> ids;
  int32_t length = 0;  // pre-padding length; ids.size() == length after encode
  int32_t label = -1;  // 0 helpful, 1 unhelpful, -1 unlabeled
};

EncodedSequence encode(const std::vector<std::string>& tokens,
                       const Vocabulary& vocab, int32_t max_len = 500);

// Inverse document frequencies, fit on the training split only.
// idf = ln((1+N)/(1+df)) + 1.
class IdfTable {
 public:
  static IdfTable fit(const std::vector<std::vector<std::string>>& docs,
                      const Vocabulary& vocab);

  double idf(int32_t id) const;
  int64_t n_docs() const { return n_docs_; }

  void save(const std::string& path, const Vocabulary& vocab) const;
  static IdfTable load(const std::string& path);

 private:
  int64_t n_docs_ = 0;
  std::vector<int64_t> df_;
};

// Sorted by id. tf = raw count / total token count of the document; the
// vector is L2-normalized. Tokens missing from the vocabulary get no
// coordinate. Empty input yields the zero vector.
using SparseVec = std::vector<std::pair<int32_t, float>>;

SparseVec tfidf_vector(const std::vector<std::string>& tokens,
                       const Vocabulary& vocab, const IdfTable& idf);

}  // namespace helprank
