#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "helprank/numerics.hpp"
#include "helprank/rng.hpp"
#include "helprank/text.hpp"

namespace helprank {

enum class EmbeddingMode { kRandomUniform, kSkipgramSubword };

const char* mode_name(EmbeddingMode m);
EmbeddingMode parse_mode(std::string_view name);

// Word look-up table. T1 uses random-uniform rows only; T2 adds a hashed
// subword matrix and composes a word as the mean of its word row and the
// rows of its character n-grams, so unseen words still get a vector.
struct EmbeddingTable {
  EmbeddingMode mode = EmbeddingMode::kRandomUniform;
  int32_t dim = 0;
  Mat<float> word_vectors;     // |V| x dim
  Mat<float> subword_vectors;  // bucket_count x dim; 0x0 in RandomUniform mode
  SubwordHasher hasher;        // meaningful in SkipgramSubword mode
  uint64_t vocab_checksum = 0;

  size_t vocab_size() const { return word_vectors.rows(); }
};

struct SkipgramConfig {
  int32_t window = 5;        // per-position effective window drawn in [1, window]
  int32_t negatives = 5;
  double subsample_t = 1e-4;
  int32_t epochs = 5;
  double initial_lr = 0.025;
  double final_lr_fraction = 1e-4;  // lr decays linearly to this fraction
  int64_t min_count = 5;            // applied when building the vocabulary
  int32_t dim = 300;
  SubwordHasher hasher;
};

// Rows i.i.d. uniform in [-range, range]; the PAD row is zeroed. Stamp
// vocab_checksum yourself or use the Vocabulary overload.
EmbeddingTable init_random_uniform(size_t vocab_size, int32_t dim, uint64_t seed,
                                   float range = 0.05f);
EmbeddingTable init_random_uniform(const Vocabulary& vocab, int32_t dim,
                                   uint64_t seed, float range = 0.05f);

// Draws token ids with probability proportional to count^power. Specials
// (PAD, UNK) have zero count and are never drawn.
class UnigramSampler {
 public:
  UnigramSampler(const std::vector<int64_t>& counts, double power = 0.75);

  int32_t sample(Rng& rng) const;       // binary search over the cumulative mass
  double probability(int32_t id) const;
  size_t size() const { return cumulative_.size(); }

 private:
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

// P(discard) for a token whose corpus frequency is count/total. Tokens at or
// below the threshold are never dropped.
double subsample_discard_prob(int64_t count, int64_t total, double t);

// Negative-sampling objective for one center against one positive and k
// negative output vectors:
//   L = -log s(h.pos) - sum_j log s(-h.neg_j),  s = logistic.
// Gradients are accumulated into the d_* buffers. Templated so a
// double-precision twin can serve as a finite-difference oracle.
template <typename T>
T sgns_pair_grads(std::span<const T> h, std::span<const T> pos,
                  const std::vector<std::vector<T>>& negs, std::span<T> d_h,
                  std::span<T> d_pos, std::vector<std::vector<T>>& d_negs);

// Skip-gram with negative sampling over raw documents, FastText-style
// subwords on the input side. Deterministic for a fixed (corpus, vocab,
// config, seed); single-writer. Returns a SkipgramSubword table aligned with
// `vocab`. `epoch_losses`, when given, receives the per-epoch mean pair loss.
EmbeddingTable train_skipgram(const std::vector<std::string>& texts,
                              const Vocabulary& vocab, const SkipgramConfig& cfg,
                              uint64_t seed, const TokenizerConfig& tok = {},
                              std::vector<double>* epoch_losses = nullptr);

// Composed vector for a word. RandomUniform: the word's row (UNK row when
// out of vocabulary). SkipgramSubword: mean of word row and subword rows;
// out-of-vocabulary words use subword rows alone, so this never fails.
std::vector<float> word_vector(std::string_view word, const EmbeddingTable& table,
                               const Vocabulary& vocab);

// Raises AlignmentError unless the table was built against this vocabulary.
void check_alignment(const EmbeddingTable& table, const Vocabulary& vocab);

// Binary container round trip (bit-exact). Header metadata records mode,
// dim, subword geometry and the vocabulary checksum.
void save_table(const std::string& path, const EmbeddingTable& table);
EmbeddingTable load_table(const std::string& path);

// Text export: first line "|V| dim", then one "token v1 ... vd" line per
// vocabulary entry (composed vectors, same as word_vector).
void export_table_text(const std::string& path, const EmbeddingTable& table,
                       const Vocabulary& vocab);

struct Neighbor {
  int32_t id;
  std::string token;
  double cosine;
};

// k nearest vocabulary entries by cosine, query excluded, ties broken by
// token id ascending. k larger than |V|-1 is clipped.
std::vector<Neighbor> nearest_neighbors(std::string_view word, size_t k,
                                        const EmbeddingTable& table,
                                        const Vocabulary& vocab);

}  // namespace helprank
