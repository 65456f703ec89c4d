#include "helprank/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "helprank/checkpoint.hpp"
#include "helprank/error.hpp"

namespace helprank {

const char* mode_name(EmbeddingMode m) {
  return m == EmbeddingMode::kRandomUniform ? "random_uniform" : "skipgram_subword";
}

EmbeddingMode parse_mode(std::string_view name) {
  if (name == "random_uniform") return EmbeddingMode::kRandomUniform;
  if (name == "skipgram_subword") return EmbeddingMode::kSkipgramSubword;
  raise("ParseError", "unknown embedding mode " + std::string(name));
}

EmbeddingTable init_random_uniform(size_t vocab_size, int32_t dim, uint64_t seed,
                                   float range) {
  if (vocab_size == 0 || dim <= 0) raise("ShapeError", "empty embedding table");
  EmbeddingTable t;
  t.mode = EmbeddingMode::kRandomUniform;
  t.dim = dim;
  t.word_vectors = Mat<float>(vocab_size, static_cast<size_t>(dim));
  Rng rng(seed);
  for (size_t i = 0; i < t.word_vectors.size(); ++i)
    t.word_vectors[i] = static_cast<float>(rng.uniform(-range, range));
  for (float& v : t.word_vectors.row(Vocabulary::kPad)) v = 0.0f;
  return t;
}

EmbeddingTable init_random_uniform(const Vocabulary& vocab, int32_t dim,
                                   uint64_t seed, float range) {
  EmbeddingTable t = init_random_uniform(vocab.size(), dim, seed, range);
  t.vocab_checksum = vocab.checksum();
  return t;
}

UnigramSampler::UnigramSampler(const std::vector<int64_t>& counts, double power) {
  cumulative_.resize(counts.size());
  double acc = 0.0;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0) acc += std::pow(static_cast<double>(counts[i]), power);
    cumulative_[i] = acc;
  }
  total_ = acc;
  if (total_ <= 0.0) raise("EmptyCorpus", "unigram sampler has no probability mass");
}

int32_t UnigramSampler::sample(Rng& rng) const {
  double x = rng.next_double() * total_;
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
  if (it == cumulative_.end()) --it;  // x == total_ edge
  return static_cast<int32_t>(it - cumulative_.begin());
}

double UnigramSampler::probability(int32_t id) const {
  if (id < 0 || static_cast<size_t>(id) >= cumulative_.size())
    raise("IndexError", "sampler id out of range");
  double lo = id == 0 ? 0.0 : cumulative_[id - 1];
  return (cumulative_[id] - lo) / total_;
}

double subsample_discard_prob(int64_t count, int64_t total, double t) {
  if (count <= 0 || total <= 0) return 0.0;
  double f = static_cast<double>(count) / static_cast<double>(total);
  if (f <= t) return 0.0;
  return 1.0 - std::sqrt(t / f);
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

template <typename T>
T sgns_pair_grads(std::span<const T> h, std::span<const T> pos,
                  const std::vector<std::vector<T>>& negs, std::span<T> d_h,
                  std::span<T> d_pos, std::vector<std::vector<T>>& d_negs) {
  const size_t d = h.size();
  check_shape(pos.size() == d && d_h.size() == d && d_pos.size() == d,
              "sgns_pair_grads");
  double loss = 0.0;

  double fp = 0.0;
  for (size_t i = 0; i < d; ++i) fp += static_cast<double>(h[i]) * pos[i];
  double sp = logistic(fp);
  loss -= std::log(std::max(sp, 1e-12));
  T gp = static_cast<T>(sp - 1.0);  // dL/d(h.pos)
  for (size_t i = 0; i < d; ++i) {
    d_h[i] += gp * pos[i];
    d_pos[i] += gp * h[i];
  }

  for (size_t j = 0; j < negs.size(); ++j) {
    check_shape(negs[j].size() == d && d_negs[j].size() == d, "sgns_pair_grads neg");
    double fn = 0.0;
    for (size_t i = 0; i < d; ++i) fn += static_cast<double>(h[i]) * negs[j][i];
    double sn = logistic(fn);
    loss -= std::log(std::max(1.0 - sn, 1e-12));
    T gn = static_cast<T>(sn);  // dL/d(h.neg)
    for (size_t i = 0; i < d; ++i) {
      d_h[i] += gn * negs[j][i];
      d_negs[j][i] += gn * h[i];
    }
  }
  return static_cast<T>(loss);
}

template float sgns_pair_grads<float>(std::span<const float>, std::span<const float>,
                                      const std::vector<std::vector<float>>&,
                                      std::span<float>, std::span<float>,
                                      std::vector<std::vector<float>>&);
template double sgns_pair_grads<double>(std::span<const double>,
                                        std::span<const double>,
                                        const std::vector<std::vector<double>>&,
                                        std::span<double>, std::span<double>,
                                        std::vector<std::vector<double>>&);

EmbeddingTable train_skipgram(const std::vector<std::string>& texts,
                              const Vocabulary& vocab, const SkipgramConfig& cfg,
                              uint64_t seed, const TokenizerConfig& tok,
                              std::vector<double>* epoch_losses) {
  if (texts.empty()) raise("EmptyCorpus", "skip-gram corpus is empty");
  if (cfg.window < 1 || cfg.negatives < 0 || cfg.epochs < 1 || cfg.dim < 1)
    raise("ConfigError", "bad skip-gram configuration");

  // Encode once; out-of-vocabulary tokens are dropped from the stream.
  std::vector<std::vector<int32_t>> docs;
  docs.reserve(texts.size());
  size_t kept_tokens = 0;
  for (const std::string& text : texts) {
    std::vector<int32_t> ids;
    for (const std::string& tokstr : tokenize(text, tok)) {
      int32_t id = vocab.find(tokstr);
      if (id >= Vocabulary::kFirstRegular) {
        ids.push_back(id);
        ++kept_tokens;
      }
    }
    docs.push_back(std::move(ids));
  }
  if (kept_tokens == 0)
    raise("EmptyCorpus", "no in-vocabulary tokens in the skip-gram corpus");

  const size_t V = vocab.size();
  const size_t d = static_cast<size_t>(cfg.dim);

  // Per-word subword ids and subsampling discard probabilities.
  std::vector<std::vector<uint32_t>> subs(V);
  std::vector<double> discard(V, 0.0);
  std::vector<int64_t> counts(V);
  for (size_t i = 0; i < V; ++i) {
    counts[i] = vocab.count(static_cast<int32_t>(i));
    if (i >= Vocabulary::kFirstRegular) {
      subs[i] = cfg.hasher.ngram_ids(vocab.token(static_cast<int32_t>(i)));
      discard[i] =
          subsample_discard_prob(counts[i], vocab.total_count(), cfg.subsample_t);
    }
  }
  UnigramSampler sampler(counts);

  EmbeddingTable t;
  t.mode = EmbeddingMode::kSkipgramSubword;
  t.dim = cfg.dim;
  t.hasher = cfg.hasher;
  t.vocab_checksum = vocab.checksum();
  t.word_vectors = Mat<float>(V, d);
  t.subword_vectors = Mat<float>(cfg.hasher.bucket_count, d);

  Rng init_rng(derive_seed(seed, "skipgram/init"));
  const double init_range = 0.5 / static_cast<double>(d);
  for (size_t i = 0; i < t.word_vectors.size(); ++i)
    t.word_vectors[i] = static_cast<float>(init_rng.uniform(-init_range, init_range));
  for (float& v : t.word_vectors.row(Vocabulary::kPad)) v = 0.0f;
  for (size_t i = 0; i < t.subword_vectors.size(); ++i)
    t.subword_vectors[i] =
        static_cast<float>(init_rng.uniform(-init_range, init_range));

  Mat<float> out(V, d);  // context-side vectors, zero-initialized

  Rng rng(derive_seed(seed, "skipgram/train"));
  std::vector<int32_t> kept;
  std::vector<float> h(d), acc(d);
  const int64_t total_docs =
      static_cast<int64_t>(docs.size()) * static_cast<int64_t>(cfg.epochs);
  int64_t done_docs = 0;

  for (int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int64_t epoch_pairs = 0;

    for (const std::vector<int32_t>& doc : docs) {
      double progress = static_cast<double>(done_docs) / static_cast<double>(total_docs);
      double lr = cfg.initial_lr *
                  (1.0 - (1.0 - cfg.final_lr_fraction) * progress);
      ++done_docs;

      kept.clear();
      for (int32_t id : doc) {
        double p = discard[id];
        if (p > 0.0 && rng.next_double() < p) continue;
        kept.push_back(id);
      }
      const int64_t n = static_cast<int64_t>(kept.size());

      for (int64_t i = 0; i < n; ++i) {
        int64_t reduced = 1 + static_cast<int64_t>(rng.next_below(cfg.window));
        int32_t center = kept[i];
        const std::vector<uint32_t>& csub = subs[center];
        const double n_const = 1.0 + static_cast<double>(csub.size());

        // Composed input vector: mean of word row and subword rows.
        {
          std::span<const float> wrow = t.word_vectors.row(center);
          for (size_t x = 0; x < d; ++x) h[x] = wrow[x];
          for (uint32_t s : csub) {
            std::span<const float> srow = t.subword_vectors.row(s);
            for (size_t x = 0; x < d; ++x) h[x] += srow[x];
          }
          for (size_t x = 0; x < d; ++x) h[x] /= static_cast<float>(n_const);
        }

        for (int64_t j = std::max<int64_t>(0, i - reduced);
             j <= std::min<int64_t>(n - 1, i + reduced); ++j) {
          if (j == i) continue;
          int32_t context = kept[j];
          std::fill(acc.begin(), acc.end(), 0.0f);

          // Positive target plus sampled negatives; label 1 then 0s.
          for (int32_t k = 0; k <= cfg.negatives; ++k) {
            int32_t target;
            double label;
            if (k == 0) {
              target = context;
              label = 1.0;
            } else {
              target = sampler.sample(rng);
              if (target == context) continue;
              label = 0.0;
            }
            std::span<float> orow = out.row(target);
            double f = 0.0;
            for (size_t x = 0; x < d; ++x)
              f += static_cast<double>(h[x]) * orow[x];
            double s = logistic(f);
            epoch_loss -= label == 1.0 ? std::log(std::max(s, 1e-12))
                                       : std::log(std::max(1.0 - s, 1e-12));
            float g = static_cast<float>(lr * (label - s));
            for (size_t x = 0; x < d; ++x) {
              acc[x] += g * orow[x];
              orow[x] += g * h[x];
            }
          }
          ++epoch_pairs;

          // Distribute the accumulated input gradient across constituents.
          float scale = static_cast<float>(1.0 / n_const);
          std::span<float> wrow = t.word_vectors.row(center);
          for (size_t x = 0; x < d; ++x) wrow[x] += scale * acc[x];
          for (uint32_t s : csub) {
            std::span<float> srow = t.subword_vectors.row(s);
            for (size_t x = 0; x < d; ++x) srow[x] += scale * acc[x];
          }
        }
      }
    }

    if (epoch_losses)
      epoch_losses->push_back(
          epoch_pairs == 0 ? 0.0 : epoch_loss / static_cast<double>(epoch_pairs));
  }

  if (!t.word_vectors.all_finite() || !t.subword_vectors.all_finite())
    raise("NumericalError", "skip-gram training produced non-finite vectors");
  return t;
}

void check_alignment(const EmbeddingTable& table, const Vocabulary& vocab) {
  if (table.word_vectors.rows() != static_cast<size_t>(vocab.size()))
    raise("AlignmentError",
          "table has " + std::to_string(table.word_vectors.rows()) +
              " rows, vocabulary has " + std::to_string(vocab.size()));
  if (table.vocab_checksum != 0 && table.vocab_checksum != vocab.checksum())
    raise("AlignmentError", "embedding table was built against a different vocabulary");
}

namespace {

std::vector<float> compose_by_id(const EmbeddingTable& table, int32_t id,
                                 std::string_view word) {
  const size_t d = static_cast<size_t>(table.dim);
  std::vector<float> v(d, 0.0f);
  if (table.mode == EmbeddingMode::kRandomUniform) {
    std::span<const float> row =
        table.word_vectors.row(id >= 0 ? id : Vocabulary::kUnk);
    return {row.begin(), row.end()};
  }
  std::vector<uint32_t> subs = table.hasher.ngram_ids(word);
  double n_const = static_cast<double>(subs.size()) + (id >= 0 ? 1.0 : 0.0);
  if (id >= 0) {
    std::span<const float> row = table.word_vectors.row(id);
    for (size_t x = 0; x < d; ++x) v[x] += row[x];
  }
  for (uint32_t s : subs) {
    std::span<const float> row = table.subword_vectors.row(s);
    for (size_t x = 0; x < d; ++x) v[x] += row[x];
  }
  if (n_const > 0.0)
    for (float& x : v) x = static_cast<float>(x / n_const);
  return v;
}

}  // namespace

std::vector<float> word_vector(std::string_view word, const EmbeddingTable& table,
                               const Vocabulary& vocab) {
  check_alignment(table, vocab);
  return compose_by_id(table, vocab.find(word), word);
}

void save_table(const std::string& path, const EmbeddingTable& table) {
  ParamSet<float> ps;
  ps.add("word_vectors", table.word_vectors.rows(), table.word_vectors.cols());
  ps.at("word_vectors") = table.word_vectors;
  if (table.mode == EmbeddingMode::kSkipgramSubword) {
    ps.add("subword_vectors", table.subword_vectors.rows(),
           table.subword_vectors.cols());
    ps.at("subword_vectors") = table.subword_vectors;
  }
  char checksum_hex[17];
  std::snprintf(checksum_hex, sizeof checksum_hex, "%016llx",
                static_cast<unsigned long long>(table.vocab_checksum));
  nlohmann::json meta = {{"kind", "embedding_table"},
                         {"mode", mode_name(table.mode)},
                         {"dim", table.dim},
                         {"vocab_checksum", checksum_hex},
                         {"bucket_count", table.hasher.bucket_count},
                         {"n_min", table.hasher.n_min},
                         {"n_max", table.hasher.n_max}};
  save_checkpoint(path, ps, meta);
}

EmbeddingTable load_table(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "embedding_table")
    raise("CorruptTable", path + ": not an embedding table");
  EmbeddingTable t;
  t.mode = parse_mode(ck.meta.at("mode").get<std::string>());
  t.dim = ck.meta.at("dim").get<int32_t>();
  t.vocab_checksum = std::stoull(ck.meta.at("vocab_checksum").get<std::string>(),
                                 nullptr, 16);
  t.hasher.bucket_count = ck.meta.value("bucket_count", t.hasher.bucket_count);
  t.hasher.n_min = ck.meta.value("n_min", t.hasher.n_min);
  t.hasher.n_max = ck.meta.value("n_max", t.hasher.n_max);
  t.word_vectors = ck.params.at("word_vectors");
  if (t.mode == EmbeddingMode::kSkipgramSubword)
    t.subword_vectors = ck.params.at("subword_vectors");
  if (t.word_vectors.cols() != static_cast<size_t>(t.dim))
    raise("CorruptTable", path + ": dim does not match tensor shape");
  return t;
}

void export_table_text(const std::string& path, const EmbeddingTable& table,
                       const Vocabulary& vocab) {
  check_alignment(table, vocab);
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise("IoError", "cannot write " + path);
  f.precision(8);
  f << vocab.size() << " " << table.dim << "\n";
  for (size_t i = 0; i < static_cast<size_t>(vocab.size()); ++i) {
    std::string_view tok = vocab.token(static_cast<int32_t>(i));
    std::vector<float> v = compose_by_id(table, static_cast<int32_t>(i), tok);
    f << tok;
    for (float x : v) f << " " << x;
    f << "\n";
  }
  if (!f) raise("IoError", "short write to " + path);
}

std::vector<Neighbor> nearest_neighbors(std::string_view word, size_t k,
                                        const EmbeddingTable& table,
                                        const Vocabulary& vocab) {
  std::vector<float> q = word_vector(word, table, vocab);
  double qn = 0.0;
  for (float x : q) qn += static_cast<double>(x) * x;
  qn = std::sqrt(qn);

  std::vector<Neighbor> all;
  all.reserve(vocab.size());
  for (size_t i = 0; i < static_cast<size_t>(vocab.size()); ++i) {
    std::string_view tok = vocab.token(static_cast<int32_t>(i));
    if (tok == word) continue;
    std::vector<float> v = compose_by_id(table, static_cast<int32_t>(i), tok);
    double vn = 0.0, dp = 0.0;
    for (size_t x = 0; x < v.size(); ++x) {
      vn += static_cast<double>(v[x]) * v[x];
      dp += static_cast<double>(q[x]) * v[x];
    }
    vn = std::sqrt(vn);
    double cos = (qn > 0.0 && vn > 0.0) ? dp / (qn * vn) : 0.0;
    all.push_back({static_cast<int32_t>(i), std::string(tok), cos});
  }
  std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
    if (a.cosine != b.cosine) return a.cosine > b.cosine;
    return a.id < b.id;
  });
  if (k < all.size()) all.resize(k);
  return all;
}

}  // namespace helprank
