#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "json.hpp"

#include "helprank/embeddings.hpp"
#include "helprank/numerics.hpp"
#include "helprank/text.hpp"

namespace helprank {

enum class ModelKind { kRcnn, kCnn, kLinear, kSvm };

const char* model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view name);

// Composed vectors for out-of-vocabulary words, materialized once per
// distinct word and addressed by ids `vocab.size() + k`. The rows are
// constant at classification time; only in-vocabulary embedding rows train.
class OovBank {
 public:
  OovBank(const EmbeddingTable& table, const Vocabulary& vocab);

  int32_t id_for(std::string_view word);  // composes on first sight, then cached
  int32_t base() const { return base_; }
  const std::vector<std::vector<float>>& rows() const { return rows_; }

 private:
  const EmbeddingTable* table_;
  int32_t base_;
  std::vector<std::vector<float>> rows_;
  std::unordered_map<std::string, int32_t> index_;
};

// Like encode(), but unseen words get bank-extended ids instead of UNK.
EncodedSequence encode_with_oov(const std::vector<std::string>& tokens,
                                const Vocabulary& vocab, OovBank& bank,
                                int32_t max_len = 500);

// Bidirectional-context recurrent model over a token sequence:
//   left(i)  = tanh(Wl * left(i-1) + Wsl * e(i-1)),  left(0)  learned
//   right(i) = tanh(Wr * right(i+1) + Wsr * e(i+1)), right(n-1) learned
//   x(i) = [left(i); e(i); right(i)],  y(i) = tanh(W2 x(i) + b2)
//   logits = W4 * elementwise_max_i y(i) + b4
template <typename T>
class Rcnn {
 public:
  // Fresh model; `embedding_init` becomes the trainable look-up table.
  Rcnn(const Mat<T>& embedding_init, int32_t context_size, int32_t hidden_size,
       uint64_t seed);
  explicit Rcnn(ParamSet<T> params);  // from checkpoint; shapes are re-derived

  struct Trace {
    Mat<T> cl, cr;              // length x c
    Mat<T> y;                   // length x h
    std::vector<T> pooled;      // h
    std::vector<int32_t> argmax;  // h, row index per pooled coordinate
    std::vector<int32_t> ids;   // the token ids the forward pass consumed
  };

  Vec<T> forward(const EncodedSequence& seq, Trace* trace = nullptr) const;
  // Accumulates gradients for every parameter into `grads` (same names and
  // shapes as params()); pool gradient flows only to argmax rows.
  void backward(const EncodedSequence& seq, const Trace& trace,
                std::span<const T> dlogits, ParamSet<T>& grads) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  void set_extra_rows(const std::vector<std::vector<T>>* rows) { extra_ = rows; }

  int32_t embed_dim() const { return d_; }
  int32_t context_size() const { return c_; }
  int32_t hidden_size() const { return h_; }

 private:
  std::span<const T> embedding_row(int32_t id) const;

  ParamSet<T> params_;
  const std::vector<std::vector<T>>* extra_ = nullptr;
  int32_t d_ = 0, c_ = 0, h_ = 0;
};

// Kim-style convolutional classifier: for each filter width, ReLU over
// embedded windows, max-over-time per map, concatenated maxima to the
// output affine. Sequences shorter than the widest filter are PAD-extended.
template <typename T>
class TextCnn {
 public:
  TextCnn(const Mat<T>& embedding_init, std::vector<int32_t> widths,
          int32_t maps_per_width, uint64_t seed);
  explicit TextCnn(ParamSet<T> params);

  struct Trace {
    std::vector<std::vector<int32_t>> argmax;  // per width, per map: window start
    std::vector<T> pooled;                     // widths * maps
    std::vector<int32_t> ids;                  // PAD-extended ids consumed
  };

  // A dropout mask (1 = dropped, size widths*maps) applies inverted dropout
  // to the pooled features; pass the same mask to backward.
  Vec<T> forward(const EncodedSequence& seq, Trace* trace = nullptr,
                 const std::vector<uint8_t>* dropout_mask = nullptr,
                 T dropout_scale = T(1)) const;
  void backward(const EncodedSequence& seq, const Trace& trace,
                std::span<const T> dlogits, ParamSet<T>& grads,
                const std::vector<uint8_t>* dropout_mask = nullptr,
                T dropout_scale = T(1)) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  void set_extra_rows(const std::vector<std::vector<T>>* rows) { extra_ = rows; }

  const std::vector<int32_t>& widths() const { return widths_; }
  int32_t maps_per_width() const { return maps_; }
  int32_t embed_dim() const { return d_; }

 private:
  std::span<const T> embedding_row(int32_t id) const;

  ParamSet<T> params_;
  const std::vector<std::vector<T>>* extra_ = nullptr;
  std::vector<int32_t> widths_;
  int32_t maps_ = 0, d_ = 0;
};

// Bag of words + hashed word-bigrams, mean-pooled, one affine layer.
// Feature ids: [0, vocab_rows) words, [vocab_rows, vocab_rows + buckets)
// bigrams.
template <typename T>
class LinearNgram {
 public:
  LinearNgram(size_t vocab_rows, int32_t dim, uint32_t bigram_buckets,
              uint64_t seed);
  // From a checkpoint; the row split between words and bigram buckets is
  // not derivable from shapes alone.
  LinearNgram(ParamSet<T> params, size_t vocab_rows, uint32_t bigram_buckets);

  // Word ids -> feature ids (words then hashed bigrams). Empty input maps
  // to the UNK singleton.
  std::vector<int32_t> features(std::span<const int32_t> ids) const;

  Vec<T> forward(std::span<const int32_t> feature_ids) const;
  void backward(std::span<const int32_t> feature_ids, std::span<const T> dlogits,
                ParamSet<T>& grads) const;

  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  size_t vocab_rows() const { return vocab_rows_; }
  uint32_t bigram_buckets() const { return buckets_; }
  int32_t dim() const { return d_; }

 private:
  ParamSet<T> params_;
  size_t vocab_rows_ = 0;
  uint32_t buckets_ = 0;
  int32_t d_ = 0;
};

// Linear SVM over sparse TF-IDF vectors, trained with the 1/(lambda t)
// decaying-step SGD on the regularized hinge objective. Internally double,
// snapshotted to float32 so a checkpoint round trip is bit-exact.
struct SvmModel {
  std::vector<float> w;
  float b = 0.0f;
  double lambda = 1e-4;

  double margin(const SparseVec& x) const;  // w.x + b
};

// labels: +1 (helpful) / -1 (unhelpful). `dim` is the TF-IDF feature-space
// size (the vocabulary size). Raises DegenerateLabels when only one class is
// present.
SvmModel svm_train(const std::vector<SparseVec>& xs, const std::vector<int>& labels,
                   size_t dim, double lambda, int epochs, uint64_t seed);

// lambda/2 ||w||^2 + mean hinge. Used to verify training made progress.
double svm_objective(const SvmModel& m, const std::vector<SparseVec>& xs,
                     const std::vector<int>& labels);

// Uniform in +/- sqrt(6 / (fan_in + fan_out)).
template <typename T>
void glorot_init(Mat<T>& m, size_t fan_in, size_t fan_out, Rng& rng);

struct Prediction {
  int label = 0;            // 0 helpful, 1 unhelpful; ties resolve to 0
  double confidence = 0.0;  // softmax probability, or |margin| for the SVM
  std::vector<double> probs;  // empty for the SVM
  double margin = 0.0;        // SVM only
  std::string note;           // e.g. flags the empty-input UNK path
};

Prediction predict_from_logits(std::span<const float> logits);

// A trained model of any kind plus what inference needs to know about how
// its inputs were produced.
struct ModelBundle {
  ModelKind kind = ModelKind::kRcnn;
  std::variant<std::monostate, Rcnn<float>, TextCnn<float>, LinearNgram<float>,
               SvmModel>
      model;
  uint64_t vocab_checksum = 0;
  EmbeddingMode embedding_mode = EmbeddingMode::kRandomUniform;
  int32_t max_len = 500;
  nlohmann::json extra;  // task/category/config fingerprint, free-form

  Rcnn<float>& rcnn() { return std::get<Rcnn<float>>(model); }
  TextCnn<float>& cnn() { return std::get<TextCnn<float>>(model); }
  LinearNgram<float>& linear() { return std::get<LinearNgram<float>>(model); }
  SvmModel& svm() { return std::get<SvmModel>(model); }
  const Rcnn<float>& rcnn() const { return std::get<Rcnn<float>>(model); }
  const TextCnn<float>& cnn() const { return std::get<TextCnn<float>>(model); }
  const LinearNgram<float>& linear() const { return std::get<LinearNgram<float>>(model); }
  const SvmModel& svm() const { return std::get<SvmModel>(model); }
};

void save_model(const std::string& path, const ModelBundle& bundle);
ModelBundle load_model(const std::string& path);

// Everything inference needs besides the model itself. `embeddings` is
// required for subword-mode bundles (composes vectors for unseen words);
// `idf` is required for the SVM.
struct PredictContext {
  const Vocabulary* vocab = nullptr;
  const EmbeddingTable* embeddings = nullptr;
  const IdfTable* idf = nullptr;
};

// Tokenize, encode, forward, argmax. Raises AlignmentError when the bundle
// and the context artifacts disagree. Non-const because subword-mode models
// attach a per-call bank of composed vectors for unseen words.
Prediction predict_text(ModelBundle& bundle, const std::string& text,
                        const PredictContext& ctx,
                        const TokenizerConfig& tok = {});

}  // namespace helprank
