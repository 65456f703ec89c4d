#include "helprank/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "helprank/checkpoint.hpp"
#include "helprank/error.hpp"

namespace helprank {

const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kRcnn: return "rcnn";
    case ModelKind::kCnn: return "cnn";
    case ModelKind::kLinear: return "linear";
    case ModelKind::kSvm: return "svm";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "rcnn") return ModelKind::kRcnn;
  if (name == "cnn") return ModelKind::kCnn;
  if (name == "linear") return ModelKind::kLinear;
  if (name == "svm") return ModelKind::kSvm;
  raise("ParseError", "unknown model kind " + std::string(name));
}

// ---------------------------------------------------------------- OovBank

OovBank::OovBank(const EmbeddingTable& table, const Vocabulary& vocab)
    : table_(&table), base_(vocab.size()) {
  if (table.mode != EmbeddingMode::kSkipgramSubword)
    raise("AlignmentError", "composing unseen words needs a subword-mode table");
  check_alignment(table, vocab);
}

int32_t OovBank::id_for(std::string_view word) {
  auto it = index_.find(std::string(word));
  if (it != index_.end()) return it->second;
  const size_t d = static_cast<size_t>(table_->dim);
  std::vector<float> v(d, 0.0f);
  std::vector<uint32_t> subs = table_->hasher.ngram_ids(word);
  for (uint32_t s : subs) {
    std::span<const float> row = table_->subword_vectors.row(s);
    for (size_t x = 0; x < d; ++x) v[x] += row[x];
  }
  if (!subs.empty())
    for (float& x : v) x /= static_cast<float>(subs.size());
  int32_t id = base_ + static_cast<int32_t>(rows_.size());
  rows_.push_back(std::move(v));
  index_.emplace(std::string(word), id);
  return id;
}

EncodedSequence encode_with_oov(const std::vector<std::string>& tokens,
                                const Vocabulary& vocab, OovBank& bank,
                                int32_t max_len) {
  EncodedSequence seq;
  size_t n = std::min(tokens.size(), static_cast<size_t>(max_len));
  seq.ids.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    int32_t id = vocab.find(tokens[i]);
    seq.ids.push_back(id >= 0 ? id : bank.id_for(tokens[i]));
  }
  seq.length = static_cast<int32_t>(n);
  return seq;
}

// ------------------------------------------------------------------ init

template <typename T>
void glorot_init(Mat<T>& m, size_t fan_in, size_t fan_out, Rng& rng) {
  double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (size_t i = 0; i < m.size(); ++i)
    m[i] = static_cast<T>(rng.uniform(-r, r));
}

template void glorot_init<float>(Mat<float>&, size_t, size_t, Rng&);
template void glorot_init<double>(Mat<double>&, size_t, size_t, Rng&);

namespace {

template <typename T>
std::span<const T> col_span(const Mat<T>& m) {
  return {m.data(), m.size()};
}
template <typename T>
std::span<T> col_span(Mat<T>& m) {
  return {m.data(), m.size()};
}

template <typename T>
std::span<const T> row_of(const std::vector<std::vector<T>>* extra,
                          const Mat<T>& embedding, int32_t id) {
  if (id < 0) raise("IndexError", "negative token id");
  size_t rows = embedding.rows();
  if (static_cast<size_t>(id) < rows) return embedding.row(id);
  size_t k = static_cast<size_t>(id) - rows;
  if (!extra || k >= extra->size())
    raise("IndexError", "token id " + std::to_string(id) +
                            " beyond the embedding table");
  return {(*extra)[k].data(), (*extra)[k].size()};
}

}  // namespace

// ------------------------------------------------------------------ Rcnn

template <typename T>
Rcnn<T>::Rcnn(const Mat<T>& embedding_init, int32_t context_size,
              int32_t hidden_size, uint64_t seed)
    : d_(static_cast<int32_t>(embedding_init.cols())),
      c_(context_size),
      h_(hidden_size) {
  if (embedding_init.rows() == 0 || d_ <= 0 || c_ <= 0 || h_ <= 0)
    raise("ShapeError", "bad recurrent model dimensions");
  Rng rng(derive_seed(seed, "rcnn/init"));
  params_.add("embedding", embedding_init.rows(), d_) = embedding_init;
  glorot_init(params_.add("ctx_left_w", c_, c_), c_, c_, rng);
  glorot_init(params_.add("ctx_left_embed_w", c_, d_), d_, c_, rng);
  glorot_init(params_.add("ctx_right_w", c_, c_), c_, c_, rng);
  glorot_init(params_.add("ctx_right_embed_w", c_, d_), d_, c_, rng);
  Mat<T>& lb = params_.add("left_boundary", c_, 1);
  Mat<T>& rb = params_.add("right_boundary", c_, 1);
  for (size_t i = 0; i < lb.size(); ++i) lb[i] = static_cast<T>(rng.uniform(-0.05, 0.05));
  for (size_t i = 0; i < rb.size(); ++i) rb[i] = static_cast<T>(rng.uniform(-0.05, 0.05));
  glorot_init(params_.add("proj_w", h_, 2 * c_ + d_), 2 * c_ + d_, h_, rng);
  params_.add("proj_b", h_, 1);
  glorot_init(params_.add("out_w", 2, h_), h_, 2, rng);
  params_.add("out_b", 2, 1);
}

template <typename T>
Rcnn<T>::Rcnn(ParamSet<T> params) : params_(std::move(params)) {
  d_ = static_cast<int32_t>(params_.at("embedding").cols());
  c_ = static_cast<int32_t>(params_.at("ctx_left_w").rows());
  h_ = static_cast<int32_t>(params_.at("proj_w").rows());
  check_shape(params_.at("proj_w").cols() == static_cast<size_t>(2 * c_ + d_) &&
                  params_.at("out_w").rows() == 2 &&
                  params_.at("out_w").cols() == static_cast<size_t>(h_) &&
                  params_.at("ctx_left_embed_w").cols() == static_cast<size_t>(d_),
              "inconsistent recurrent model checkpoint shapes");
}

template <typename T>
std::span<const T> Rcnn<T>::embedding_row(int32_t id) const {
  return row_of(extra_, params_.at("embedding"), id);
}

template <typename T>
Vec<T> Rcnn<T>::forward(const EncodedSequence& seq, Trace* trace) const {
  const int32_t n = seq.length;
  if (n <= 0) raise("EmptySequence", "cannot classify an empty sequence");
  check_shape(seq.ids.size() == static_cast<size_t>(n), "sequence ids/length mismatch");

  const Mat<T>& E = params_.at("embedding");
  const Mat<T>& Wl = params_.at("ctx_left_w");
  const Mat<T>& Wsl = params_.at("ctx_left_embed_w");
  const Mat<T>& Wr = params_.at("ctx_right_w");
  const Mat<T>& Wsr = params_.at("ctx_right_embed_w");
  const Mat<T>& lb = params_.at("left_boundary");
  const Mat<T>& rb = params_.at("right_boundary");
  const Mat<T>& W2 = params_.at("proj_w");
  const Mat<T>& b2 = params_.at("proj_b");
  const Mat<T>& W4 = params_.at("out_w");
  const Mat<T>& b4 = params_.at("out_b");

  auto erow = [&](int32_t i) { return row_of(extra_, E, seq.ids[i]); };

  Mat<T> cl(n, c_), cr(n, c_), y(n, h_);
  for (int32_t r = 0; r < c_; ++r) cl(0, r) = lb[r];
  for (int32_t i = 1; i < n; ++i) {
    std::span<const T> prev = cl.row(i - 1);
    std::span<const T> e = erow(i - 1);
    for (int32_t r = 0; r < c_; ++r) {
      T a = dot(Wl.row(r), prev) + dot(Wsl.row(r), e);
      cl(i, r) = std::tanh(a);
    }
  }
  for (int32_t r = 0; r < c_; ++r) cr(n - 1, r) = rb[r];
  for (int32_t i = n - 2; i >= 0; --i) {
    std::span<const T> next = cr.row(i + 1);
    std::span<const T> e = erow(i + 1);
    for (int32_t r = 0; r < c_; ++r) {
      T a = dot(Wr.row(r), next) + dot(Wsr.row(r), e);
      cr(i, r) = std::tanh(a);
    }
  }

  std::vector<T> x(2 * c_ + d_);
  for (int32_t i = 0; i < n; ++i) {
    std::span<const T> e = erow(i);
    std::copy(cl.row(i).begin(), cl.row(i).end(), x.begin());
    std::copy(e.begin(), e.end(), x.begin() + c_);
    std::copy(cr.row(i).begin(), cr.row(i).end(), x.begin() + c_ + d_);
    std::span<T> yi = y.row(i);
    affine(W2, std::span<const T>(x), col_span(b2), yi);
    for (T& v : yi) v = std::tanh(v);
  }

  std::vector<T> pooled(h_);
  std::vector<int32_t> argmax(h_);
  ewise_max_pool(y, static_cast<size_t>(n), std::span<T>(pooled),
                 std::span<int32_t>(argmax));

  Vec<T> logits(2);
  affine(W4, std::span<const T>(pooled), col_span(b4), std::span<T>(logits));

  if (trace) {
    trace->cl = std::move(cl);
    trace->cr = std::move(cr);
    trace->y = std::move(y);
    trace->pooled = std::move(pooled);
    trace->argmax = std::move(argmax);
    trace->ids.assign(seq.ids.begin(), seq.ids.begin() + n);
  }
  return logits;
}

template <typename T>
void Rcnn<T>::backward(const EncodedSequence& seq, const Trace& trace,
                       std::span<const T> dlogits, ParamSet<T>& g) const {
  const int32_t n = seq.length;
  if (n <= 0) raise("EmptySequence", "cannot backprop an empty sequence");
  if (trace.cl.rows() != static_cast<size_t>(n) ||
      trace.cr.rows() != static_cast<size_t>(n) ||
      trace.y.rows() != static_cast<size_t>(n) ||
      trace.pooled.size() != static_cast<size_t>(h_) ||
      trace.argmax.size() != static_cast<size_t>(h_) ||
      trace.ids.size() != static_cast<size_t>(n) ||
      !std::equal(trace.ids.begin(), trace.ids.end(), seq.ids.begin()))
    raise("TraceError", "trace does not match the sequence it is applied to");
  check_shape(dlogits.size() == 2, "dlogits must have 2 entries");

  const Mat<T>& E = params_.at("embedding");
  const Mat<T>& Wl = params_.at("ctx_left_w");
  const Mat<T>& Wsl = params_.at("ctx_left_embed_w");
  const Mat<T>& Wr = params_.at("ctx_right_w");
  const Mat<T>& Wsr = params_.at("ctx_right_embed_w");
  const Mat<T>& W2 = params_.at("proj_w");
  const Mat<T>& W4 = params_.at("out_w");

  Mat<T>& dE = g.at("embedding");
  auto erow = [&](int32_t i) { return row_of(extra_, E, seq.ids[i]); };

  // Output affine.
  outer_add(dlogits, std::span<const T>(trace.pooled), g.at("out_w"));
  {
    std::span<T> db4 = col_span(g.at("out_b"));
    for (size_t k = 0; k < 2; ++k) db4[k] += dlogits[k];
  }
  std::vector<T> dpooled(h_, T(0));
  matvec_transposed_add(W4, dlogits, std::span<T>(dpooled));

  // Route pool gradient to argmax rows.
  Mat<T> dy(n, h_);
  std::vector<char> touched(n, 0);
  for (int32_t k = 0; k < h_; ++k) {
    dy(trace.argmax[k], k) += dpooled[k];
    touched[trace.argmax[k]] = 1;
  }

  Mat<T> dcl(n, c_), dcr(n, c_), de(n, d_);
  std::vector<T> x(2 * c_ + d_), dpre(h_), dx(2 * c_ + d_);
  for (int32_t i = 0; i < n; ++i) {
    if (!touched[i]) continue;
    std::span<const T> yi = trace.y.row(i);
    for (int32_t k = 0; k < h_; ++k)
      dpre[k] = dy(i, k) * (T(1) - yi[k] * yi[k]);
    std::span<const T> e = erow(i);
    std::copy(trace.cl.row(i).begin(), trace.cl.row(i).end(), x.begin());
    std::copy(e.begin(), e.end(), x.begin() + c_);
    std::copy(trace.cr.row(i).begin(), trace.cr.row(i).end(), x.begin() + c_ + d_);
    outer_add(std::span<const T>(dpre), std::span<const T>(x), g.at("proj_w"));
    {
      std::span<T> db2 = col_span(g.at("proj_b"));
      for (int32_t k = 0; k < h_; ++k) db2[k] += dpre[k];
    }
    std::fill(dx.begin(), dx.end(), T(0));
    matvec_transposed_add(W2, std::span<const T>(dpre), std::span<T>(dx));
    for (int32_t k = 0; k < c_; ++k) dcl(i, k) += dx[k];
    for (int32_t k = 0; k < d_; ++k) de(i, k) += dx[c_ + k];
    for (int32_t k = 0; k < c_; ++k) dcr(i, k) += dx[c_ + d_ + k];
  }

  // Left recurrence, gradient flows toward the sequence start.
  std::vector<T> da(c_);
  for (int32_t i = n - 1; i >= 1; --i) {
    std::span<const T> cli = trace.cl.row(i);
    bool any = false;
    for (int32_t k = 0; k < c_; ++k) {
      da[k] = dcl(i, k) * (T(1) - cli[k] * cli[k]);
      any = any || da[k] != T(0);
    }
    if (!any) continue;
    outer_add(std::span<const T>(da), trace.cl.row(i - 1), g.at("ctx_left_w"));
    outer_add(std::span<const T>(da), erow(i - 1), g.at("ctx_left_embed_w"));
    matvec_transposed_add(Wl, std::span<const T>(da), dcl.row(i - 1));
    matvec_transposed_add(Wsl, std::span<const T>(da), de.row(i - 1));
  }
  {
    std::span<T> dlb = col_span(g.at("left_boundary"));
    for (int32_t k = 0; k < c_; ++k) dlb[k] += dcl(0, k);
  }

  // Right recurrence, gradient flows toward the sequence end.
  for (int32_t i = 0; i <= n - 2; ++i) {
    std::span<const T> cri = trace.cr.row(i);
    bool any = false;
    for (int32_t k = 0; k < c_; ++k) {
      da[k] = dcr(i, k) * (T(1) - cri[k] * cri[k]);
      any = any || da[k] != T(0);
    }
    if (!any) continue;
    outer_add(std::span<const T>(da), trace.cr.row(i + 1), g.at("ctx_right_w"));
    outer_add(std::span<const T>(da), erow(i + 1), g.at("ctx_right_embed_w"));
    matvec_transposed_add(Wr, std::span<const T>(da), dcr.row(i + 1));
    matvec_transposed_add(Wsr, std::span<const T>(da), de.row(i + 1));
  }
  {
    std::span<T> drb = col_span(g.at("right_boundary"));
    for (int32_t k = 0; k < c_; ++k) drb[k] += dcr(n - 1, k);
  }

  // Embedding rows; ids beyond the table (composed vectors) are constants.
  for (int32_t i = 0; i < n; ++i) {
    int32_t id = seq.ids[i];
    if (static_cast<size_t>(id) >= dE.rows()) continue;
    std::span<T> drow = dE.row(id);
    for (int32_t k = 0; k < d_; ++k) drow[k] += de(i, k);
  }
}

template class Rcnn<float>;
template class Rcnn<double>;

// --------------------------------------------------------------- TextCnn

namespace {

std::string conv_w_name(int32_t width) { return "conv" + std::to_string(width) + "_w"; }
std::string conv_b_name(int32_t width) { return "conv" + std::to_string(width) + "_b"; }

}  // namespace

template <typename T>
TextCnn<T>::TextCnn(const Mat<T>& embedding_init, std::vector<int32_t> widths,
                    int32_t maps_per_width, uint64_t seed)
    : widths_(std::move(widths)),
      maps_(maps_per_width),
      d_(static_cast<int32_t>(embedding_init.cols())) {
  if (widths_.empty() || maps_ <= 0 || d_ <= 0)
    raise("ConfigError", "bad convolutional model configuration");
  for (size_t i = 0; i < widths_.size(); ++i)
    for (size_t j = i + 1; j < widths_.size(); ++j)
      if (widths_[i] == widths_[j])
        raise("ConfigError", "filter widths must be distinct");
  Rng rng(derive_seed(seed, "cnn/init"));
  params_.add("embedding", embedding_init.rows(), d_) = embedding_init;
  for (int32_t w : widths_) {
    glorot_init(params_.add(conv_w_name(w), maps_, w * d_), w * d_, maps_, rng);
    params_.add(conv_b_name(w), maps_, 1);
  }
  size_t pooled = widths_.size() * static_cast<size_t>(maps_);
  glorot_init(params_.add("out_w", 2, pooled), pooled, 2, rng);
  params_.add("out_b", 2, 1);
}

template <typename T>
TextCnn<T>::TextCnn(ParamSet<T> params) : params_(std::move(params)) {
  d_ = static_cast<int32_t>(params_.at("embedding").cols());
  for (int32_t w = 1; w <= 64; ++w)
    if (params_.has(conv_w_name(w))) widths_.push_back(w);
  if (widths_.empty()) raise("ShapeError", "checkpoint has no filter banks");
  maps_ = static_cast<int32_t>(params_.at(conv_w_name(widths_[0])).rows());
  check_shape(params_.at("out_w").cols() == widths_.size() * static_cast<size_t>(maps_),
              "inconsistent convolutional checkpoint shapes");
}

template <typename T>
std::span<const T> TextCnn<T>::embedding_row(int32_t id) const {
  return row_of(extra_, params_.at("embedding"), id);
}

template <typename T>
Vec<T> TextCnn<T>::forward(const EncodedSequence& seq, Trace* trace,
                           const std::vector<uint8_t>* dropout_mask,
                           T dropout_scale) const {
  const int32_t n = seq.length;
  if (n <= 0) raise("EmptySequence", "cannot classify an empty sequence");
  check_shape(seq.ids.size() == static_cast<size_t>(n), "sequence ids/length mismatch");

  const Mat<T>& E = params_.at("embedding");
  int32_t max_w = *std::max_element(widths_.begin(), widths_.end());
  int32_t n_eff = std::max(n, max_w);
  std::vector<int32_t> ids(seq.ids.begin(), seq.ids.begin() + n);
  ids.resize(n_eff, Vocabulary::kPad);

  std::vector<T> pooled(widths_.size() * maps_);
  std::vector<std::vector<int32_t>> argmax(widths_.size(),
                                           std::vector<int32_t>(maps_, 0));
  for (size_t wi = 0; wi < widths_.size(); ++wi) {
    int32_t w = widths_[wi];
    const Mat<T>& Wc = params_.at(conv_w_name(w));
    const Mat<T>& bc = params_.at(conv_b_name(w));
    for (int32_t m = 0; m < maps_; ++m) {
      const T* wrow = Wc.data() + static_cast<size_t>(m) * Wc.cols();
      T best = T(0);
      int32_t best_at = 0;
      bool first = true;
      for (int32_t start = 0; start + w <= n_eff; ++start) {
        T pre = bc[m];
        for (int32_t j = 0; j < w; ++j) {
          std::span<const T> e = row_of(extra_, E, ids[start + j]);
          const T* wj = wrow + static_cast<size_t>(j) * d_;
          for (int32_t k = 0; k < d_; ++k) pre += wj[k] * e[k];
        }
        T act = pre > T(0) ? pre : T(0);
        if (first || act > best) {
          best = act;
          best_at = start;
          first = false;
        }
      }
      pooled[wi * maps_ + m] = best;
      argmax[wi][m] = best_at;
    }
  }

  std::vector<T> fed = pooled;
  if (dropout_mask) {
    check_shape(dropout_mask->size() == fed.size(), "dropout mask size");
    for (size_t k = 0; k < fed.size(); ++k)
      fed[k] = (*dropout_mask)[k] ? T(0) : fed[k] * dropout_scale;
  }
  Vec<T> logits(2);
  affine(params_.at("out_w"), std::span<const T>(fed),
         col_span(params_.at("out_b")), std::span<T>(logits));

  if (trace) {
    trace->argmax = std::move(argmax);
    trace->pooled = std::move(pooled);  // pre-dropout values
    trace->ids = std::move(ids);
  }
  return logits;
}

template <typename T>
void TextCnn<T>::backward(const EncodedSequence& seq, const Trace& trace,
                          std::span<const T> dlogits, ParamSet<T>& g,
                          const std::vector<uint8_t>* dropout_mask,
                          T dropout_scale) const {
  const int32_t n = seq.length;
  if (n <= 0) raise("EmptySequence", "cannot backprop an empty sequence");
  int32_t max_w = *std::max_element(widths_.begin(), widths_.end());
  int32_t n_eff = std::max(n, max_w);
  if (trace.ids.size() != static_cast<size_t>(n_eff) ||
      trace.argmax.size() != widths_.size() ||
      trace.pooled.size() != widths_.size() * static_cast<size_t>(maps_) ||
      !std::equal(seq.ids.begin(), seq.ids.begin() + n, trace.ids.begin()))
    raise("TraceError", "trace does not match the sequence it is applied to");
  check_shape(dlogits.size() == 2, "dlogits must have 2 entries");

  const Mat<T>& E = params_.at("embedding");
  Mat<T>& dE = g.at("embedding");

  std::vector<T> fed = trace.pooled;
  if (dropout_mask) {
    check_shape(dropout_mask->size() == fed.size(), "dropout mask size");
    for (size_t k = 0; k < fed.size(); ++k)
      fed[k] = (*dropout_mask)[k] ? T(0) : fed[k] * dropout_scale;
  }
  outer_add(dlogits, std::span<const T>(fed), g.at("out_w"));
  {
    std::span<T> db = col_span(g.at("out_b"));
    for (size_t k = 0; k < 2; ++k) db[k] += dlogits[k];
  }
  std::vector<T> dpooled(trace.pooled.size(), T(0));
  matvec_transposed_add(params_.at("out_w"), dlogits, std::span<T>(dpooled));
  if (dropout_mask) {
    for (size_t k = 0; k < dpooled.size(); ++k)
      dpooled[k] = (*dropout_mask)[k] ? T(0) : dpooled[k] * dropout_scale;
  }

  for (size_t wi = 0; wi < widths_.size(); ++wi) {
    int32_t w = widths_[wi];
    const Mat<T>& Wc = params_.at(conv_w_name(w));
    Mat<T>& dWc = g.at(conv_w_name(w));
    Mat<T>& dbc = g.at(conv_b_name(w));
    for (int32_t m = 0; m < maps_; ++m) {
      T dp = dpooled[wi * maps_ + m];
      // ReLU: no gradient when the best activation is clamped at zero.
      if (dp == T(0) || trace.pooled[wi * maps_ + m] <= T(0)) continue;
      int32_t start = trace.argmax[wi][m];
      dbc[m] += dp;
      const T* wrow = Wc.data() + static_cast<size_t>(m) * Wc.cols();
      T* dwrow = dWc.data() + static_cast<size_t>(m) * dWc.cols();
      for (int32_t j = 0; j < w; ++j) {
        int32_t id = trace.ids[start + j];
        std::span<const T> e = row_of(extra_, E, id);
        T* dwj = dwrow + static_cast<size_t>(j) * d_;
        for (int32_t k = 0; k < d_; ++k) dwj[k] += dp * e[k];
        if (static_cast<size_t>(id) < dE.rows()) {
          std::span<T> drow = dE.row(id);
          const T* wj = wrow + static_cast<size_t>(j) * d_;
          for (int32_t k = 0; k < d_; ++k) drow[k] += dp * wj[k];
        }
      }
    }
  }
}

template class TextCnn<float>;
template class TextCnn<double>;

// ------------------------------------------------------------ LinearNgram

template <typename T>
LinearNgram<T>::LinearNgram(size_t vocab_rows, int32_t dim,
                            uint32_t bigram_buckets, uint64_t seed)
    : vocab_rows_(vocab_rows), buckets_(bigram_buckets), d_(dim) {
  if (vocab_rows == 0 || dim <= 0) raise("ShapeError", "bad linear model dimensions");
  Rng rng(derive_seed(seed, "linear/init"));
  Mat<T>& E = params_.add("embedding", vocab_rows + buckets_, d_);
  double r = 0.5 / static_cast<double>(d_);
  for (size_t i = 0; i < E.size(); ++i) E[i] = static_cast<T>(rng.uniform(-r, r));
  glorot_init(params_.add("out_w", 2, d_), d_, 2, rng);
  params_.add("out_b", 2, 1);
}

template <typename T>
LinearNgram<T>::LinearNgram(ParamSet<T> params, size_t vocab_rows,
                            uint32_t bigram_buckets)
    : params_(std::move(params)), vocab_rows_(vocab_rows), buckets_(bigram_buckets) {
  d_ = static_cast<int32_t>(params_.at("embedding").cols());
  check_shape(params_.at("embedding").rows() == vocab_rows_ + buckets_,
              "linear checkpoint rows do not match vocab_rows + buckets");
}

template <typename T>
std::vector<int32_t> LinearNgram<T>::features(std::span<const int32_t> ids) const {
  std::vector<int32_t> out;
  if (ids.empty()) return {Vocabulary::kUnk};
  out.reserve(ids.size() * 2);
  auto clamp = [&](int32_t id) {
    return static_cast<size_t>(id) < vocab_rows_ ? id : Vocabulary::kUnk;
  };
  for (int32_t id : ids) out.push_back(clamp(id));
  if (buckets_ > 0) {
    for (size_t i = 0; i + 1 < ids.size(); ++i) {
      unsigned char key[8];
      uint32_t a = static_cast<uint32_t>(clamp(ids[i]));
      uint32_t b = static_cast<uint32_t>(clamp(ids[i + 1]));
      for (int k = 0; k < 4; ++k) key[k] = static_cast<unsigned char>(a >> (8 * k));
      for (int k = 0; k < 4; ++k) key[4 + k] = static_cast<unsigned char>(b >> (8 * k));
      uint32_t h = static_cast<uint32_t>(fnv1a64(key, 8) % buckets_);
      out.push_back(static_cast<int32_t>(vocab_rows_ + h));
    }
  }
  return out;
}

template <typename T>
Vec<T> LinearNgram<T>::forward(std::span<const int32_t> feature_ids) const {
  check_shape(!feature_ids.empty(), "linear model needs at least one feature");
  const Mat<T>& E = params_.at("embedding");
  std::vector<T> mean(d_, T(0));
  for (int32_t id : feature_ids) {
    std::span<const T> row = E.row(id);
    for (int32_t k = 0; k < d_; ++k) mean[k] += row[k];
  }
  T inv = T(1) / static_cast<T>(feature_ids.size());
  for (T& v : mean) v *= inv;
  Vec<T> logits(2);
  affine(params_.at("out_w"), std::span<const T>(mean),
         col_span(params_.at("out_b")), std::span<T>(logits));
  return logits;
}

template <typename T>
void LinearNgram<T>::backward(std::span<const int32_t> feature_ids,
                              std::span<const T> dlogits, ParamSet<T>& g) const {
  check_shape(!feature_ids.empty() && dlogits.size() == 2, "linear backward inputs");
  const Mat<T>& E = params_.at("embedding");

  std::vector<T> mean(d_, T(0));
  for (int32_t id : feature_ids) {
    std::span<const T> row = E.row(id);
    for (int32_t k = 0; k < d_; ++k) mean[k] += row[k];
  }
  T inv = T(1) / static_cast<T>(feature_ids.size());
  for (T& v : mean) v *= inv;

  outer_add(dlogits, std::span<const T>(mean), g.at("out_w"));
  {
    std::span<T> db = col_span(g.at("out_b"));
    for (size_t k = 0; k < 2; ++k) db[k] += dlogits[k];
  }
  std::vector<T> dmean(d_, T(0));
  matvec_transposed_add(params_.at("out_w"), dlogits, std::span<T>(dmean));
  Mat<T>& dE = g.at("embedding");
  for (int32_t id : feature_ids) {
    std::span<T> drow = dE.row(id);
    for (int32_t k = 0; k < d_; ++k) drow[k] += inv * dmean[k];
  }
}

template class LinearNgram<float>;
template class LinearNgram<double>;

// ------------------------------------------------------------------- SVM

double SvmModel::margin(const SparseVec& x) const {
  double acc = static_cast<double>(b);
  for (const auto& [id, v] : x) {
    if (id >= 0 && static_cast<size_t>(id) < w.size())
      acc += static_cast<double>(w[id]) * static_cast<double>(v);
  }
  return acc;
}

SvmModel svm_train(const std::vector<SparseVec>& xs, const std::vector<int>& labels,
                   size_t dim, double lambda, int epochs, uint64_t seed) {
  if (xs.empty() || xs.size() != labels.size())
    raise("ShapeError", "svm_train needs matching non-empty features and labels");
  if (lambda <= 0.0 || epochs < 1) raise("ConfigError", "bad svm configuration");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) pos = true;
    else if (y == -1) neg = true;
    else raise("ConfigError", "svm labels must be +1 or -1");
  }
  if (!pos || !neg)
    raise("DegenerateLabels", "training set contains a single class");

  // Lazy scaling: w = s * v keeps the per-step cost at O(nnz).
  std::vector<double> v(dim, 0.0);
  double s = 1.0, b = 0.0;
  Rng rng(derive_seed(seed, "svm/train"));
  std::vector<size_t> order(xs.size());
  std::iota(order.begin(), order.end(), size_t{0});
  int64_t t = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t idx : order) {
      ++t;
      double eta = 1.0 / (lambda * static_cast<double>(t));
      if (t > 1) s *= 1.0 - 1.0 / static_cast<double>(t);
      const SparseVec& x = xs[idx];
      double y = static_cast<double>(labels[idx]);
      double wx = 0.0;
      for (const auto& [id, val] : x) wx += v[id] * static_cast<double>(val);
      if (y * (s * wx + b) < 1.0) {
        double coef = eta * y / s;
        for (const auto& [id, val] : x) v[id] += coef * static_cast<double>(val);
        b += eta * y;
      }
    }
  }

  SvmModel m;
  m.lambda = lambda;
  m.b = static_cast<float>(b);
  m.w.resize(dim);
  for (size_t i = 0; i < dim; ++i) m.w[i] = static_cast<float>(s * v[i]);
  return m;
}

double svm_objective(const SvmModel& m, const std::vector<SparseVec>& xs,
                     const std::vector<int>& labels) {
  double reg = 0.0;
  for (float w : m.w) reg += static_cast<double>(w) * w;
  reg *= 0.5 * m.lambda;
  double hinge = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double mg = 1.0 - static_cast<double>(labels[i]) * m.margin(xs[i]);
    if (mg > 0.0) hinge += mg;
  }
  return reg + hinge / static_cast<double>(xs.size());
}

// ------------------------------------------------------------- inference

Prediction predict_from_logits(std::span<const float> logits) {
  check_shape(logits.size() == 2, "two-class logits expected");
  double a = logits[0], b = logits[1];
  double mx = std::max(a, b);
  double ea = std::exp(a - mx), eb = std::exp(b - mx);
  Prediction p;
  p.probs = {ea / (ea + eb), eb / (ea + eb)};
  p.label = p.probs[1] > p.probs[0] ? 1 : 0;  // tie resolves to class 0
  p.confidence = p.probs[p.label];
  return p;
}

namespace {

std::string checksum_hex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_model(const std::string& path, const ModelBundle& bundle) {
  nlohmann::json meta = {{"kind", "model"},
                         {"model_kind", model_kind_name(bundle.kind)},
                         {"vocab_checksum", checksum_hex(bundle.vocab_checksum)},
                         {"embedding_mode", mode_name(bundle.embedding_mode)},
                         {"max_len", bundle.max_len},
                         {"extra", bundle.extra}};
  if (bundle.kind == ModelKind::kSvm) {
    const SvmModel& m = bundle.svm();
    ParamSet<float> ps;
    Mat<float>& w = ps.add("svm_w", m.w.size(), 1);
    std::copy(m.w.begin(), m.w.end(), w.data());
    ps.add("svm_b", 1, 1)[0] = m.b;
    meta["lambda"] = m.lambda;
    save_checkpoint(path, ps, meta);
    return;
  }
  if (bundle.kind == ModelKind::kRcnn) {
    const Rcnn<float>& m = bundle.rcnn();
    meta["context_size"] = m.context_size();
    meta["hidden_size"] = m.hidden_size();
    save_checkpoint(path, m.params(), meta);
    return;
  }
  if (bundle.kind == ModelKind::kCnn) {
    const TextCnn<float>& m = bundle.cnn();
    meta["widths"] = m.widths();
    meta["maps_per_width"] = m.maps_per_width();
    save_checkpoint(path, m.params(), meta);
    return;
  }
  const LinearNgram<float>& m = bundle.linear();
  meta["vocab_rows"] = m.vocab_rows();
  meta["bigram_buckets"] = m.bigram_buckets();
  save_checkpoint(path, m.params(), meta);
}

ModelBundle load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.meta.value("kind", "") != "model")
    raise("CorruptTable", path + ": not a model checkpoint");
  ModelKind kind = parse_model_kind(ck.meta.at("model_kind").get<std::string>());
  ModelBundle bundle;
  bundle.kind = kind;
  bundle.vocab_checksum =
      std::stoull(ck.meta.at("vocab_checksum").get<std::string>(), nullptr, 16);
  bundle.embedding_mode =
      parse_mode(ck.meta.value("embedding_mode", "random_uniform"));
  bundle.max_len = ck.meta.value("max_len", 500);
  bundle.extra = ck.meta.value("extra", nlohmann::json::object());

  switch (kind) {
    case ModelKind::kRcnn:
      bundle.model = Rcnn<float>(std::move(ck.params));
      break;
    case ModelKind::kCnn:
      bundle.model = TextCnn<float>(std::move(ck.params));
      break;
    case ModelKind::kLinear:
      bundle.model = LinearNgram<float>(
          std::move(ck.params), ck.meta.at("vocab_rows").get<size_t>(),
          ck.meta.at("bigram_buckets").get<uint32_t>());
      break;
    case ModelKind::kSvm: {
      SvmModel m;
      const Mat<float>& w = ck.params.at("svm_w");
      m.w.assign(w.data(), w.data() + w.size());
      m.b = ck.params.at("svm_b")[0];
      m.lambda = ck.meta.value("lambda", 1e-4);
      bundle.model = std::move(m);
      break;
    }
  }
  return bundle;
}

Prediction predict_text(ModelBundle& bundle, const std::string& text,
                        const PredictContext& ctx, const TokenizerConfig& tok) {
  if (!ctx.vocab) raise("AlignmentError", "prediction needs a vocabulary");
  const Vocabulary& vocab = *ctx.vocab;
  if (bundle.vocab_checksum != 0 && bundle.vocab_checksum != vocab.checksum())
    raise("AlignmentError", "model was trained against a different vocabulary");

  std::vector<std::string> tokens = tokenize(text, tok);
  std::string note;
  if (tokens.empty()) {
    tokens = {"<unk>"};
    note = "empty input; prediction uses the UNK path and is low-confidence";
  }

  if (bundle.kind == ModelKind::kSvm) {
    if (!ctx.idf) raise("AlignmentError", "svm prediction needs the idf table");
    SparseVec x = tfidf_vector(tokens, vocab, *ctx.idf);
    double m = bundle.svm().margin(x);
    Prediction p;
    p.margin = m;
    p.label = m >= 0.0 ? 0 : 1;
    p.confidence = std::abs(m);
    p.note = note;
    return p;
  }

  const bool subword = bundle.embedding_mode == EmbeddingMode::kSkipgramSubword;
  std::optional<OovBank> bank;
  EncodedSequence seq;
  if (subword && bundle.kind != ModelKind::kLinear) {
    if (!ctx.embeddings)
      raise("AlignmentError", "subword-mode model needs its embedding table");
    bank.emplace(*ctx.embeddings, vocab);
    seq = encode_with_oov(tokens, vocab, *bank, bundle.max_len);
  } else {
    seq = encode(tokens, vocab, bundle.max_len);
  }

  Vec<float> logits;
  if (bundle.kind == ModelKind::kRcnn) {
    Rcnn<float>& m = bundle.rcnn();
    m.set_extra_rows(bank ? &bank->rows() : nullptr);
    logits = m.forward(seq);
    m.set_extra_rows(nullptr);
  } else if (bundle.kind == ModelKind::kCnn) {
    TextCnn<float>& m = bundle.cnn();
    m.set_extra_rows(bank ? &bank->rows() : nullptr);
    logits = m.forward(seq);
    m.set_extra_rows(nullptr);
  } else {
    LinearNgram<float>& m = bundle.linear();
    std::vector<int32_t> feats =
        m.features(std::span<const int32_t>(seq.ids.data(), seq.ids.size()));
    logits = m.forward(feats);
  }
  Prediction p = predict_from_logits(logits);
  p.note = note;
  return p;
}

}  // namespace helprank
