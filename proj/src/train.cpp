#include "helprank/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <unordered_set>

#include "helprank/error.hpp"

namespace helprank {

using nlohmann::json;

const char* task_name(Task t) { return t == Task::kT1 ? "t1" : "t2"; }

Task parse_task(std::string_view name) {
  if (name == "t1" || name == "T1") return Task::kT1;
  if (name == "t2" || name == "T2") return Task::kT2;
  raise("ParseError", "unknown task " + std::string(name));
}

TrainConfig TrainConfig::defaults_for(Task task, ModelKind model, uint64_t seed) {
  TrainConfig cfg;
  cfg.task = task;
  cfg.model = model;
  cfg.seed = seed;
  if (task == Task::kT2) {
    cfg.embed_dim = 300;
    cfg.rnn_hidden = 300;
    cfg.fc_hidden = 300;
  }
  return cfg;
}

json TrainConfig::to_json() const {
  return json{{"task", task_name(task)},
              {"model", model_kind_name(model)},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"max_len", max_len},
              {"embed_dim", embed_dim},
              {"rnn_hidden", rnn_hidden},
              {"fc_hidden", fc_hidden},
              {"learning_rate", optimizer.learning_rate},
              {"adam_beta1", optimizer.beta1},
              {"adam_beta2", optimizer.beta2},
              {"adam_eps", optimizer.eps},
              {"seed", seed},
              {"freeze_embeddings", freeze_embeddings},
              {"dropout", dropout},
              {"vocab_min_count", vocab_min_count},
              {"linear_dim", linear_dim},
              {"bigram_buckets", bigram_buckets},
              {"svm_lambda", svm_lambda},
              {"svm_epochs", svm_epochs},
              {"overrides", overrides}};
}

std::vector<std::vector<size_t>> make_batches(const std::vector<int32_t>& lengths,
                                              int32_t batch_size, uint64_t seed,
                                              int32_t epoch) {
  if (batch_size < 1) raise("ConfigError", "batch size must be positive");
  std::vector<size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(derive_seed(seed, "batches/epoch" + std::to_string(epoch)));
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < order.size(); at += batch_size) {
    size_t end = std::min(order.size(), at + batch_size);
    batches.emplace_back(order.begin() + at, order.begin() + end);
  }
  rng.shuffle(batches);
  return batches;
}

void Confusion::count(int true_label, int predicted) {
  if (true_label == 0)
    (predicted == 0 ? tp : fn)++;
  else
    (predicted == 1 ? tn : fp)++;
}

uint64_t split_hash(const LabeledDataset& ds) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
  };
  for (const LabeledExample& e : ds.examples) {
    mix(e.text);
    mix("\x1f");
    mix(label_name(e.label));
    mix("\n");
  }
  return h;
}

uint64_t texts_hash(const std::vector<std::string>& texts) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& t : texts) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    h ^= '\n';
    h *= 0x100000001b3ull;
  }
  return h;
}

void enforce_hygiene(const std::vector<std::string>& corpus_texts,
                     const LabeledDataset& test_split) {
  std::unordered_set<std::string_view> held_out;
  held_out.reserve(test_split.examples.size() * 2);
  for (const LabeledExample& e : test_split.examples) held_out.insert(e.text);
  for (size_t i = 0; i < corpus_texts.size(); ++i) {
    if (held_out.count(corpus_texts[i]))
      raise("HygieneError",
            "corpus text " + std::to_string(i) +
                " is identical to a held-out test review; test text must never "
                "reach vocabulary, idf, or embedding training");
  }
}

namespace {

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

int argmax2(std::span<const float> logits) {
  return logits[1] > logits[0] ? 1 : 0;  // tie resolves to class 0
}

// Everything the generic epoch loop needs from a concrete model.
struct NeuralHooks {
  // Forward + backward for one training example; dlogits scaled by `scale`
  // before accumulation. Returns the (unscaled) loss.
  std::function<double(size_t idx, float scale, ParamSet<float>& grads, Rng& rng)>
      step;
  std::function<bool(size_t idx)> val_correct;
  std::function<ModelBundle()> snapshot;
  ParamSet<float>* params = nullptr;
  bool has_embedding = true;
};

TrainResult train_neural_loop(const NeuralHooks& hooks, size_t n_train,
                              size_t n_val, const std::vector<int32_t>& lengths,
                              const TrainConfig& cfg) {
  TrainResult r;
  AdamState<float> adam = AdamState<float>::init(*hooks.params);
  ParamSet<float> grads = hooks.params->zeros_like();
  Rng drop_rng(derive_seed(cfg.seed, "train/dropout"));

  auto val_accuracy = [&]() {
    int64_t correct = 0;
    for (size_t i = 0; i < n_val; ++i) correct += hooks.val_correct(i) ? 1 : 0;
    return n_val == 0 ? 0.0
                      : static_cast<double>(correct) / static_cast<double>(n_val);
  };

  double best_acc = -1.0;
  for (int32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = make_batches(lengths, cfg.batch_size, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      grads.zero();
      float scale = 1.0f / static_cast<float>(batches[b].size());
      for (size_t idx : batches[b]) {
        double loss = hooks.step(idx, scale, grads, drop_rng);
        if (!std::isfinite(loss))
          raise("DivergenceError", "loss became non-finite at epoch " +
                                       std::to_string(epoch) + ", batch " +
                                       std::to_string(b));
        loss_sum += loss;
      }
      if (hooks.has_embedding) {
        Mat<float>& dE = grads.at("embedding");
        if (cfg.freeze_embeddings) {
          dE.fill(0.0f);
        } else {
          for (float& v : dE.row(Vocabulary::kPad)) v = 0.0f;  // PAD stays zero
        }
      }
      adam_step(*hooks.params, grads, adam, cfg.optimizer);
    }
    double vacc = val_accuracy();
    r.curve.push_back({epoch, loss_sum / static_cast<double>(n_train), vacc});
    if (vacc > best_acc) {
      best_acc = vacc;
      r.selected_epoch = epoch;
      r.best = hooks.snapshot();
    }
  }
  if (cfg.epochs == 0) {
    r.best = hooks.snapshot();
    r.selected_epoch = 0;
    best_acc = val_accuracy();
  }
  r.final_state = hooks.snapshot();
  r.best_val_accuracy = best_acc;
  return r;
}

std::vector<std::vector<std::string>> tokenize_split(const LabeledDataset& ds,
                                                     const TokenizerConfig& tok) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(ds.examples.size());
  for (const LabeledExample& e : ds.examples) docs.push_back(tokenize(e.text, tok));
  return docs;
}

std::vector<EncodedSequence> encode_split(
    const std::vector<std::vector<std::string>>& docs, const LabeledDataset& ds,
    const Vocabulary& vocab, OovBank* bank, int32_t max_len) {
  std::vector<EncodedSequence> out;
  out.reserve(docs.size());
  for (size_t i = 0; i < docs.size(); ++i) {
    EncodedSequence seq = bank ? encode_with_oov(docs[i], vocab, *bank, max_len)
                               : encode(docs[i], vocab, max_len);
    if (seq.length == 0) {
      // Blank review text; classify through the UNK path.
      seq.ids = {Vocabulary::kUnk};
      seq.length = 1;
    }
    seq.label = ds.examples[i].label == LabelValue::kHelpful ? 0 : 1;
    out.push_back(std::move(seq));
  }
  return out;
}

Mat<float> composed_embedding_matrix(const EmbeddingTable& table,
                                     const Vocabulary& vocab) {
  Mat<float> out(vocab.size(), static_cast<size_t>(table.dim));
  for (int32_t id = 0; id < vocab.size(); ++id) {
    std::vector<float> v = word_vector(vocab.token(id), table, vocab);
    std::copy(v.begin(), v.end(), out.row(id).begin());
  }
  for (float& v : out.row(Vocabulary::kPad)) v = 0.0f;
  return out;
}

Confusion eval_encoded(const std::function<int(size_t)>& predict,
                       const std::vector<EncodedSequence>& seqs) {
  Confusion c;
  for (size_t i = 0; i < seqs.size(); ++i) c.count(seqs[i].label, predict(i));
  return c;
}

json confusion_json(const Confusion& c) {
  return json{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

}  // namespace

ExperimentResult run_experiment(const DatasetSplits& splits,
                                const Category& category, const TrainConfig& cfg,
                                const EmbeddingTable* pretrained,
                                const Vocabulary* pretrained_vocab) {
  for (const LabeledDataset* part : {&splits.train, &splits.validation, &splits.test})
    if (part->examples.empty())
      raise("EmptySplit", "train, validation and test must all be non-empty");

  const bool t2 = cfg.task == Task::kT2;
  if (t2) {
    if (!pretrained || !pretrained_vocab)
      raise("ConfigError",
            "task t2 needs a pretrained embedding table and its vocabulary");
    if (pretrained->mode != EmbeddingMode::kSkipgramSubword)
      raise("ConfigError", "task t2 expects a subword-mode embedding table");
    check_alignment(*pretrained, *pretrained_vocab);
    if (cfg.model != ModelKind::kSvm && cfg.model != ModelKind::kLinear &&
        cfg.embed_dim != pretrained->dim)
      raise("AlignmentError",
            "embed_dim " + std::to_string(cfg.embed_dim) +
                " does not match the pretrained table dim " +
                std::to_string(pretrained->dim));
  }

  TokenizerConfig tok;
  auto train_docs = tokenize_split(splits.train, tok);
  auto val_docs = tokenize_split(splits.validation, tok);
  auto test_docs = tokenize_split(splits.test, tok);

  Vocabulary vocab = t2 ? *pretrained_vocab
                        : Vocabulary::build(train_docs, cfg.vocab_min_count);

  const bool use_bank =
      t2 && (cfg.model == ModelKind::kRcnn || cfg.model == ModelKind::kCnn);
  std::optional<OovBank> bank;
  if (use_bank) bank.emplace(*pretrained, vocab);
  OovBank* bank_ptr = use_bank ? &*bank : nullptr;

  auto train_seqs = encode_split(train_docs, splits.train, vocab, bank_ptr, cfg.max_len);
  auto val_seqs = encode_split(val_docs, splits.validation, vocab, bank_ptr, cfg.max_len);
  auto test_seqs = encode_split(test_docs, splits.test, vocab, bank_ptr, cfg.max_len);

  const uint64_t train_hash = split_hash(splits.train);
  const uint64_t val_hash = split_hash(splits.validation);
  const uint64_t test_hash = split_hash(splits.test);
  const uint64_t fingerprint =
      fnv1a64(cfg.to_json().dump() + hex64(train_hash) + hex64(val_hash) +
              hex64(test_hash));

  ExperimentResult result_out;
  TrainResult tr;
  Confusion test_conf, final_conf;
  std::optional<IdfTable> idf;

  if (cfg.model == ModelKind::kSvm) {
    idf = IdfTable::fit(train_docs, vocab);  // training split only
    auto vectorize = [&](const std::vector<std::vector<std::string>>& docs) {
      std::vector<SparseVec> xs;
      xs.reserve(docs.size());
      for (const auto& d : docs) xs.push_back(tfidf_vector(d, vocab, *idf));
      return xs;
    };
    auto train_x = vectorize(train_docs);
    auto val_x = vectorize(val_docs);
    auto test_x = vectorize(test_docs);
    std::vector<int> train_y;
    train_y.reserve(train_seqs.size());
    for (const auto& s : train_seqs) train_y.push_back(s.label == 0 ? 1 : -1);

    SvmModel svm = svm_train(train_x, train_y, static_cast<size_t>(vocab.size()),
                             cfg.svm_lambda, cfg.svm_epochs, cfg.seed);

    auto conf_of = [&](const std::vector<SparseVec>& xs,
                       const std::vector<EncodedSequence>& seqs) {
      Confusion c;
      for (size_t i = 0; i < xs.size(); ++i)
        c.count(seqs[i].label, svm.margin(xs[i]) >= 0.0 ? 0 : 1);
      return c;
    };
    double val_acc = conf_of(val_x, val_seqs).accuracy();
    test_conf = conf_of(test_x, test_seqs);
    final_conf = test_conf;

    ModelBundle bundle;
    bundle.kind = ModelKind::kSvm;
    bundle.model = svm;
    bundle.vocab_checksum = vocab.checksum();
    bundle.embedding_mode = EmbeddingMode::kRandomUniform;
    bundle.max_len = cfg.max_len;
    tr.best = bundle;
    tr.final_state = std::move(bundle);
    tr.selected_epoch = 1;
    tr.best_val_accuracy = val_acc;
    tr.curve.push_back(
        {1, svm_objective(svm, train_x, train_y), val_acc});
  } else {
    // Shared embedding initialization.
    Mat<float> embedding_init;
    EmbeddingMode emode =
        t2 ? EmbeddingMode::kSkipgramSubword : EmbeddingMode::kRandomUniform;
    if (t2) {
      embedding_init = composed_embedding_matrix(*pretrained, vocab);
    } else {
      EmbeddingTable t = init_random_uniform(
          vocab, cfg.embed_dim, derive_seed(cfg.seed, "embedding/init"));
      embedding_init = std::move(t.word_vectors);
    }

    std::vector<int32_t> lengths;
    lengths.reserve(train_seqs.size());
    for (const auto& s : train_seqs) lengths.push_back(s.length);

    auto make_bundle = [&](ModelKind kind,
                           std::function<void(ModelBundle&)> fill) {
      ModelBundle b;
      b.kind = kind;
      b.vocab_checksum = vocab.checksum();
      b.embedding_mode = emode;
      b.max_len = cfg.max_len;
      b.extra = json{{"task", task_name(cfg.task)}, {"category", category.name}};
      fill(b);
      return b;
    };

    NeuralHooks hooks;
    std::optional<Rcnn<float>> rcnn;
    std::optional<TextCnn<float>> cnn;
    std::optional<LinearNgram<float>> linear;
    std::vector<std::vector<int32_t>> train_feats, val_feats, test_feats;

    if (cfg.model == ModelKind::kRcnn) {
      rcnn.emplace(embedding_init, cfg.rnn_hidden, cfg.fc_hidden, cfg.seed);
      if (bank_ptr) rcnn->set_extra_rows(&bank_ptr->rows());
      hooks.params = &rcnn->params();
      hooks.step = [&](size_t i, float scale, ParamSet<float>& g, Rng&) {
        typename Rcnn<float>::Trace trc;
        Vec<float> logits = rcnn->forward(train_seqs[i], &trc);
        auto sl = softmax_cross_entropy(std::span<const float>(logits),
                                        static_cast<size_t>(train_seqs[i].label));
        for (float& v : sl.dlogits) v *= scale;
        rcnn->backward(train_seqs[i], trc, sl.dlogits, g);
        return static_cast<double>(sl.loss);
      };
      hooks.val_correct = [&](size_t i) {
        Vec<float> logits = rcnn->forward(val_seqs[i]);
        return argmax2(logits) == val_seqs[i].label;
      };
      hooks.snapshot = [&]() {
        return make_bundle(ModelKind::kRcnn, [&](ModelBundle& b) {
          b.model = Rcnn<float>(rcnn->params());
        });
      };
    } else if (cfg.model == ModelKind::kCnn) {
      cnn.emplace(embedding_init, std::vector<int32_t>{3, 4, 5}, 100, cfg.seed);
      if (bank_ptr) cnn->set_extra_rows(&bank_ptr->rows());
      hooks.params = &cnn->params();
      const size_t n_pool = 3 * 100;
      const double p = cfg.dropout;
      hooks.step = [&, n_pool, p](size_t i, float scale, ParamSet<float>& g,
                                  Rng& rng) {
        std::vector<uint8_t> mask;
        float dscale = 1.0f;
        const std::vector<uint8_t>* mask_ptr = nullptr;
        if (p > 0.0) {
          mask.resize(n_pool);
          for (auto& m : mask) m = rng.next_double() < p ? 1 : 0;
          dscale = static_cast<float>(1.0 / (1.0 - p));
          mask_ptr = &mask;
        }
        typename TextCnn<float>::Trace trc;
        Vec<float> logits = cnn->forward(train_seqs[i], &trc, mask_ptr, dscale);
        auto sl = softmax_cross_entropy(std::span<const float>(logits),
                                        static_cast<size_t>(train_seqs[i].label));
        for (float& v : sl.dlogits) v *= scale;
        cnn->backward(train_seqs[i], trc, sl.dlogits, g, mask_ptr, dscale);
        return static_cast<double>(sl.loss);
      };
      hooks.val_correct = [&](size_t i) {
        Vec<float> logits = cnn->forward(val_seqs[i]);
        return argmax2(logits) == val_seqs[i].label;
      };
      hooks.snapshot = [&]() {
        return make_bundle(ModelKind::kCnn, [&](ModelBundle& b) {
          b.model = TextCnn<float>(cnn->params());
        });
      };
    } else {  // linear
      int32_t dim = t2 ? pretrained->dim : cfg.linear_dim;
      linear.emplace(static_cast<size_t>(vocab.size()), dim, cfg.bigram_buckets,
                     cfg.seed);
      if (t2) {
        Mat<float>& E = linear->params().at("embedding");
        for (int32_t id = 0; id < vocab.size(); ++id)
          std::copy(embedding_init.row(id).begin(), embedding_init.row(id).end(),
                    E.row(id).begin());
      }
      auto featurize = [&](const std::vector<EncodedSequence>& seqs) {
        std::vector<std::vector<int32_t>> out;
        out.reserve(seqs.size());
        for (const auto& s : seqs)
          out.push_back(linear->features(
              std::span<const int32_t>(s.ids.data(), s.ids.size())));
        return out;
      };
      train_feats = featurize(train_seqs);
      val_feats = featurize(val_seqs);
      test_feats = featurize(test_seqs);
      hooks.params = &linear->params();
      hooks.step = [&](size_t i, float scale, ParamSet<float>& g, Rng&) {
        Vec<float> logits = linear->forward(train_feats[i]);
        auto sl = softmax_cross_entropy(std::span<const float>(logits),
                                        static_cast<size_t>(train_seqs[i].label));
        for (float& v : sl.dlogits) v *= scale;
        linear->backward(train_feats[i], sl.dlogits, g);
        return static_cast<double>(sl.loss);
      };
      hooks.val_correct = [&](size_t i) {
        Vec<float> logits = linear->forward(val_feats[i]);
        return argmax2(logits) == val_seqs[i].label;
      };
      hooks.snapshot = [&]() {
        return make_bundle(ModelKind::kLinear, [&](ModelBundle& b) {
          b.model = LinearNgram<float>(linear->params(),
                                       static_cast<size_t>(vocab.size()),
                                       cfg.bigram_buckets);
        });
      };
    }

    tr = train_neural_loop(hooks, train_seqs.size(), val_seqs.size(), lengths, cfg);

    // Test both the selected and the final snapshot.
    auto eval_bundle = [&](ModelBundle& b) {
      std::function<int(size_t)> predict;
      if (b.kind == ModelKind::kRcnn) {
        Rcnn<float>& m = b.rcnn();
        if (bank_ptr) m.set_extra_rows(&bank_ptr->rows());
        predict = [&](size_t i) { return argmax2(m.forward(test_seqs[i])); };
      } else if (b.kind == ModelKind::kCnn) {
        TextCnn<float>& m = b.cnn();
        if (bank_ptr) m.set_extra_rows(&bank_ptr->rows());
        predict = [&](size_t i) { return argmax2(m.forward(test_seqs[i])); };
      } else {
        LinearNgram<float>& m = b.linear();
        predict = [&](size_t i) { return argmax2(m.forward(test_feats[i])); };
      }
      return eval_encoded(predict, test_seqs);
    };
    test_conf = eval_bundle(tr.best);
    final_conf = eval_bundle(tr.final_state);
  }

  json curve = json::array();
  for (const EpochStat& s : tr.curve)
    curve.push_back({{"epoch", s.epoch},
                     {"train_loss", s.train_loss},
                     {"val_accuracy", s.val_accuracy}});

  json report{
      {"schema_version", 1},
      {"task", task_name(cfg.task)},
      {"model", model_kind_name(cfg.model)},
      {"category", category.name},
      {"config", cfg.to_json()},
      {"config_fingerprint", hex64(fingerprint)},
      {"data",
       {{"train_size", splits.train.examples.size()},
        {"validation_size", splits.validation.examples.size()},
        {"test_size", splits.test.examples.size()},
        {"train_hash", hex64(train_hash)},
        {"validation_hash", hex64(val_hash)},
        {"test_hash", hex64(test_hash)},
        {"vocab_size", vocab.size()},
        {"vocab_checksum", hex64(vocab.checksum())}}},
      {"metrics",
       {{"selected_epoch", tr.selected_epoch},
        {"best_val_accuracy", tr.best_val_accuracy},
        {"validation_curve", curve},
        {"test_accuracy", test_conf.accuracy()},
        {"confusion", confusion_json(test_conf)},
        {"final_epoch_test_accuracy", final_conf.accuracy()},
        {"final_epoch_confusion", confusion_json(final_conf)}}},
      {"reference_accuracy",
       {{"t1_overall_percent", 83.25},
        {"t2_overall_percent", 88.75},
        {"note", "full-scale reference values; desk-scale runs are not "
                 "comparable"}}}};

  result_out.report = std::move(report);
  result_out.bundle = std::move(tr.best);
  result_out.vocab = std::move(vocab);
  result_out.idf = std::move(idf);
  return result_out;
}

EvalResult evaluate_model(ModelBundle& bundle, const LabeledDataset& test,
                          const Vocabulary& vocab, const EmbeddingTable* table,
                          const IdfTable* idf, const TokenizerConfig& tok) {
  if (test.examples.empty()) raise("EmptySplit", "evaluation split is empty");
  if (bundle.vocab_checksum != 0 && bundle.vocab_checksum != vocab.checksum())
    raise("AlignmentError", "model was trained against a different vocabulary");

  const bool use_bank = bundle.embedding_mode == EmbeddingMode::kSkipgramSubword &&
                        (bundle.kind == ModelKind::kRcnn ||
                         bundle.kind == ModelKind::kCnn);
  std::optional<OovBank> bank;
  if (use_bank) {
    if (!table)
      raise("AlignmentError", "subword-mode model needs its embedding table");
    bank.emplace(*table, vocab);
  }
  if (bundle.kind == ModelKind::kSvm && !idf)
    raise("AlignmentError", "svm evaluation needs the idf table");

  Confusion conf;
  for (const LabeledExample& e : test.examples) {
    std::vector<std::string> tokens = tokenize(e.text, tok);
    int true_label = e.label == LabelValue::kHelpful ? 0 : 1;
    int pred;
    if (bundle.kind == ModelKind::kSvm) {
      pred = bundle.svm().margin(tfidf_vector(tokens, vocab, *idf)) >= 0.0 ? 0 : 1;
    } else {
      EncodedSequence seq = bank ? encode_with_oov(tokens, vocab, *bank,
                                                   bundle.max_len)
                                 : encode(tokens, vocab, bundle.max_len);
      if (seq.length == 0) {
        seq.ids = {Vocabulary::kUnk};
        seq.length = 1;
      }
      if (bundle.kind == ModelKind::kRcnn) {
        Rcnn<float>& m = bundle.rcnn();
        m.set_extra_rows(bank ? &bank->rows() : nullptr);
        pred = argmax2(m.forward(seq));
      } else if (bundle.kind == ModelKind::kCnn) {
        TextCnn<float>& m = bundle.cnn();
        m.set_extra_rows(bank ? &bank->rows() : nullptr);
        pred = argmax2(m.forward(seq));
      } else {
        LinearNgram<float>& m = bundle.linear();
        auto feats =
            m.features(std::span<const int32_t>(seq.ids.data(), seq.ids.size()));
        pred = argmax2(m.forward(feats));
      }
    }
    conf.count(true_label, pred);
  }
  return {conf, conf.accuracy()};
}

namespace {

struct CompareEntry {
  std::string category;
  double percent = 0.0;
  int64_t train_size = -1;  // -1 = unknown
  int64_t test_size = -1;
};

void collect_entries(const json& doc, std::vector<CompareEntry>& out) {
  if (doc.is_array()) {
    for (const json& item : doc) collect_entries(item, out);
    return;
  }
  if (!doc.is_object()) raise("ParseError", "comparison input must be an object");
  if (doc.contains("reports")) {
    collect_entries(doc.at("reports"), out);
    return;
  }
  CompareEntry e;
  e.category = doc.at("category").get<std::string>();
  if (doc.contains("accuracy_percent")) {
    e.percent = doc.at("accuracy_percent").get<double>();
  } else if (doc.contains("metrics")) {
    e.percent = doc.at("metrics").at("test_accuracy").get<double>() * 100.0;
  } else {
    raise("ParseError",
          "comparison entry for " + e.category +
              " has neither accuracy_percent nor metrics.test_accuracy");
  }
  if (doc.contains("train_size")) e.train_size = doc.at("train_size").get<int64_t>();
  if (doc.contains("test_size")) e.test_size = doc.at("test_size").get<int64_t>();
  if (doc.contains("data")) {
    e.train_size = doc.at("data").value("train_size", e.train_size);
    e.test_size = doc.at("data").value("test_size", e.test_size);
  }
  out.push_back(std::move(e));
}

}  // namespace

CompareResult compare_reports(const json& a, const json& b) {
  std::vector<CompareEntry> as, bs;
  collect_entries(a, as);
  collect_entries(b, bs);
  if (as.empty() || bs.empty())
    raise("ParseError", "comparison inputs contain no report entries");

  auto find_in = [](const std::vector<CompareEntry>& v, const std::string& cat)
      -> const CompareEntry* {
    for (const CompareEntry& e : v)
      if (e.category == cat) return &e;
    return nullptr;
  };
  for (const CompareEntry& e : bs)
    if (!find_in(as, e.category))
      raise("MissingCategory", "category " + e.category + " missing on side a");

  json rows = json::array();
  std::string text;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10s %8s\n", "category",
                "train", "test", "a_pct", "b_pct", "delta");
  text += line;
  double sum_a = 0.0, sum_b = 0.0;
  for (const CompareEntry& ea : as) {
    const CompareEntry* eb = find_in(bs, ea.category);
    if (!eb)
      raise("MissingCategory", "category " + ea.category + " missing on side b");
    double delta = eb->percent - ea.percent;
    sum_a += ea.percent;
    sum_b += eb->percent;
    rows.push_back({{"category", ea.category},
                    {"a_percent", ea.percent},
                    {"b_percent", eb->percent},
                    {"delta_points", delta},
                    {"train_size", ea.train_size},
                    {"test_size", ea.test_size}});
    std::string train_s = ea.train_size < 0 ? "-" : std::to_string(ea.train_size);
    std::string test_s = ea.test_size < 0 ? "-" : std::to_string(ea.test_size);
    std::snprintf(line, sizeof line, "%-16s %10s %10s %10.2f %10.2f %+8.2f\n",
                  ea.category.c_str(), train_s.c_str(), test_s.c_str(), ea.percent,
                  eb->percent, delta);
    text += line;
  }
  double n = static_cast<double>(as.size());
  double overall_a = sum_a / n, overall_b = sum_b / n;
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10.2f %10.2f %+8.2f\n",
                "overall", "", "", overall_a, overall_b, overall_b - overall_a);
  text += line;

  json out{{"categories", rows},
           {"overall",
            {{"a_percent", overall_a},
             {"b_percent", overall_b},
             {"delta_points", overall_b - overall_a}}}};
  return {std::move(out), std::move(text)};
}

}  // namespace helprank
