#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "helprank/corpus.hpp"
#include "helprank/embeddings.hpp"
#include "helprank/models.hpp"
#include "helprank/numerics.hpp"

namespace helprank {

enum class Task { kT1, kT2 };

const char* task_name(Task t);
Task parse_task(std::string_view name);

// One experiment's knobs. T1 pairs random-uniform 256-dim embeddings with
// 256-unit context/hidden layers; T2 uses the pretrained 300-dim subword
// table and 300-unit layers. Anything set away from those defaults should be
// listed in `overrides` so reports show it.
struct TrainConfig {
  Task task = Task::kT1;
  ModelKind model = ModelKind::kRcnn;
  int32_t batch_size = 128;
  int32_t epochs = 10;
  int32_t max_len = 500;
  int32_t embed_dim = 256;
  int32_t rnn_hidden = 256;  // recurrent context width
  int32_t fc_hidden = 256;   // latent layer width
  AdamConfig optimizer;      // lr 1e-3, betas 0.9/0.999, eps 1e-8
  uint64_t seed = 0;
  bool freeze_embeddings = false;
  double dropout = 0.0;  // convolutional model only, on pooled features
  int64_t vocab_min_count = 1;
  int32_t linear_dim = 100;
  uint32_t bigram_buckets = 1u << 16;
  double svm_lambda = 1e-4;
  int32_t svm_epochs = 5;
  std::vector<std::string> overrides;

  static TrainConfig defaults_for(Task task, ModelKind model, uint64_t seed = 0);
  nlohmann::json to_json() const;
};

// Epoch-wise batching: shuffle keyed by (seed, epoch), stable sort by length
// so batches are length-homogeneous, chunk, then shuffle the batch order.
// The final partial batch is kept. Returns index groups into the dataset.
std::vector<std::vector<size_t>> make_batches(const std::vector<int32_t>& lengths,
                                              int32_t batch_size, uint64_t seed,
                                              int32_t epoch);

struct Confusion {
  // Helpful (class 0) is the positive class.
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  int64_t total() const { return tp + fp + tn + fn; }
  double accuracy() const {
    return total() == 0
               ? 0.0
               : static_cast<double>(tp + tn) / static_cast<double>(total());
  }
  void count(int true_label, int predicted);
};

struct EpochStat {
  int32_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelBundle best;         // best-validation snapshot; ties go to the earliest
  ModelBundle final_state;  // after the last epoch
  int32_t selected_epoch = 0;  // 1-based; 0 means "initialization" (epochs=0)
  std::vector<EpochStat> curve;
  double best_val_accuracy = 0.0;
};

// Order-sensitive FNV hash over (text, label) pairs; identifies a split.
uint64_t split_hash(const LabeledDataset& ds);
uint64_t texts_hash(const std::vector<std::string>& texts);

// Hard check that no held-out text leaks into an embedding/vocabulary
// corpus. Exact text match; raises HygieneError naming the offender.
void enforce_hygiene(const std::vector<std::string>& corpus_texts,
                     const LabeledDataset& test_split);

struct ExperimentResult {
  nlohmann::json report;
  ModelBundle bundle;  // the report's selected snapshot
  Vocabulary vocab;
  std::optional<IdfTable> idf;  // present for the SVM
};

// Full experiment: vocabulary from the training split (T1) or the pretrained
// table's vocabulary (T2), encode, train with validation-based selection,
// evaluate on test. T2 requires both pretrained arguments.
ExperimentResult run_experiment(const DatasetSplits& splits,
                                const Category& category, const TrainConfig& cfg,
                                const EmbeddingTable* pretrained = nullptr,
                                const Vocabulary* pretrained_vocab = nullptr);

struct EvalResult {
  Confusion confusion;
  double accuracy = 0.0;
};

// Evaluate a (possibly reloaded) model on a labeled split. `table` is needed
// for subword-mode bundles, `idf` for the SVM. Empty split -> EmptySplit.
EvalResult evaluate_model(ModelBundle& bundle, const LabeledDataset& test,
                          const Vocabulary& vocab,
                          const EmbeddingTable* table = nullptr,
                          const IdfTable* idf = nullptr,
                          const TokenizerConfig& tok = {});

struct CompareResult {
  nlohmann::json json;
  std::string text;  // rendered table
};

// Side-by-side accuracy comparison of two report files (single report,
// {"reports":[...]}, or fixture entries with "accuracy_percent"). Categories
// must match; deltas are percentage points.
CompareResult compare_reports(const nlohmann::json& a, const nlohmann::json& b);

}  // namespace helprank
