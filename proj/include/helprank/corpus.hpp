#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "helprank/text.hpp"

namespace helprank {

struct Category {
  enum Kind { kBooks, kElectronics, kCDsAndVinyl, kMoviesAndTV, kOther };
  Kind kind = kOther;
  std::string name;  // canonical name, or the custom name for kOther

  static Category parse(std::string_view name);
  bool operator==(const Category& o) const { return name == o.name; }
};

struct ReviewRecord {
  std::string reviewer_id;
  std::string item_id;  // "asin"
  int64_t helpful_votes = 0;
  int64_t total_votes = 0;
  std::string review_text;
  std::string summary;
  double overall = 0.0;  // rating, one of 1.0 .. 5.0
  int64_t unix_time = 0;
  Category category;
};

// One JSON object per line, keys "reviewerID", "asin", "helpful" (= [h, t]),
// "reviewText", "overall", "summary", "unixReviewTime". Missing optional
// fields default to empty; a missing reviewText is an error.
ReviewRecord parse_review_record(std::string_view line, size_t line_number = 0,
                                 const Category& category = {});

// helpful_votes / total_votes. total_votes == 0 has no defined ratio; such
// records belong in the unlabeled pool.
double helpfulness_ratio(int64_t helpful_votes, int64_t total_votes);

enum class LabelValue { kHelpful, kUnhelpful };

inline const char* label_name(LabelValue v) {
  return v == LabelValue::kHelpful ? "helpful" : "unhelpful";
}

struct LabelConfig {
  double helpful_min = 0.75;   // ratio strictly above => helpful
  double unhelpful_max = 0.35;  // ratio strictly below => unhelpful
  int64_t min_votes = 10;
  int32_t max_len = 500;  // tokens
  TokenizerConfig tokenizer;
};

struct FilterDecision {
  enum class Outcome {
    kAccept,
    kRejectTooFewVotes,
    kRejectAmbiguousRatio,
    kRejectTooLong,
    kAcceptUnlabeledZeroVote,
  };
  Outcome outcome;
  LabelValue label = LabelValue::kHelpful;  // meaningful only for kAccept
};

const char* outcome_name(FilterDecision::Outcome o);

// Length is checked before any vote logic; the ratio thresholds are strict
// inequalities, so a ratio of exactly 0.75 or 0.35 is ambiguous.
FilterDecision assign_label(const ReviewRecord& record, size_t token_count,
                            const LabelConfig& cfg);
FilterDecision assign_label(const ReviewRecord& record, const LabelConfig& cfg);

struct RejectionTally {
  int64_t accepted_helpful = 0;
  int64_t accepted_unhelpful = 0;
  int64_t zero_vote = 0;
  int64_t too_few_votes = 0;
  int64_t ambiguous_ratio = 0;
  int64_t too_long = 0;

  int64_t total() const {
    return accepted_helpful + accepted_unhelpful + zero_vote + too_few_votes +
           ambiguous_ratio + too_long;
  }
  void count(const FilterDecision& d);
};

struct LabeledExample {
  std::string text;
  LabelValue label;
  // provenance
  std::string reviewer_id;
  std::string item_id;
  int64_t helpful_votes = 0;
  int64_t total_votes = 0;
};

struct LabeledDataset {
  std::vector<LabeledExample> examples;
  Category category;
  int64_t helpful_count = 0;
  int64_t unhelpful_count = 0;
  bool shortfall = false;
  std::string shortfall_note;
  RejectionTally tally;
};

struct UnlabeledPool {
  std::vector<std::string> texts;
  Category category;
  bool shortfall = false;
  std::string shortfall_note;
};

// Pull-style record source: fills the record and returns true, or returns
// false at end of stream. May throw parse errors.
using RecordSource = std::function<bool(ReviewRecord&)>;

RecordSource vector_source(const std::vector<ReviewRecord>& records);
// Streams a JSON-lines file, tagging records with the category.
RecordSource jsonl_source(const std::string& path, const Category& category);

// Balanced extraction: an independent uniform reservoir per class, then a
// seed-keyed shuffle. If either class runs short, both are trimmed to the
// smaller count so the dataset stays balanced, and the shortfall is noted.
LabeledDataset build_labeled_set(const RecordSource& source,
                                 size_t target_per_class, const LabelConfig& cfg,
                                 uint64_t seed);

// Zero-vote reviews within the length cap. exclude_keys drops records whose
// (reviewer_id, item_id) already appears in the labeled set.
UnlabeledPool build_unlabeled_pool(
    const RecordSource& source, size_t target, const LabelConfig& cfg,
    uint64_t seed,
    const std::set<std::pair<std::string, std::string>>* exclude_keys = nullptr);

struct SplitSpec {
  double train_frac = 0.90;
  double test_frac = 0.10;
  double val_frac_of_train = 0.15;
  uint64_t seed = 0;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset validation;
  LabeledDataset test;
};

// Stratified: per class, test_frac goes to test, then val_frac_of_train of
// the remainder to validation (counts rounded half-up). Deterministic under
// the seed; the three parts partition the input.
DatasetSplits split_dataset(const LabeledDataset& ds, const SplitSpec& spec);

// Votes-received histogram: bins [0], [1,5], (5,10], (10,50], (50,100],
// (100, inf).
struct VotingDistributionReport {
  static constexpr int kBins = 6;
  int64_t counts[kBins] = {0, 0, 0, 0, 0, 0};
  int64_t total = 0;

  static const char* bin_label(int b);
  static int bin_of(int64_t total_votes);
  double percentage(int b) const;
};

VotingDistributionReport corpus_stats(const RecordSource& source);

// JSON-lines persistence: {"text":..., "label":"helpful"|"unhelpful",
// "category":..., "source_votes":[h,t]}; unlabeled lines omit "label".
void write_labeled_jsonl(const std::string& path,
                         const std::vector<LabeledExample>& examples,
                         const Category& category);
std::vector<LabeledExample> read_labeled_jsonl(const std::string& path,
                                               Category* category_out = nullptr);
void write_unlabeled_jsonl(const std::string& path, const UnlabeledPool& pool);
std::vector<std::string> read_unlabeled_jsonl(const std::string& path);

}  // namespace helprank
