#include "helprank/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "json.hpp"

#include "helprank/error.hpp"
#include "helprank/rng.hpp"

namespace helprank {

using nlohmann::json;

Category Category::parse(std::string_view name) {
  static const std::pair<std::string_view, Kind> known[] = {
      {"Books", kBooks},
      {"Electronics", kElectronics},
      {"CDsAndVinyl", kCDsAndVinyl},
      {"MoviesAndTV", kMoviesAndTV},
  };
  for (const auto& [n, k] : known)
    if (n == name) return {k, std::string(n)};
  return {kOther, std::string(name)};
}

ReviewRecord parse_review_record(std::string_view line, size_t line_number,
                                 const Category& category) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    raise("ParseError", "line " + std::to_string(line_number) + ": malformed JSON");

  ReviewRecord r;
  r.category = category;
  r.reviewer_id = j.value("reviewerID", "");
  r.item_id = j.value("asin", "");
  r.summary = j.value("summary", "");
  r.unix_time = j.value("unixReviewTime", int64_t{0});

  if (!j.contains("reviewText") || !j["reviewText"].is_string())
    raise("MissingField", "line " + std::to_string(line_number) + ": reviewText");
  r.review_text = j["reviewText"].get<std::string>();

  if (j.contains("helpful")) {
    const json& h = j["helpful"];
    if (!h.is_array() || h.size() != 2 || !h[0].is_number() || !h[1].is_number())
      raise("InvalidVotes",
            "line " + std::to_string(line_number) + ": helpful must be [h, t]");
    r.helpful_votes = h[0].get<int64_t>();
    r.total_votes = h[1].get<int64_t>();
  }
  if (r.helpful_votes < 0 || r.total_votes < 0 || r.helpful_votes > r.total_votes)
    raise("InvalidVotes", "line " + std::to_string(line_number) + ": votes [" +
                              std::to_string(r.helpful_votes) + ", " +
                              std::to_string(r.total_votes) + "]");

  if (j.contains("overall")) {
    r.overall = j["overall"].get<double>();
    bool valid = false;
    for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) valid = valid || r.overall == v;
    if (!valid)
      raise("InvalidRating", "line " + std::to_string(line_number) + ": overall " +
                                 std::to_string(r.overall));
  }
  return r;
}

double helpfulness_ratio(int64_t helpful_votes, int64_t total_votes) {
  if (total_votes == 0)
    raise("UndefinedRatio", "zero total votes; route record to the unlabeled pool");
  return static_cast<double>(helpful_votes) / static_cast<double>(total_votes);
}

const char* outcome_name(FilterDecision::Outcome o) {
  switch (o) {
    case FilterDecision::Outcome::kAccept: return "accept";
    case FilterDecision::Outcome::kRejectTooFewVotes: return "reject_too_few_votes";
    case FilterDecision::Outcome::kRejectAmbiguousRatio: return "reject_ambiguous_ratio";
    case FilterDecision::Outcome::kRejectTooLong: return "reject_too_long";
    case FilterDecision::Outcome::kAcceptUnlabeledZeroVote: return "accept_unlabeled_zero_vote";
  }
  return "?";
}

FilterDecision assign_label(const ReviewRecord& record, size_t token_count,
                            const LabelConfig& cfg) {
  using O = FilterDecision::Outcome;
  if (token_count > static_cast<size_t>(cfg.max_len)) return {O::kRejectTooLong};
  if (record.total_votes == 0) return {O::kAcceptUnlabeledZeroVote};
  if (record.total_votes < cfg.min_votes) return {O::kRejectTooFewVotes};
  double ratio = helpfulness_ratio(record.helpful_votes, record.total_votes);
  if (ratio > cfg.helpful_min) return {O::kAccept, LabelValue::kHelpful};
  if (ratio < cfg.unhelpful_max) return {O::kAccept, LabelValue::kUnhelpful};
  return {O::kRejectAmbiguousRatio};
}

FilterDecision assign_label(const ReviewRecord& record, const LabelConfig& cfg) {
  return assign_label(record, tokenize(record.review_text, cfg.tokenizer).size(), cfg);
}

void RejectionTally::count(const FilterDecision& d) {
  using O = FilterDecision::Outcome;
  switch (d.outcome) {
    case O::kAccept:
      (d.label == LabelValue::kHelpful ? accepted_helpful : accepted_unhelpful)++;
      break;
    case O::kAcceptUnlabeledZeroVote: zero_vote++; break;
    case O::kRejectTooFewVotes: too_few_votes++; break;
    case O::kRejectAmbiguousRatio: ambiguous_ratio++; break;
    case O::kRejectTooLong: too_long++; break;
  }
}

RecordSource vector_source(const std::vector<ReviewRecord>& records) {
  auto pos = std::make_shared<size_t>(0);
  return [&records, pos](ReviewRecord& out) {
    if (*pos >= records.size()) return false;
    out = records[(*pos)++];
    return true;
  };
}

RecordSource jsonl_source(const std::string& path, const Category& category) {
  auto f = std::make_shared<std::ifstream>(path);
  if (!*f) raise("IoError", "cannot open " + path);
  auto line_no = std::make_shared<size_t>(0);
  return [f, line_no, category](ReviewRecord& out) {
    std::string line;
    while (std::getline(*f, line)) {
      ++*line_no;
      if (line.empty()) continue;
      out = parse_review_record(line, *line_no, category);
      return true;
    }
    return false;
  };
}

namespace {

// Algorithm R. Keeps a uniform sample of up to `capacity` items from a
// stream of unknown length in a single pass.
template <typename T>
class Reservoir {
 public:
  Reservoir(size_t capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {}

  void offer(T item) {
    ++seen_;
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else if (capacity_ > 0) {
      uint64_t j = rng_.next_below(seen_);
      if (j < capacity_) items_[j] = std::move(item);
    }
  }

  int64_t seen() const { return static_cast<int64_t>(seen_); }
  std::vector<T>& items() { return items_; }

 private:
  size_t capacity_;
  Rng rng_;
  std::vector<T> items_;
  uint64_t seen_ = 0;
};

LabeledExample make_example(const ReviewRecord& r, LabelValue label) {
  LabeledExample e;
  e.text = r.review_text;
  e.label = label;
  e.reviewer_id = r.reviewer_id;
  e.item_id = r.item_id;
  e.helpful_votes = r.helpful_votes;
  e.total_votes = r.total_votes;
  return e;
}

}  // namespace

LabeledDataset build_labeled_set(const RecordSource& source,
                                 size_t target_per_class, const LabelConfig& cfg,
                                 uint64_t seed) {
  Reservoir<LabeledExample> helpful(target_per_class, derive_seed(seed, "reservoir/helpful"));
  Reservoir<LabeledExample> unhelpful(target_per_class, derive_seed(seed, "reservoir/unhelpful"));

  LabeledDataset ds;
  bool saw_any = false;
  bool category_set = false;
  ReviewRecord r;
  while (source(r)) {
    saw_any = true;
    if (!category_set) {
      ds.category = r.category;
      category_set = true;
    }
    FilterDecision d = assign_label(r, cfg);
    ds.tally.count(d);
    if (d.outcome != FilterDecision::Outcome::kAccept) continue;
    (d.label == LabelValue::kHelpful ? helpful : unhelpful).offer(make_example(r, d.label));
  }
  if (!saw_any) raise("EmptyCorpus", "record stream is empty");

  size_t n_helpful = helpful.items().size();
  size_t n_unhelpful = unhelpful.items().size();
  size_t kept = std::min(n_helpful, n_unhelpful);
  if (kept < target_per_class) {
    ds.shortfall = true;
    ds.shortfall_note = "requested " + std::to_string(target_per_class) +
                        " per class, accepted " + std::to_string(n_helpful) +
                        " helpful / " + std::to_string(n_unhelpful) +
                        " unhelpful, kept " + std::to_string(kept) + " per class";
  }

  ds.examples.reserve(2 * kept);
  for (size_t i = 0; i < kept; ++i) ds.examples.push_back(std::move(helpful.items()[i]));
  for (size_t i = 0; i < kept; ++i) ds.examples.push_back(std::move(unhelpful.items()[i]));
  ds.helpful_count = static_cast<int64_t>(kept);
  ds.unhelpful_count = static_cast<int64_t>(kept);

  Rng shuffle_rng(derive_seed(seed, "shuffle/labeled"));
  shuffle_rng.shuffle(ds.examples);
  return ds;
}

UnlabeledPool build_unlabeled_pool(
    const RecordSource& source, size_t target, const LabelConfig& cfg, uint64_t seed,
    const std::set<std::pair<std::string, std::string>>* exclude_keys) {
  Reservoir<std::string> pool(target, derive_seed(seed, "reservoir/unlabeled"));
  UnlabeledPool out;
  bool saw_any = false;
  bool category_set = false;
  ReviewRecord r;
  while (source(r)) {
    saw_any = true;
    if (!category_set) {
      out.category = r.category;
      category_set = true;
    }
    if (r.total_votes != 0) continue;
    if (tokenize(r.review_text, cfg.tokenizer).size() > static_cast<size_t>(cfg.max_len))
      continue;
    if (exclude_keys && exclude_keys->count({r.reviewer_id, r.item_id})) continue;
    pool.offer(r.review_text);
  }
  if (!saw_any) raise("EmptyCorpus", "record stream is empty");

  if (pool.items().size() < target) {
    out.shortfall = true;
    out.shortfall_note = "requested " + std::to_string(target) + " unlabeled, found " +
                         std::to_string(pool.items().size());
  }
  out.texts = std::move(pool.items());
  Rng shuffle_rng(derive_seed(seed, "shuffle/unlabeled"));
  shuffle_rng.shuffle(out.texts);
  return out;
}

namespace {

int64_t round_half_up(double x) { return static_cast<int64_t>(std::floor(x + 0.5)); }

}  // namespace

DatasetSplits split_dataset(const LabeledDataset& ds, const SplitSpec& spec) {
  std::vector<size_t> helpful_idx, unhelpful_idx;
  for (size_t i = 0; i < ds.examples.size(); ++i)
    (ds.examples[i].label == LabelValue::kHelpful ? helpful_idx : unhelpful_idx).push_back(i);

  if (helpful_idx.size() < 10 || unhelpful_idx.size() < 10)
    raise("TooSmallToSplit", "need at least 10 examples per class, have " +
                                 std::to_string(helpful_idx.size()) + " helpful / " +
                                 std::to_string(unhelpful_idx.size()) + " unhelpful");

  Rng rng(derive_seed(spec.seed, "split"));
  rng.shuffle(helpful_idx);
  rng.shuffle(unhelpful_idx);

  DatasetSplits out;
  for (LabeledDataset* part : {&out.train, &out.validation, &out.test})
    part->category = ds.category;

  auto deal = [&](const std::vector<size_t>& idx) {
    int64_t n = static_cast<int64_t>(idx.size());
    int64_t n_test = round_half_up(static_cast<double>(n) * spec.test_frac);
    int64_t n_val = round_half_up(static_cast<double>(n - n_test) * spec.val_frac_of_train);
    for (int64_t i = 0; i < n; ++i) {
      const LabeledExample& e = ds.examples[idx[i]];
      LabeledDataset* part = i < n_test             ? &out.test
                             : i < n_test + n_val   ? &out.validation
                                                    : &out.train;
      part->examples.push_back(e);
      (e.label == LabelValue::kHelpful ? part->helpful_count : part->unhelpful_count)++;
    }
  };
  deal(helpful_idx);
  deal(unhelpful_idx);

  // Interleaved class blocks would leak the label through position; reshuffle
  // each part deterministically.
  int part_no = 0;
  for (LabeledDataset* part : {&out.train, &out.validation, &out.test}) {
    Rng part_rng(derive_seed(spec.seed, "split/part" + std::to_string(part_no++)));
    part_rng.shuffle(part->examples);
  }
  return out;
}

const char* VotingDistributionReport::bin_label(int b) {
  static const char* labels[kBins] = {"0", "1-5", "6-10", "11-50", "51-100", ">100"};
  return labels[b];
}

int VotingDistributionReport::bin_of(int64_t total_votes) {
  if (total_votes == 0) return 0;
  if (total_votes <= 5) return 1;
  if (total_votes <= 10) return 2;
  if (total_votes <= 50) return 3;
  if (total_votes <= 100) return 4;
  return 5;
}

double VotingDistributionReport::percentage(int b) const {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(counts[b]) / static_cast<double>(total);
}

VotingDistributionReport corpus_stats(const RecordSource& source) {
  VotingDistributionReport rep;
  ReviewRecord r;
  while (source(r)) {
    ++rep.counts[VotingDistributionReport::bin_of(r.total_votes)];
    ++rep.total;
  }
  return rep;
}

void write_labeled_jsonl(const std::string& path,
                         const std::vector<LabeledExample>& examples,
                         const Category& category) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise("IoError", "cannot write " + path);
  for (const LabeledExample& e : examples) {
    json j = {{"text", e.text},
              {"label", label_name(e.label)},
              {"category", category.name},
              {"source_votes", {e.helpful_votes, e.total_votes}}};
    f << j.dump() << "\n";
  }
}

std::vector<LabeledExample> read_labeled_jsonl(const std::string& path,
                                               Category* category_out) {
  std::ifstream f(path);
  if (!f) raise("IoError", "cannot open " + path);
  std::vector<LabeledExample> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      raise("ParseError", path + ":" + std::to_string(line_no) + ": malformed JSON");
    LabeledExample e;
    e.text = j.at("text").get<std::string>();
    std::string label = j.at("label").get<std::string>();
    if (label == "helpful") e.label = LabelValue::kHelpful;
    else if (label == "unhelpful") e.label = LabelValue::kUnhelpful;
    else raise("ParseError", path + ":" + std::to_string(line_no) + ": bad label " + label);
    if (j.contains("source_votes")) {
      e.helpful_votes = j["source_votes"][0].get<int64_t>();
      e.total_votes = j["source_votes"][1].get<int64_t>();
    }
    if (category_out) *category_out = Category::parse(j.value("category", ""));
    out.push_back(std::move(e));
  }
  return out;
}

void write_unlabeled_jsonl(const std::string& path, const UnlabeledPool& pool) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise("IoError", "cannot write " + path);
  for (const std::string& text : pool.texts) {
    json j = {{"text", text}, {"category", pool.category.name}};
    f << j.dump() << "\n";
  }
}

std::vector<std::string> read_unlabeled_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise("IoError", "cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      raise("ParseError", path + ":" + std::to_string(line_no) + ": malformed JSON");
    out.push_back(j.at("text").get<std::string>());
  }
  return out;
}

}  // namespace helprank
