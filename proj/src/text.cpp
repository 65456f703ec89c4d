#include "helprank/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace helprank {

namespace {

bool is_token_byte(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;
}

// Replaces <...> tags and &name;/&#digits; entities with spaces. Every
// character an entity could decode to would separate tokens anyway, so
// decoding and blanking are equivalent here.
std::string blank_html(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == '<') {
      size_t close = text.find('>', i + 1);
      if (close != std::string_view::npos) {
        out.push_back(' ');
        i = close + 1;
        continue;
      }
    } else if (c == '&') {
      size_t j = i + 1;
      if (j < text.size() && text[j] == '#') {
        ++j;
        size_t start = j;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        if (j > start && j < text.size() && text[j] == ';') {
          out.push_back(' ');
          i = j + 1;
          continue;
        }
      } else {
        size_t start = j;
        while (j < text.size() && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
        if (j > start && j < text.size() && text[j] == ';') {
          out.push_back(' ');
          i = j + 1;
          continue;
        }
      }
    }
    out.push_back(c);
    ++i;
  }
  return out;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& cfg) {
  std::string buf;
  if (cfg.strip_html) {
    buf = blank_html(text);
    text = buf;
  }
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (is_token_byte(c)) {
      if (cfg.lowercase && c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c + 32);
      cur.push_back(static_cast<char>(c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

Vocabulary Vocabulary::from_counts(
    const std::unordered_map<std::string, int64_t>& counts, int64_t min_count) {
  if (counts.empty()) raise("EmptyCorpus", "no tokens to build a vocabulary from");
  std::vector<std::pair<std::string, int64_t>> kept;
  kept.reserve(counts.size());
  for (const auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.min_count_ = min_count;
  v.tokens_ = {"<pad>", "<unk>"};
  v.counts_ = {0, 0};
  for (auto& [tok, n] : kept) {
    v.index_[tok] = static_cast<int32_t>(v.tokens_.size());
    v.tokens_.push_back(tok);
    v.counts_.push_back(n);
    v.total_count_ += n;
  }
  v.index_["<pad>"] = kPad;
  v.index_["<unk>"] = kUnk;
  return v;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& docs,
                             int64_t min_count) {
  std::unordered_map<std::string, int64_t> counts;
  for (const auto& doc : docs)
    for (const auto& tok : doc) ++counts[tok];
  return from_counts(counts, min_count);
}

int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

int32_t Vocabulary::find(std::string_view token) const {
  auto it = index_.find(token);
  return it == index_.end() ? -1 : it->second;
}

uint64_t Vocabulary::checksum() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const std::string& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    h ^= '\n';
    h *= 0x100000001b3ull;
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise("IoError", "cannot write " + path);
  f << "#helprank-vocab\tmin_count=" << min_count_ << "\tpad=<pad>\tunk=<unk>\n";
  for (size_t i = 0; i < tokens_.size(); ++i)
    f << tokens_[i] << "\t" << i << "\t" << counts_[i] << "\n";
  if (!f) raise("IoError", "short write to " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise("IoError", "cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("#helprank-vocab", 0) != 0)
    raise("ParseError", path + ": not a vocabulary file");
  Vocabulary v;
  size_t mc = line.find("min_count=");
  if (mc != std::string::npos) v.min_count_ = std::stoll(line.substr(mc + 10));
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      raise("ParseError", path + ":" + std::to_string(line_no) + ": bad vocab line");
    std::string tok = line.substr(0, t1);
    int32_t id = static_cast<int32_t>(std::stol(line.substr(t1 + 1, t2 - t1 - 1)));
    int64_t count = std::stoll(line.substr(t2 + 1));
    if (id != static_cast<int32_t>(v.tokens_.size()))
      raise("ParseError", path + ":" + std::to_string(line_no) + ": ids not dense");
    v.tokens_.push_back(tok);
    v.counts_.push_back(count);
    v.index_[tok] = id;
    if (id > kUnk) v.total_count_ += count;
  }
  if (v.tokens_.size() < 2 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>")
    raise("ParseError", path + ": specials missing");
  return v;
}

std::vector<uint32_t> SubwordHasher::ngram_ids(std::string_view word) const {
  std::string bracketed = "<" + std::string(word) + ">";
  // Code point start offsets (UTF-8 continuation bytes are 10xxxxxx).
  std::vector<size_t> starts;
  for (size_t i = 0; i < bracketed.size(); ++i)
    if ((static_cast<unsigned char>(bracketed[i]) & 0xc0) != 0x80) starts.push_back(i);
  starts.push_back(bracketed.size());
  size_t n_chars = starts.size() - 1;

  std::vector<uint32_t> ids;
  auto push = [&](size_t from, size_t to) {
    std::string_view gram(bracketed.data() + starts[from], starts[to] - starts[from]);
    ids.push_back(fnv1a32(gram) % bucket_count);
  };
  for (size_t n = static_cast<size_t>(n_min);
       n <= static_cast<size_t>(n_max) && n <= n_chars; ++n)
    for (size_t pos = 0; pos + n <= n_chars; ++pos) push(pos, pos + n);
  if (n_chars > static_cast<size_t>(n_max)) push(0, n_chars);
  return ids;
}

EncodedSequence encode(const std::vector<std::string>& tokens,
                       const Vocabulary& vocab, int32_t max_len) {
  EncodedSequence seq;
  size_t n = std::min(tokens.size(), static_cast<size_t>(max_len));
  seq.ids.reserve(n);
  for (size_t i = 0; i < n; ++i) seq.ids.push_back(vocab.id(tokens[i]));
  seq.length = static_cast<int32_t>(n);
  return seq;
}

IdfTable IdfTable::fit(const std::vector<std::vector<std::string>>& docs,
                       const Vocabulary& vocab) {
  IdfTable t;
  t.df_.assign(vocab.size(), 0);
  t.n_docs_ = static_cast<int64_t>(docs.size());
  std::vector<int32_t> seen;
  for (const auto& doc : docs) {
    seen.clear();
    for (const auto& tok : doc) {
      int32_t id = vocab.find(tok);
      if (id >= 0) seen.push_back(id);
    }
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (int32_t id : seen) ++t.df_[id];
  }
  return t;
}

double IdfTable::idf(int32_t id) const {
  int64_t df = (id >= 0 && id < static_cast<int32_t>(df_.size())) ? df_[id] : 0;
  return std::log((1.0 + static_cast<double>(n_docs_)) / (1.0 + static_cast<double>(df))) + 1.0;
}

void IdfTable::save(const std::string& path, const Vocabulary& vocab) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) raise("IoError", "cannot write " + path);
  f << "#helprank-idf\tn_docs=" << n_docs_ << "\n";
  for (int32_t id = 0; id < static_cast<int32_t>(df_.size()); ++id)
    f << vocab.token(id) << "\t" << id << "\t" << df_[id] << "\n";
}

IdfTable IdfTable::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) raise("IoError", "cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("#helprank-idf", 0) != 0)
    raise("ParseError", path + ": not an idf file");
  IdfTable t;
  size_t nd = line.find("n_docs=");
  if (nd == std::string::npos) raise("ParseError", path + ": missing n_docs");
  t.n_docs_ = std::stoll(line.substr(nd + 7));
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    size_t t2 = line.rfind('\t');
    t.df_.push_back(std::stoll(line.substr(t2 + 1)));
  }
  return t;
}

SparseVec tfidf_vector(const std::vector<std::string>& tokens,
                       const Vocabulary& vocab, const IdfTable& idf) {
  SparseVec out;
  if (tokens.empty()) return out;
  std::map<int32_t, int64_t> counts;
  for (const auto& tok : tokens) {
    int32_t id = vocab.find(tok);
    if (id >= 0) ++counts[id];
  }
  double doc_len = static_cast<double>(tokens.size());
  double norm_sq = 0.0;
  for (const auto& [id, n] : counts) {
    double w = (static_cast<double>(n) / doc_len) * idf.idf(id);
    out.emplace_back(id, static_cast<float>(w));
    norm_sq += w * w;
  }
  if (norm_sq > 0.0) {
    float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
    for (auto& [id, w] : out) w *= inv;
  }
  return out;
}

}  // namespace helprank
