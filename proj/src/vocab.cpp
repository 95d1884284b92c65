#include "concept_lens/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <regex>
#include <unordered_map>

#include "concept_lens/errors.hpp"
#include "concept_lens/random.hpp"

namespace concept_lens {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Minimal CSV field splitter with double-quote support.
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line: " + line);
  fields.push_back(cur);
  return fields;
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

bool by_count_then_tag(const TagCount& a, const TagCount& b) {
  if (a.count != b.count) return a.count > b.count;
  return a.tag < b.tag;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y'; }

bool has_vowel(const std::string& s) { return std::any_of(s.begin(), s.end(), is_vowel); }

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

void TagFrequencyTable::validate() const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.tag.empty()) throw ValidationError("empty tag in frequency table");
    if (e.count == 0) throw ValidationError("tag count must be positive: " + e.tag);
    if (!seen.insert(e.tag).second) throw ValidationError("duplicate tag in frequency table: " + e.tag);
  }
}

std::vector<TagCount> TagFrequencyTable::sorted() const {
  std::vector<TagCount> out = entries;
  std::sort(out.begin(), out.end(), by_count_then_tag);
  return out;
}

TagFrequencyTable read_tag_table(const fs::path& file) {
  TagFrequencyTable table;
  const auto lines = read_lines(file);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto fields = split_csv_line(lines[i]);
    if (fields.size() != 2) throw FormatError(file.string() + ":" + std::to_string(i + 1) + ": expected tag,count");
    const std::string tag = trim(fields[0]);
    const std::string count = trim(fields[1]);
    if (table.entries.empty() && tag == "tag" && count == "count") continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(count, &used);
      if (used != count.size() || v <= 0) throw std::invalid_argument("count");
      table.entries.push_back({tag, static_cast<std::uint64_t>(v)});
    } catch (const std::exception&) {
      throw FormatError(file.string() + ":" + std::to_string(i + 1) + ": count must be a positive integer");
    }
  }
  table.validate();
  return table;
}

std::set<std::string> read_word_set(const fs::path& file) {
  std::set<std::string> words;
  for (const auto& line : read_lines(file)) {
    auto w = trim(line);
    if (!w.empty()) words.insert(std::move(w));
  }
  return words;
}

SynonymGroups read_synonym_groups(const fs::path& file) {
  SynonymGroups groups;
  for (const auto& line : read_lines(file)) {
    if (trim(line).empty()) continue;
    std::set<std::string> group;
    for (const auto& f : split_csv_line(line)) {
      auto w = trim(f);
      if (!w.empty()) group.insert(std::move(w));
    }
    if (!group.empty()) groups.push_back(std::move(group));
  }
  return groups;
}

void write_synonym_groups(const SynonymGroups& groups, const fs::path& file) {
  std::string text;
  for (const auto& g : groups) {
    bool first = true;
    for (const auto& w : g) {
      if (!first) text += ',';
      text += w;
      first = false;
    }
    text += '\n';
  }
  write_text_file(file, text);
}

std::string stem(const std::string& word) {
  std::string base = word;
  auto strip = [&](std::size_t n) {
    const std::string candidate = word.substr(0, word.size() - n);
    if (candidate.size() >= 3 && has_vowel(candidate)) {
      base = candidate;
      return true;
    }
    return false;
  };
  bool stripped = false;
  if (ends_with(word, "ing")) {
    stripped = strip(3);
  } else if (ends_with(word, "ed")) {
    stripped = strip(2);
  } else if (ends_with(word, "sses") || ends_with(word, "xes") || ends_with(word, "zes") ||
             ends_with(word, "ches") || ends_with(word, "shes") || ends_with(word, "ses")) {
    stripped = strip(2);
  } else if (ends_with(word, "s") && !ends_with(word, "ss") && !ends_with(word, "us") && !ends_with(word, "is")) {
    stripped = strip(1);
  }
  if (stripped && base.size() >= 2) {
    const char last = base.back();
    if (last == base[base.size() - 2] && !is_vowel(last) && last != 'l' && last != 's' && last != 'z') {
      base.pop_back();
    }
  }
  // "rattle" and "rattling" share "rattl".
  if (base.size() > 3 && base.back() == 'e') base.pop_back();
  return base;
}

SynonymGroups propose_stem_groups(const std::vector<std::string>& tags) {
  std::vector<std::string> order;
  std::map<std::string, std::set<std::string>> by_stem;
  for (const auto& t : tags) {
    const std::string s = stem(t);
    auto [it, inserted] = by_stem.try_emplace(s);
    if (inserted) order.push_back(s);
    it->second.insert(t);
  }
  SynonymGroups groups;
  for (const auto& s : order) {
    if (by_stem[s].size() >= 2) groups.push_back(by_stem[s]);
  }
  return groups;
}

bool is_single_letter(const std::string& tag) {
  std::size_t code_points = 0;
  for (unsigned char ch : tag) {
    if ((ch & 0xC0) != 0x80) ++code_points;
  }
  return code_points == 1;
}

bool is_numeric(const std::string& tag) {
  static const std::regex numeric("[0-9]+([.,:/-][0-9]+)*");
  return std::regex_match(tag, numeric);
}

std::vector<std::string> build_baseline(const TagFrequencyTable& table, const std::set<std::string>& blocklist,
                                        std::size_t size, const std::optional<std::set<std::string>>& wordlist) {
  table.validate();
  if (table.entries.empty()) throw ValidationError("empty tag frequency table");
  if (size == 0) throw ValidationError("vocabulary size must be >= 1");
  std::vector<std::string> out;
  for (const auto& e : table.sorted()) {
    if (blocklist.count(e.tag)) continue;
    if (wordlist && !wordlist->count(e.tag)) continue;
    out.push_back(e.tag);
    if (out.size() == size) return out;
  }
  throw ValidationError("insufficient surviving tags: requested " + std::to_string(size) + ", have " +
                        std::to_string(out.size()));
}

std::vector<PrunedConcept> build_pruned_with_counts(const TagFrequencyTable& table, const SynonymGroups& groups,
                                                    std::size_t size, std::size_t pool,
                                                    const PrunedOptions& options) {
  table.validate();
  if (table.entries.empty()) throw ValidationError("empty tag frequency table");
  if (size == 0) throw ValidationError("vocabulary size must be >= 1");
  if (pool < size) throw ValidationError("pool must be >= size");

  auto sorted = table.sorted();
  if (sorted.size() > pool) sorted.resize(pool);

  std::vector<TagCount> kept;
  for (auto& e : sorted) {
    if (is_single_letter(e.tag) || is_numeric(e.tag)) continue;
    if (options.blocklist.count(e.tag)) continue;
    if (options.wordlist && !options.wordlist->count(e.tag)) continue;
    kept.push_back(e);
  }

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < kept.size(); ++i) position.emplace(kept[i].tag, i);
  UnionFind uf(kept.size());
  for (const auto& group : groups) {
    std::optional<std::size_t> anchor;
    for (const auto& member : group) {
      auto it = position.find(member);
      if (it == position.end()) continue;
      if (anchor) uf.unite(*anchor, it->second);
      else anchor = it->second;
    }
  }

  // `kept` is in (count desc, tag asc) order, so the first member seen for a
  // root is its most frequent member.
  std::map<std::size_t, PrunedConcept> merged;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    auto [it, inserted] = merged.try_emplace(uf.find(i), PrunedConcept{kept[i].tag, 0});
    it->second.count += kept[i].count;
  }
  std::vector<PrunedConcept> reps;
  reps.reserve(merged.size());
  for (auto& [root, c] : merged) reps.push_back(std::move(c));
  std::sort(reps.begin(), reps.end(), [](const PrunedConcept& a, const PrunedConcept& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.tag < b.tag;
  });
  if (reps.size() < size) {
    throw ValidationError("insufficient surviving concepts: requested " + std::to_string(size) + ", have " +
                          std::to_string(reps.size()));
  }
  reps.resize(size);
  return reps;
}

std::vector<std::string> build_pruned(const TagFrequencyTable& table, const SynonymGroups& groups, std::size_t size,
                                      std::size_t pool, const PrunedOptions& options) {
  std::vector<std::string> out;
  for (auto& c : build_pruned_with_counts(table, groups, size, pool, options)) out.push_back(std::move(c.tag));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Nearest centroid per point (ties go to the lowest centroid index).
std::vector<std::size_t> assign_points(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids) {
  const Eigen::Index n = points.rows();
  const Eigen::Index k = centroids.rows();
  std::vector<std::size_t> assignment(static_cast<std::size_t>(n));
  const Eigen::VectorXd centroid_sq = centroids.rowwise().squaredNorm();
  constexpr Eigen::Index kBlock = 512;
  for (Eigen::Index start = 0; start < n; start += kBlock) {
    const Eigen::Index rows = std::min(kBlock, n - start);
    // ||x||^2 is constant per row, so argmin over ||c||^2 - 2 x.c suffices for
    // a first pass; exact distances break near-ties below.
    const Eigen::MatrixXd cross = points.middleRows(start, rows) * centroids.transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Eigen::Index i = start + r;
      double best = std::numeric_limits<double>::infinity();
      Eigen::Index best_j = 0;
      for (Eigen::Index j = 0; j < k; ++j) {
        const double score = centroid_sq[j] - 2.0 * cross(r, j);
        if (score < best) {
          best = score;
          best_j = j;
        }
      }
      // Re-check candidates within rounding distance with exact arithmetic.
      const double slack = 1e-9 * (1.0 + std::abs(best) + points.row(i).squaredNorm());
      double best_exact = (points.row(i) - centroids.row(best_j)).squaredNorm();
      for (Eigen::Index j = 0; j < k; ++j) {
        if (j == best_j) continue;
        if (centroid_sq[j] - 2.0 * cross(r, j) <= best + slack) {
          const double exact = (points.row(i) - centroids.row(j)).squaredNorm();
          if (exact < best_exact || (exact == best_exact && j < best_j)) {
            best_exact = exact;
            best_j = j;
          }
        }
      }
      assignment[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best_j);
    }
  }
  return assignment;
}

double inertia_of(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                  const std::vector<std::size_t>& assignment) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    total += (points.row(i) - centroids.row(static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)])))
                 .squaredNorm();
  }
  return total;
}

Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& points, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  Eigen::MatrixXd centroids(static_cast<Eigen::Index>(k), points.cols());
  std::vector<bool> chosen(n, false);
  std::size_t first = uniform_index(rng, n);
  centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
  chosen[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (points.row(static_cast<Eigen::Index>(i)) - centroids.row(0)).squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = uniform_real(rng, 0.0, total);
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && target < acc) {
          pick = i;
          break;
        }
      }
      if (pick == n) {  // rounding at the upper end
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen[pick] = true;
    centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i],
                       (points.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(c))).squaredNorm());
    }
  }
  return centroids;
}

// Recomputes centroids as member means; empty clusters take the point farthest
// from its current centroid.
void update_centroids(const Eigen::MatrixXd& points, const std::vector<std::size_t>& assignment,
                      Eigen::MatrixXd& centroids) {
  const Eigen::Index k = centroids.rows();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const auto a = assignment[static_cast<std::size_t>(i)];
    sums.row(static_cast<Eigen::Index>(a)) += points.row(i);
    ++counts[a];
  }
  std::vector<double> dist(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    dist[static_cast<std::size_t>(i)] =
        (points.row(i) - centroids.row(static_cast<Eigen::Index>(assignment[static_cast<std::size_t>(i)]))).squaredNorm();
  }
  for (Eigen::Index j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] > 0) {
      centroids.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);
      continue;
    }
    std::size_t far = 0;
    for (std::size_t i = 1; i < dist.size(); ++i) {
      if (dist[i] > dist[far]) far = i;
    }
    centroids.row(j) = points.row(static_cast<Eigen::Index>(far));
    dist[far] = -1.0;  // not reused by another empty cluster this round
  }
}

}  // namespace

KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, int max_iters) {
  if (k == 0) throw ValidationError("k must be >= 1");
  if (static_cast<std::size_t>(points.rows()) < k) {
    throw ValidationError("k-means needs at least k points: k=" + std::to_string(k) + ", n=" +
                          std::to_string(points.rows()));
  }
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!points.allFinite()) throw ValidationError("k-means input has non-finite values");

  Rng rng(seed);
  KMeansResult result;
  result.centroids = kmeanspp_init(points, k, rng);
  for (int it = 1;; ++it) {
    auto assignment = assign_points(points, result.centroids);
    const double inertia = inertia_of(points, result.centroids, assignment);
    result.inertia_trace.push_back(inertia);
    result.iterations = it;
    const bool stable = it > 1 && assignment == result.assignments;
    result.assignments = std::move(assignment);
    result.inertia = inertia;
    if (stable || it >= max_iters) break;
    update_centroids(points, result.assignments, result.centroids);
  }
  return result;
}

std::vector<std::string> build_clustered(const EmbeddingSet& pool, std::size_t k, std::uint64_t seed, int max_iters) {
  if (!pool.normalized()) throw ValidationError("clustered vocabulary requires normalized pool embeddings");
  if (k == 0 || k > pool.count()) {
    throw ValidationError("k must be in [1, pool size]: k=" + std::to_string(k) + ", pool=" +
                          std::to_string(pool.count()));
  }
  const Eigen::MatrixXd points = pool.matrix().cast<double>();
  const KMeansResult km = kmeans(points, k, seed, max_iters);

  std::vector<std::string> out;
  std::vector<bool> used(pool.count(), false);
  for (std::size_t c = 0; c < k; ++c) {
    const auto centroid = km.centroids.row(static_cast<Eigen::Index>(c));
    std::size_t best = pool.count();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pool.count(); ++i) {
      if (km.assignments[i] != c || used[i]) continue;
      const double d = (points.row(static_cast<Eigen::Index>(i)) - centroid).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    if (best == pool.count()) {
      // Empty cluster (only possible with duplicate embeddings): nearest unused point.
      for (std::size_t i = 0; i < pool.count(); ++i) {
        if (used[i]) continue;
        const double d = (points.row(static_cast<Eigen::Index>(i)) - centroid).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
    }
    used[best] = true;
    out.push_back(pool.id(best));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string to_string(Construction c) {
  switch (c) {
    case Construction::baseline: return "baseline";
    case Construction::pruned: return "pruned";
    case Construction::clustered: return "clustered";
  }
  return "baseline";
}

Construction construction_from_string(const std::string& s) {
  if (s == "baseline") return Construction::baseline;
  if (s == "pruned") return Construction::pruned;
  if (s == "clustered") return Construction::clustered;
  throw ValidationError("unknown vocabulary construction: " + s);
}

void ConceptVocabulary::validate() const {
  if (vocabulary_id.empty()) throw ValidationError("vocabulary id must not be empty");
  if (concepts.empty()) throw ValidationError("vocabulary has no concepts");
  if (embeddings.ids() != concepts) throw ValidationError("vocabulary embeddings do not match concept order");
  if (!embeddings.normalized()) throw ValidationError("vocabulary embeddings must be normalized");
}

ConceptVocabulary make_vocabulary(std::string vocabulary_id, const std::vector<std::string>& concepts,
                                  const EmbeddingSet& text_embeddings, Construction construction) {
  std::vector<std::size_t> rows;
  rows.reserve(concepts.size());
  for (const auto& c : concepts) {
    auto idx = text_embeddings.index_of(c);
    if (!idx) throw ValidationError("concept has no text embedding: " + c);
    rows.push_back(*idx);
  }
  EmbeddingSet selected = l2_normalize(text_embeddings.select(rows));
  selected.set_extra({{"vocabulary_id", vocabulary_id}, {"construction", to_string(construction)}});
  ConceptVocabulary vocab{std::move(vocabulary_id), concepts, std::move(selected), construction};
  vocab.validate();
  return vocab;
}

void write_concept_list(const std::vector<std::string>& concepts, const fs::path& file) {
  std::string text;
  for (const auto& c : concepts) text += c + "\n";
  write_text_file(file, text);
}

std::vector<std::string> read_concept_list(const fs::path& file) {
  std::vector<std::string> out;
  for (auto& line : read_lines(file)) {
    if (!line.empty()) out.push_back(std::move(line));
  }
  return out;
}

void write_vocabulary(const ConceptVocabulary& vocab, const fs::path& dir) {
  vocab.validate();
  EmbeddingSet store = vocab.embeddings;
  store.set_extra({{"vocabulary_id", vocab.vocabulary_id}, {"construction", to_string(vocab.construction)}});
  write_embedding_set(store, dir);
  write_concept_list(vocab.concepts, dir / "concepts.txt");
}

ConceptVocabulary read_vocabulary(const fs::path& dir) {
  EmbeddingSet store = read_embedding_set(dir);
  std::vector<std::string> concepts =
      fs::exists(dir / "concepts.txt") ? read_concept_list(dir / "concepts.txt") : store.ids();
  const auto& extra = store.extra();
  fs::path normal = fs::absolute(dir).lexically_normal();
  if (normal.filename().empty()) normal = normal.parent_path();
  std::string id = extra.contains("vocabulary_id") ? extra.at("vocabulary_id").get<std::string>()
                                                   : normal.filename().string();
  if (id.empty()) id = "vocabulary";
  Construction construction = extra.contains("construction")
                                  ? construction_from_string(extra.at("construction").get<std::string>())
                                  : Construction::baseline;
  if (!store.normalized()) store = l2_normalize(store);
  ConceptVocabulary vocab{std::move(id), std::move(concepts), std::move(store), construction};
  vocab.validate();
  return vocab;
}

}  // namespace concept_lens
