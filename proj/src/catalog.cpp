#include "splitmetric/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "splitmetric/error.hpp"

namespace splitmetric {
namespace {

constexpr const char* kHeader = "image_id,branch_id,chain_id,content_key";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::optional<std::string> non_empty(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return s;
}

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    // smaller index wins so the root is the lexicographically smallest id
    if (a < b) parent_[b] = a;
    else if (b < a) parent_[a] = b;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

Catalog::Catalog(std::vector<ImageRecord> records) : records_(std::move(records)) {
  position_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.image_id.empty()) throw Error("catalog: empty image_id at record " + std::to_string(i));
    if (r.branch_id.empty()) throw Error("catalog: empty branch_id for image " + r.image_id);
    if (!position_.emplace(r.image_id, i).second) {
      throw Error("catalog: duplicate image_id '" + r.image_id + "'");
    }
    auto [it, inserted] = branch_chain_.emplace(r.branch_id, r.chain_id);
    if (!inserted && it->second != r.chain_id) {
      throw Error("catalog: branch '" + r.branch_id + "' has conflicting chain_ids");
    }
    branch_index_[r.branch_id].push_back(r.image_id);
  }
  for (const auto& [branch, chain] : branch_chain_) {
    if (chain) {
      chain_index_[*chain].push_back(branch);
    } else {
      unknown_branches_.insert(branch);
    }
  }
}

const ImageRecord& Catalog::record(const std::string& image_id) const {
  auto it = position_.find(image_id);
  if (it == position_.end()) throw Error("catalog: unknown image_id '" + image_id + "'");
  return records_[it->second];
}

bool Catalog::contains(const std::string& image_id) const {
  return position_.contains(image_id);
}

const std::optional<std::string>& Catalog::chain_of_branch(const std::string& branch_id) const {
  auto it = branch_chain_.find(branch_id);
  if (it == branch_chain_.end()) throw Error("catalog: unknown branch_id '" + branch_id + "'");
  return it->second;
}

std::size_t Catalog::branch_size(const std::string& branch_id) const {
  auto it = branch_index_.find(branch_id);
  return it == branch_index_.end() ? 0 : it->second.size();
}

Catalog parse_catalog(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) return Catalog{};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split_fields(line);
  const std::vector<std::string> expected = split_fields(kHeader);
  if (header.size() < 2 || header.size() > expected.size() ||
      !std::equal(header.begin(), header.end(), expected.begin())) {
    throw Error("catalog: bad header '" + line + "', expected '" + kHeader + "'");
  }

  std::vector<ImageRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() < 2 || fields.size() > expected.size()) {
      throw Error("catalog: line " + std::to_string(line_no) + " has " +
                  std::to_string(fields.size()) + " fields");
    }
    fields.resize(expected.size());
    records.push_back(ImageRecord{fields[0], fields[1], non_empty(fields[2]),
                                  non_empty(fields[3]), std::nullopt});
  }
  return Catalog(std::move(records));
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("catalog: cannot open '" + path.string() + "'");
  return parse_catalog(in);
}

void write_catalog(const Catalog& catalog, std::ostream& out) {
  out << kHeader << '\n';
  for (const auto& r : catalog.records()) {
    out << r.image_id << ',' << r.branch_id << ',' << r.chain_id.value_or("") << ','
        << r.content_key.value_or("") << '\n';
  }
}

void save_catalog(const Catalog& catalog, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("catalog: cannot write '" + path.string() + "'");
  write_catalog(catalog, out);
}

DedupResult dedup_merge(const Catalog& catalog) {
  const auto& branch_index = catalog.branch_index();
  std::vector<std::string> branches;
  std::map<std::string, std::size_t> branch_pos;
  for (const auto& [b, _] : branch_index) {
    branch_pos.emplace(b, branches.size());
    branches.push_back(b);
  }

  // content_key -> branches holding it
  std::map<std::string, std::set<std::size_t>> key_branches;
  for (const auto& r : catalog.records()) {
    if (r.content_key) key_branches[*r.content_key].insert(branch_pos.at(r.branch_id));
  }

  DisjointSets sets(branches.size());
  for (const auto& [key, holders] : key_branches) {
    for (auto it = std::next(holders.begin()); it != holders.end(); ++it) {
      sets.unite(*holders.begin(), *it);
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> components;
  for (std::size_t i = 0; i < branches.size(); ++i) components[sets.find(i)].push_back(i);

  DedupReport report;
  // original branch -> merge target, for merged groups only
  std::map<std::string, std::string> target;
  std::map<std::string, std::optional<std::string>> target_chain;
  for (const auto& [root, members] : components) {
    if (members.size() < 2) continue;
    std::set<std::string> known_chains;
    std::vector<std::string> names;
    for (std::size_t m : members) {
      names.push_back(branches[m]);
      if (const auto& c = catalog.chain_of_branch(branches[m])) known_chains.insert(*c);
    }
    if (known_chains.size() > 1) {
      report.skipped.push_back({names, {known_chains.begin(), known_chains.end()}});
      continue;
    }
    const std::string& into = branches[root];
    for (const auto& n : names) target.emplace(n, into);
    target_chain.emplace(into, known_chains.empty()
                                   ? std::nullopt
                                   : std::optional<std::string>(*known_chains.begin()));
    report.merged_groups.push_back(std::move(names));
  }

  // Within each merged branch keep the smallest image id per content_key.
  std::map<std::pair<std::string, std::string>, std::string> keeper;
  for (const auto& r : catalog.records()) {
    auto t = target.find(r.branch_id);
    if (t == target.end() || !r.content_key) continue;
    auto [it, inserted] = keeper.emplace(std::make_pair(t->second, *r.content_key), r.image_id);
    if (!inserted && r.image_id < it->second) it->second = r.image_id;
  }

  std::vector<ImageRecord> out;
  out.reserve(catalog.size());
  for (const auto& r : catalog.records()) {
    auto t = target.find(r.branch_id);
    if (t == target.end()) {
      out.push_back(r);
      continue;
    }
    if (r.content_key && keeper.at({t->second, *r.content_key}) != r.image_id) {
      report.dropped.push_back(r.image_id);
      continue;
    }
    ImageRecord merged = r;
    merged.branch_id = t->second;
    merged.chain_id = target_chain.at(t->second);
    out.push_back(std::move(merged));
  }
  std::sort(report.dropped.begin(), report.dropped.end());
  return {Catalog(std::move(out)), std::move(report)};
}

CatalogStats stats(const Catalog& catalog) {
  CatalogStats s;
  s.images = catalog.size();
  s.branches = catalog.branch_index().size();
  s.chains = catalog.chain_index().size();
  s.unknown_branches = catalog.unknown_branches().size();
  for (const auto& [b, ids] : catalog.branch_index()) {
    s.branch_sizes.emplace(b, ids.size());
    ++s.size_histogram[ids.size()];
  }
  return s;
}

nlohmann::json to_json(const DedupReport& report) {
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : report.skipped) {
    skipped.push_back({{"branches", s.branches}, {"chains", s.chains}});
  }
  return {{"merged_groups", report.merged_groups},
          {"dropped", report.dropped},
          {"skipped", skipped}};
}

nlohmann::json to_json(const CatalogStats& s) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [size, count] : s.size_histogram) hist[std::to_string(size)] = count;
  return {{"images", s.images},
          {"branches", s.branches},
          {"chains", s.chains},
          {"unknown_branches", s.unknown_branches},
          {"branch_sizes", s.branch_sizes},
          {"size_histogram", hist}};
}

}  // namespace splitmetric
