#include "splitmetric/splitgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "splitmetric/error.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {
namespace {

constexpr std::array<std::string_view, 8> kNames = {
    "train", "val_ss", "val_su", "val_uu", "test_ss", "test_su", "test_uu", "test_unk"};

// ceil(fraction * n) without picking up rounding noise such as 0.1 * 30.
std::size_t fraction_of(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

using Set = std::set<std::string>;

bool contains(const Set& s, const std::string& x) { return s.find(x) != s.end(); }

// Draws up to `target` branches from `pool` (sorted) while every chain keeps
// at least one branch outside the draw. Branches whose chain would be emptied
// are skipped and the next candidate is drawn instead.
std::vector<std::string> draw_branches_keeping_chains(const Catalog& catalog,
                                                      const std::vector<std::string>& pool,
                                                      std::size_t target, SplitMix64& rng) {
  std::map<std::string, std::size_t> left;
  for (const auto& b : pool) ++left[*catalog.chain_of_branch(b)];
  std::vector<std::string> order = pool;
  rng.shuffle(order);
  std::vector<std::string> drawn;
  for (const auto& b : order) {
    if (drawn.size() >= target) break;
    auto& remaining = left[*catalog.chain_of_branch(b)];
    if (remaining < 2) continue;
    --remaining;
    drawn.push_back(b);
  }
  std::sort(drawn.begin(), drawn.end());
  return drawn;
}

bool any_chain_with_two_branches(const Catalog& catalog, const std::vector<std::string>& pool) {
  std::map<std::string, std::size_t> per_chain;
  for (const auto& b : pool) {
    if (++per_chain[*catalog.chain_of_branch(b)] >= 2) return true;
  }
  return false;
}

// Moves k_i ~ U{t2..floor(N_i/divisor)} images of each branch with
// N_i >= t1 from `remaining` into `split`. Returns the number of branches
// that received images.
std::size_t draw_seen_images(const std::vector<std::string>& branches,
                             std::map<std::string, std::vector<std::string>>& remaining,
                             const SplitConfig& config, SplitName split, SplitMix64& rng,
                             std::map<std::string, SplitName>& assignment) {
  std::size_t used = 0;
  for (const auto& b : branches) {
    auto& images = remaining[b];
    const std::size_t n = images.size();
    if (n < config.t1) continue;
    const auto hi = static_cast<std::int64_t>(n / config.ss_divisor);
    const auto k = static_cast<std::size_t>(rng.between(static_cast<std::int64_t>(config.t2), hi));
    auto chosen = rng.sample(images, k);
    const Set chosen_set(chosen.begin(), chosen.end());
    for (const auto& id : chosen) assignment[id] = split;
    std::erase_if(images, [&](const std::string& id) { return contains(chosen_set, id); });
    ++used;
  }
  return used;
}

}  // namespace

std::string_view to_string(SplitName s) { return kNames[static_cast<std::size_t>(s)]; }

std::optional<SplitName> parse_split_name(std::string_view token) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == token) return static_cast<SplitName>(i);
  }
  return std::nullopt;
}

void SplitConfig::validate() const {
  if (!(uu_chain_fraction > 0.0 && uu_chain_fraction < 1.0)) {
    throw Error("split config: uu_chain_fraction must be in (0,1)");
  }
  if (!(su_branch_fraction > 0.0 && su_branch_fraction < 1.0)) {
    throw Error("split config: su_branch_fraction must be in (0,1)");
  }
  if (ss_divisor < 1) throw Error("split config: ss_divisor must be >= 1");
  if (t2 < 1) throw Error("split config: t2 must be >= 1");
  if (t1 < ss_divisor * t2) {
    throw Error("split config: t1 must be >= ss_divisor * t2 (" + std::to_string(t1) + " < " +
                std::to_string(ss_divisor * t2) + ")");
  }
}

SplitAssignment generate_splits(const Catalog& catalog, const SplitConfig& config) {
  config.validate();
  if (catalog.empty()) throw Error("generate_splits: catalog is empty");
  const auto& chain_index = catalog.chain_index();
  if (chain_index.size() < 2) {
    throw Error("generate_splits: need at least 2 known chains, found " +
                std::to_string(chain_index.size()));
  }

  SplitMix64 rng(config.seed);
  SplitAssignment out;
  out.config = config;
  auto& assignment = out.assignment;

  auto assign_branch = [&](const std::string& branch, SplitName split) {
    for (const auto& id : catalog.branch_index().at(branch)) assignment[id] = split;
  };

  for (const auto& b : catalog.unknown_branches()) assign_branch(b, SplitName::kTestUnk);

  // Unseen chains.
  std::vector<std::string> chains;
  for (const auto& [c, _] : chain_index) chains.push_back(c);
  const std::size_t n_uu = std::min(fraction_of(config.uu_chain_fraction, chains.size()),
                                    chains.size() - 1);
  const auto uu_chains = rng.sample(chains, n_uu);
  const Set uu_set(uu_chains.begin(), uu_chains.end());
  std::vector<std::string> rest_chains;
  for (const auto& c : chains) {
    if (contains(uu_set, c)) {
      for (const auto& b : chain_index.at(c)) assign_branch(b, SplitName::kTestUU);
    } else {
      rest_chains.push_back(c);
    }
  }

  // Validation chains are taken from the rest, keeping at least one chain for
  // training and at least one multi-branch chain for the unseen-branch draw.
  Set val_uu_set;
  if (rest_chains.size() >= 2) {
    const std::size_t target = std::min(fraction_of(config.uu_chain_fraction, rest_chains.size()),
                                        rest_chains.size() - 1);
    std::size_t multi = 0;
    for (const auto& c : rest_chains) multi += chain_index.at(c).size() >= 2;
    auto order = rest_chains;
    rng.shuffle(order);
    for (const auto& c : order) {
      if (val_uu_set.size() >= target) break;
      const bool is_multi = chain_index.at(c).size() >= 2;
      if (is_multi && multi <= 1) continue;
      multi -= is_multi;
      val_uu_set.insert(c);
    }
  }

  std::vector<std::string> pool;  // branches still in play, sorted
  for (const auto& c : rest_chains) {
    if (contains(val_uu_set, c)) {
      for (const auto& b : chain_index.at(c)) assign_branch(b, SplitName::kValUU);
    } else {
      pool.insert(pool.end(), chain_index.at(c).begin(), chain_index.at(c).end());
    }
  }
  std::sort(pool.begin(), pool.end());

  // Unseen branches of seen chains.
  if (!any_chain_with_two_branches(catalog, pool)) {
    throw Error("generate_splits: test_su pool is empty (no seen chain has 2+ branches)");
  }
  auto remove_drawn = [&](const std::vector<std::string>& drawn, SplitName split) {
    const Set drawn_set(drawn.begin(), drawn.end());
    for (const auto& b : drawn) assign_branch(b, split);
    std::erase_if(pool, [&](const std::string& b) { return contains(drawn_set, b); });
  };
  remove_drawn(draw_branches_keeping_chains(
                   catalog, pool, fraction_of(config.su_branch_fraction, pool.size()), rng),
               SplitName::kTestSU);
  remove_drawn(draw_branches_keeping_chains(
                   catalog, pool, fraction_of(config.su_branch_fraction, pool.size()), rng),
               SplitName::kValSU);

  // Seen branches: image-level draws, then the rest is train.
  std::map<std::string, std::vector<std::string>> remaining;
  for (const auto& b : pool) {
    auto ids = catalog.branch_index().at(b);
    std::sort(ids.begin(), ids.end());
    remaining.emplace(b, std::move(ids));
  }
  if (draw_seen_images(pool, remaining, config, SplitName::kTestSS, rng, assignment) == 0) {
    throw Error("generate_splits: test_ss pool is empty (no branch has >= t1=" +
                std::to_string(config.t1) + " images)");
  }
  draw_seen_images(pool, remaining, config, SplitName::kValSS, rng, assignment);
  for (const auto& [b, ids] : remaining) {
    for (const auto& id : ids) assignment[id] = SplitName::kTrain;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verification

bool ConstraintReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

const CheckResult& ConstraintReport::check(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw Error("constraint report: no check named '" + std::string(name) + "'");
}

namespace {

struct SplitView {
  std::map<SplitName, std::vector<std::string>> images;
  std::map<SplitName, std::map<std::string, std::size_t>> branch_counts;

  Set branches(SplitName s) const {
    Set out;
    if (auto it = branch_counts.find(s); it != branch_counts.end()) {
      for (const auto& [b, _] : it->second) out.insert(b);
    }
    return out;
  }
  std::size_t count(SplitName s, const std::string& branch) const {
    auto it = branch_counts.find(s);
    if (it == branch_counts.end()) return 0;
    auto jt = it->second.find(branch);
    return jt == it->second.end() ? 0 : jt->second;
  }
};

Set chains_of(const Catalog& catalog, const Set& branches) {
  Set out;
  for (const auto& b : branches) {
    if (const auto& c = catalog.chain_of_branch(b)) out.insert(*c);
  }
  return out;
}

Set set_union(const Set& a, const Set& b) {
  Set out = a;
  out.insert(b.begin(), b.end());
  return out;
}

Set set_minus(const Set& a, const Set& b) {
  Set out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

Set set_intersect(const Set& a, const Set& b) {
  Set out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

CheckResult make_check(std::string name, std::string description, Set offending) {
  CheckResult c{std::move(name), std::move(description), offending.empty(), {}};
  c.offending.assign(offending.begin(), offending.end());
  return c;
}

SplitCounts count_of(const Catalog& catalog, std::size_t images, const Set& branches) {
  return {images, branches.size(), chains_of(catalog, branches).size()};
}

void fill_counts(const Catalog& catalog, const SplitView& view, ConstraintReport& report) {
  Set trainval_branches;
  std::size_t trainval_images = 0;
  for (SplitName s : kAllSplits) {
    auto it = view.images.find(s);
    const std::size_t n = it == view.images.end() ? 0 : it->second.size();
    const Set br = view.branches(s);
    report.counts[s] = count_of(catalog, n, br);
    if (s == SplitName::kTrain || s == SplitName::kValSS || s == SplitName::kValSU ||
        s == SplitName::kValUU) {
      trainval_images += n;
      trainval_branches = set_union(trainval_branches, br);
    }
  }
  report.trainval = count_of(catalog, trainval_images, trainval_branches);
  report.total = {catalog.size(), catalog.branch_index().size(), catalog.chain_index().size()};
}

// Seen-branch rule shared by test_ss and val_ss: every branch is also in
// train with >= 1 image there, has >= t2 images in the split and, if a
// divisor is given, no more than floor(N/divisor) where N is the branch size
// available when the split was drawn.
Set seen_branch_violations(const Catalog& catalog, const SplitView& view, SplitName split,
                           const VerifyOptions& options) {
  Set bad;
  for (const auto& [b, n] : view.branch_counts.count(split) ? view.branch_counts.at(split)
                                                            : std::map<std::string, std::size_t>{}) {
    if (view.count(SplitName::kTrain, b) < 1 || n < options.t2) {
      bad.insert(b);
      continue;
    }
    if (options.ss_divisor) {
      std::size_t available = catalog.branch_size(b);
      if (split == SplitName::kValSS) available -= view.count(SplitName::kTestSS, b);
      if (n > available / *options.ss_divisor) bad.insert(b);
    }
  }
  return bad;
}

}  // namespace

ConstraintReport verify_splits(const Catalog& catalog, const std::vector<SplitRow>& rows,
                               const VerifyOptions& options) {
  ConstraintReport report;
  SplitView view;

  Set partition_bad;
  Set seen;
  for (const auto& row : rows) {
    const auto name = parse_split_name(row.split);
    if (!name) {
      partition_bad.insert(row.image_id + ": invalid split name '" + row.split + "'");
      continue;
    }
    if (!catalog.contains(row.image_id)) {
      partition_bad.insert(row.image_id + ": not in catalog");
      continue;
    }
    if (!seen.insert(row.image_id).second) {
      partition_bad.insert(row.image_id + ": assigned more than once");
      continue;
    }
    view.images[*name].push_back(row.image_id);
    ++view.branch_counts[*name][catalog.record(row.image_id).branch_id];
  }
  for (const auto& r : catalog.records()) {
    if (!contains(seen, r.image_id)) partition_bad.insert(r.image_id + ": unassigned");
  }
  report.checks.push_back(make_check(
      "a_partition", "every catalog image has exactly one valid split name", partition_bad));

  const Set train_b = view.branches(SplitName::kTrain);
  const Set train_c = chains_of(catalog, train_b);
  Set trainval_b = train_b;
  for (SplitName s : {SplitName::kValSS, SplitName::kValSU, SplitName::kValUU}) {
    trainval_b = set_union(trainval_b, view.branches(s));
  }
  const Set trainval_c = chains_of(catalog, trainval_b);

  report.checks.push_back(make_check(
      "b_test_ss", "test_ss branches are in train with >= t2 test images and >= 1 train image",
      seen_branch_violations(catalog, view, SplitName::kTestSS, options)));

  {
    const Set su_b = view.branches(SplitName::kTestSU);
    Set bad = set_intersect(su_b, trainval_b);
    for (const auto& c : set_minus(chains_of(catalog, su_b), train_c)) bad.insert("chain:" + c);
    report.checks.push_back(make_check(
        "c_test_su", "test_su branches are unseen in trainval while their chains are in train",
        bad));
  }

  const Set uu_c = chains_of(catalog, view.branches(SplitName::kTestUU));
  report.checks.push_back(make_check("d_test_uu", "test_uu chains do not occur in trainval",
                                     set_intersect(uu_c, trainval_c)));

  {
    Set bad;
    Set unk;
    for (const auto& b : catalog.unknown_branches()) {
      for (const auto& id : catalog.branch_index().at(b)) unk.insert(id);
    }
    const auto& unk_images = view.images[SplitName::kTestUnk];
    const Set assigned(unk_images.begin(), unk_images.end());
    for (const auto& id : set_minus(unk, assigned)) bad.insert(id);
    for (const auto& id : set_minus(assigned, unk)) bad.insert(id);
    report.checks.push_back(
        make_check("e_test_unk", "test_unk is exactly the unknown-chain images", bad));
  }

  report.checks.push_back(make_check(
      "f_val_ss", "val_ss branches are in train with >= t2 val images and >= 1 train image",
      seen_branch_violations(catalog, view, SplitName::kValSS, options)));
  {
    const Set su_b = view.branches(SplitName::kValSU);
    Set bad = set_intersect(su_b, train_b);
    for (const auto& c : set_minus(chains_of(catalog, su_b), train_c)) bad.insert("chain:" + c);
    report.checks.push_back(make_check(
        "f_val_su", "val_su branches are unseen in train while their chains are in train", bad));
  }
  const Set val_uu_c = chains_of(catalog, view.branches(SplitName::kValUU));
  report.checks.push_back(make_check("f_val_uu", "val_uu chains do not occur in train",
                                     set_intersect(val_uu_c, train_c)));

  {
    Set known;
    for (const auto& [c, _] : catalog.chain_index()) known.insert(c);
    const Set rest = set_minus(known, uu_c);
    Set bad;
    for (const auto& c : set_minus(rest, trainval_c)) bad.insert("trainval missing " + c);
    for (const auto& c : set_minus(trainval_c, rest)) bad.insert("trainval extra " + c);
    const Set train_rest = set_minus(rest, val_uu_c);
    for (const auto& c : set_minus(train_rest, train_c)) bad.insert("train missing " + c);
    for (const auto& c : set_minus(train_c, train_rest)) bad.insert("train extra " + c);
    report.checks.push_back(make_check(
        "g_train_chains",
        "chains(trainval) = known - chains(test_uu); chains(train) = that - chains(val_uu)", bad));
  }

  fill_counts(catalog, view, report);
  return report;
}

ConstraintReport verify_splits(const Catalog& catalog, const SplitAssignment& assignment) {
  return verify_splits(catalog, to_rows(catalog, assignment),
                       VerifyOptions{assignment.config.t2, assignment.config.ss_divisor});
}

ConstraintReport split_report(const Catalog& catalog, const SplitAssignment& assignment) {
  ConstraintReport report;
  SplitView view;
  for (const auto& [id, split] : assignment.assignment) {
    view.images[split].push_back(id);
    ++view.branch_counts[split][catalog.record(id).branch_id];
  }
  fill_counts(catalog, view, report);
  return report;
}

std::vector<SplitRow> to_rows(const Catalog& catalog, const SplitAssignment& assignment) {
  std::vector<SplitRow> rows;
  rows.reserve(catalog.size());
  for (const auto& r : catalog.records()) {
    auto it = assignment.assignment.find(r.image_id);
    if (it == assignment.assignment.end()) {
      throw Error("splits: image '" + r.image_id + "' has no assignment");
    }
    rows.push_back({r.image_id, std::string(to_string(it->second))});
  }
  return rows;
}

void write_splits(const Catalog& catalog, const SplitAssignment& assignment, std::ostream& out) {
  out << "image_id,split\n";
  for (const auto& row : to_rows(catalog, assignment)) out << row.image_id << ',' << row.split << '\n';
}

void save_splits(const Catalog& catalog, const SplitAssignment& assignment,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("splits: cannot write '" + path.string() + "'");
  write_splits(catalog, assignment, out);
}

std::vector<SplitRow> parse_split_rows(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("splits: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image_id,split") throw Error("splits: bad header '" + line + "'");
  std::vector<SplitRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw Error("splits: line " + std::to_string(line_no) + " is not 'image_id,split'");
    }
    rows.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return rows;
}

std::vector<SplitRow> load_split_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("splits: cannot open '" + path.string() + "'");
  return parse_split_rows(in);
}

SplitAssignment assignment_from_rows(const std::vector<SplitRow>& rows) {
  SplitAssignment out;
  for (const auto& row : rows) {
    const auto name = parse_split_name(row.split);
    if (!name) throw Error("splits: invalid split name '" + row.split + "' for " + row.image_id);
    if (!out.assignment.emplace(row.image_id, *name).second) {
      throw Error("splits: image '" + row.image_id + "' assigned more than once");
    }
  }
  return out;
}

std::vector<std::string> images_in(const SplitAssignment& assignment, SplitName split) {
  std::vector<std::string> out;
  for (const auto& [id, s] : assignment.assignment) {
    if (s == split) out.push_back(id);
  }
  return out;
}

nlohmann::json counts_to_json(const ConstraintReport& report) {
  auto row = [](const SplitCounts& c) {
    return nlohmann::json{{"images", c.images}, {"branches", c.branches}, {"chains", c.chains}};
  };
  nlohmann::json out = nlohmann::json::object();
  for (SplitName s : kAllSplits) {
    auto it = report.counts.find(s);
    auto j = row(it == report.counts.end() ? SplitCounts{} : it->second);
    if (s == SplitName::kTestUnk) j["chains"] = nullptr;  // chain unknown by definition
    out[std::string(to_string(s))] = j;
  }
  out["trainval"] = row(report.trainval);
  out["total"] = row(report.total);
  return out;
}

nlohmann::json to_json(const ConstraintReport& report) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : report.checks) {
    checks.push_back({{"name", c.name},
                      {"description", c.description},
                      {"passed", c.passed},
                      {"offending", c.offending}});
  }
  return {{"all_passed", report.all_passed()}, {"checks", checks}, {"counts", counts_to_json(report)}};
}

nlohmann::json to_json(const SplitConfig& c) {
  return {{"seed", c.seed},         {"uu_chain_fraction", c.uu_chain_fraction},
          {"su_branch_fraction", c.su_branch_fraction}, {"t1", c.t1},
          {"t2", c.t2},             {"ss_divisor", c.ss_divisor}};
}

SplitConfig split_config_from_json(const nlohmann::json& j) {
  SplitConfig c;
  c.seed = j.value("seed", c.seed);
  c.uu_chain_fraction = j.value("uu_chain_fraction", c.uu_chain_fraction);
  c.su_branch_fraction = j.value("su_branch_fraction", c.su_branch_fraction);
  c.t1 = j.value("t1", c.t1);
  c.t2 = j.value("t2", c.t2);
  c.ss_divisor = j.value("ss_divisor", c.ss_divisor);
  return c;
}

}  // namespace splitmetric
