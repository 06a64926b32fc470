#include "ento/taxonomy.hpp"

#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "ento/errors.hpp"

namespace ento::taxonomy {

const char* rank_name(Rank rank) {
  switch (rank) {
    case Rank::Order: return "order";
    case Rank::Family: return "family";
    case Rank::Genus: return "genus";
    case Rank::Species: return "species";
  }
  throw DomainError("unknown rank");
}

const std::string& SpeciesEntry::label(Rank rank) const {
  switch (rank) {
    case Rank::Order: return order;
    case Rank::Family: return family;
    case Rank::Genus: return genus;
    case Rank::Species: return species;
  }
  throw DomainError("unknown rank");
}

TaxonomyTree TaxonomyTree::parse(std::istream& in, const std::string& source) {
  TaxonomyTree tree;
  std::unordered_set<std::string> seen_species;
  std::unordered_map<std::string, std::string> genus_family;
  std::unordered_map<std::string, std::string> family_order;

  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ParseError(source + ":" + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    SpeciesEntry e;
    std::string* fields[4] = {&e.order, &e.family, &e.genus, &e.species};
    std::size_t start = 0;
    for (int f = 0; f < 4; ++f) {
      std::size_t tab = line.find('\t', start);
      if (f < 3) {
        if (tab == std::string::npos)
          fail("expected 4 tab separated fields");
        *fields[f] = line.substr(start, tab - start);
        start = tab + 1;
      } else {
        if (tab != std::string::npos)
          fail("expected 4 tab separated fields");
        *fields[f] = line.substr(start);
      }
      if (fields[f]->empty()) fail("empty field");
    }

    if (!seen_species.insert(e.species).second)
      fail("duplicate species '" + e.species + "'");
    auto [gi, g_new] = genus_family.emplace(e.genus, e.family);
    if (!g_new && gi->second != e.family)
      fail("genus '" + e.genus + "' listed under two families");
    auto [fi, f_new] = family_order.emplace(e.family, e.order);
    if (!f_new && fi->second != e.order)
      fail("family '" + e.family + "' listed under two orders");

    tree.entries_.push_back(std::move(e));
  }
  if (tree.entries_.empty()) throw ParseError(source + ": no species listed");
  return tree;
}

TaxonomyTree TaxonomyTree::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse(in, path);
}

const SpeciesEntry& TaxonomyTree::entry(int index) const {
  if (index < 0 || index >= species_count())
    throw DomainError("species index out of range");
  return entries_[static_cast<std::size_t>(index)];
}

int TaxonomyTree::species_index(const std::string& binomial) const {
  for (int i = 0; i < species_count(); ++i)
    if (entries_[static_cast<std::size_t>(i)].species == binomial) return i;
  throw DomainError("unknown species '" + binomial + "'");
}

std::vector<std::string> TaxonomyTree::names_at(Rank rank) const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries_) {
    const std::string& name = e.label(rank);
    if (seen.insert(name).second) out.push_back(name);
  }
  return out;
}

int TaxonomyTree::count_at(Rank rank) const {
  return static_cast<int>(names_at(rank).size());
}

Rollup roll_up(const TaxonomyTree& tree,
               const std::vector<double>& species_probs) {
  if (static_cast<int>(species_probs.size()) != tree.species_count())
    throw ShapeError("probability vector does not match species count");
  Rollup r;
  for (int i = 0; i < tree.species_count(); ++i) {
    double p = species_probs[static_cast<std::size_t>(i)];
    if (!(p >= 0) || !std::isfinite(p))
      throw DomainError("probabilities must be finite and non-negative");
    const SpeciesEntry& e = tree.entry(i);
    for (Rank rank : kRanks)
      r.by_rank[static_cast<int>(rank)][e.label(rank)] += p;
  }
  return r;
}

Decision decide(const TaxonomyTree& tree,
                const std::vector<double>& species_probs, double threshold) {
  if (!(threshold > 0) || threshold > 1)
    throw DomainError("threshold must be in (0,1]");
  Rollup r = roll_up(tree, species_probs);

  auto best_of = [](const Distribution& dist) {
    auto best = dist.begin();
    for (auto it = std::next(dist.begin()); it != dist.end(); ++it)
      if (it->second > best->second) best = it;
    return best;
  };

  for (auto it = kRanks.rbegin(); it != kRanks.rend(); ++it) {
    auto best = best_of(r.at(*it));
    if (best->second >= threshold)
      return {*it, best->first, best->second, true};
  }
  auto best = best_of(r.at(Rank::Order));
  return {Rank::Order, best->first, best->second, false};
}

}  // namespace ento::taxonomy
