#pragma once

#include <array>
#include <istream>
#include <map>
#include <string>
#include <vector>

namespace ento::taxonomy {

enum class Rank { Order = 0, Family = 1, Genus = 2, Species = 3 };

inline constexpr std::array<Rank, 4> kRanks{Rank::Order, Rank::Family,
                                            Rank::Genus, Rank::Species};

const char* rank_name(Rank rank);

struct SpeciesEntry {
  std::string order, family, genus, species;

  const std::string& label(Rank rank) const;
};

// Four rank hierarchy loaded from a TSV of
// order <TAB> family <TAB> genus <TAB> species, one species per line.
// Class index equals line order.
class TaxonomyTree {
 public:
  static TaxonomyTree parse(std::istream& in, const std::string& source);
  static TaxonomyTree parse_file(const std::string& path);

  int species_count() const { return static_cast<int>(entries_.size()); }
  const SpeciesEntry& entry(int index) const;
  int species_index(const std::string& binomial) const;

  // Distinct names at a rank, in first appearance order.
  std::vector<std::string> names_at(Rank rank) const;
  int count_at(Rank rank) const;

 private:
  std::vector<SpeciesEntry> entries_;
};

// name -> probability mass at one rank
using Distribution = std::map<std::string, double>;

// A taxon's mass is the sum over the species beneath it.
struct Rollup {
  std::array<Distribution, 4> by_rank;

  const Distribution& at(Rank rank) const {
    return by_rank[static_cast<int>(rank)];
  }
};

Rollup roll_up(const TaxonomyTree& tree,
               const std::vector<double>& species_probs);

struct Decision {
  Rank rank = Rank::Order;
  std::string name;
  double probability = 0;
  // False when even the order level stays under the threshold; the order
  // argmax is still reported.
  bool meets_threshold = false;
};

// Deepest rank whose best taxon reaches the threshold wins; ties go to the
// alphabetically first name.
Decision decide(const TaxonomyTree& tree,
                const std::vector<double>& species_probs,
                double threshold = 0.8);

}  // namespace ento::taxonomy
