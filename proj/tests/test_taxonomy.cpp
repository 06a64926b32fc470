#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ento/errors.hpp"
#include "ento/rng.hpp"
#include "ento/taxonomy.hpp"

using namespace ento;
using doctest::Approx;

#ifndef ENTO_DATA_DIR
#define ENTO_DATA_DIR "data"
#endif

namespace {

taxonomy::TaxonomyTree bundled_tree() {
  return taxonomy::TaxonomyTree::parse_file(std::string(ENTO_DATA_DIR) +
                                            "/taxonomy.tsv");
}

std::vector<double> bombus_mix() {
  std::vector<double> p(16, 0.0);
  auto tree = bundled_tree();
  p[tree.species_index("Coccinella septempunctata")] = 0.05;
  p[tree.species_index("Bombus lapidarius")] = 0.40;
  p[tree.species_index("Bombus terrestris")] = 0.35;
  p[tree.species_index("Polistes dominula")] = 0.10;
  p[tree.species_index("Vespula vulgaris")] = 0.10;
  return p;
}

}  // namespace

TEST_SUITE("taxonomy") {

TEST_CASE("bundled tree has the expected shape") {
  auto tree = bundled_tree();
  CHECK(tree.species_count() == 16);
  CHECK(tree.count_at(taxonomy::Rank::Species) == 16);
  CHECK(tree.count_at(taxonomy::Rank::Genus) == 15);
  CHECK(tree.count_at(taxonomy::Rank::Family) == 8);
  CHECK(tree.count_at(taxonomy::Rank::Order) == 5);

  CHECK(tree.entry(0).species == "Coccinella septempunctata");
  CHECK(tree.entry(0).order == "Coleoptera");
  CHECK(tree.entry(15).species == "Pieris rapae");
  CHECK(tree.species_index("Apis mellifica") == 8);
  CHECK_THROWS_AS(tree.species_index("Musca domestica"), DomainError);
  CHECK_THROWS_AS(tree.entry(16), DomainError);

  auto orders = tree.names_at(taxonomy::Rank::Order);
  REQUIRE(orders.size() == 5);
  CHECK(orders[0] == "Coleoptera");  // first appearance order
  CHECK(orders[1] == "Diptera");
  CHECK(orders[4] == "Lepidoptera");
}

TEST_CASE("rank labels") {
  CHECK(std::string(taxonomy::rank_name(taxonomy::Rank::Order)) == "order");
  CHECK(std::string(taxonomy::rank_name(taxonomy::Rank::Species)) ==
        "species");
  taxonomy::SpeciesEntry e{"Diptera", "Syrphidae", "Eristalis",
                           "Eristalis tenax"};
  CHECK(e.label(taxonomy::Rank::Family) == "Syrphidae");
  CHECK(e.label(taxonomy::Rank::Species) == "Eristalis tenax");
}

TEST_CASE("parser accepts blank lines and CRLF") {
  std::istringstream in(
      "Diptera\tSyrphidae\tEristalis\tEristalis tenax\r\n"
      "\n"
      "Diptera\tSyrphidae\tSyrphus\tSyrphus ribesii\n");
  auto tree = taxonomy::TaxonomyTree::parse(in, "mem");
  CHECK(tree.species_count() == 2);
  CHECK(tree.entry(0).species == "Eristalis tenax");
}

TEST_CASE("parser rejects malformed rows with line numbers") {
  auto expect_parse_error = [](const std::string& text,
                               const std::string& needle) {
    std::istringstream in(text);
    try {
      taxonomy::TaxonomyTree::parse(in, "mem");
      FAIL_CHECK("expected ParseError for " << needle);
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_parse_error("Diptera\tSyrphidae\tEristalis\n", "mem:1");
  expect_parse_error("Diptera\tSyrphidae\tEristalis\t\n", "mem:1");
  expect_parse_error(
      "Diptera\tSyrphidae\tEristalis\tEristalis tenax\textra\n", "mem:1");
  expect_parse_error(
      "Diptera\tSyrphidae\tEristalis\tEristalis tenax\n"
      "Diptera\tSyrphidae\tEristalis\tEristalis tenax\n",
      "mem:2");
  // one genus cannot sit under two families
  expect_parse_error(
      "Diptera\tSyrphidae\tEristalis\tEristalis tenax\n"
      "Diptera\tCalliphoridae\tEristalis\tEristalis pertinax\n",
      "mem:2");
  // one family cannot sit under two orders
  expect_parse_error(
      "Diptera\tSyrphidae\tEristalis\tEristalis tenax\n"
      "Coleoptera\tSyrphidae\tSyrphus\tSyrphus ribesii\n",
      "mem:2");
  expect_parse_error("", "no species");
}

TEST_CASE("missing file") {
  CHECK_THROWS_AS(taxonomy::TaxonomyTree::parse_file("/nonexistent.tsv"),
                  IoError);
}

TEST_CASE("rollup sums species mass into every ancestor") {
  auto tree = bundled_tree();
  auto probs = bombus_mix();
  auto rollup = taxonomy::roll_up(tree, probs);

  CHECK(rollup.at(taxonomy::Rank::Genus).at("Bombus") == Approx(0.75));
  CHECK(rollup.at(taxonomy::Rank::Family).at("Apidae") == Approx(0.75));
  CHECK(rollup.at(taxonomy::Rank::Family).at("Vespidae") == Approx(0.20));
  CHECK(rollup.at(taxonomy::Rank::Order).at("Hymenoptera") == Approx(0.95));
  CHECK(rollup.at(taxonomy::Rank::Order).at("Coleoptera") == Approx(0.05));
  CHECK(rollup.at(taxonomy::Rank::Species).at("Bombus lapidarius") ==
        Approx(0.40));
}

TEST_CASE("rollup conserves mass and never shrinks toward the root") {
  auto tree = bundled_tree();
  rng::Generator g(77);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p(16);
    double sum = 0;
    for (auto& v : p) {
      v = g.uniform(0.0, 1.0);
      sum += v;
    }
    if (rep % 3 == 0)
      for (auto& v : p) v /= sum;  // normalized and unnormalized both legal
    auto rollup = taxonomy::roll_up(tree, p);

    double total = 0;
    for (auto& v : p) total += v;
    for (auto rank : taxonomy::kRanks) {
      double mass = 0;
      for (const auto& [name, m] : rollup.at(rank)) mass += m;
      CHECK(mass == Approx(total).epsilon(1e-12));
    }
    // each taxon's mass bounds every descendant's
    for (int i = 0; i < 16; ++i) {
      const auto& e = tree.entry(i);
      double sp = rollup.at(taxonomy::Rank::Species).at(e.species);
      double ge = rollup.at(taxonomy::Rank::Genus).at(e.genus);
      double fa = rollup.at(taxonomy::Rank::Family).at(e.family);
      double od = rollup.at(taxonomy::Rank::Order).at(e.order);
      CHECK(sp <= ge + 1e-12);
      CHECK(ge <= fa + 1e-12);
      CHECK(fa <= od + 1e-12);
    }
  }
}

TEST_CASE("rollup input validation") {
  auto tree = bundled_tree();
  CHECK_THROWS_AS(taxonomy::roll_up(tree, std::vector<double>(15, 0.0)),
                  ShapeError);
  std::vector<double> neg(16, 0.0);
  neg[3] = -0.1;
  CHECK_THROWS_AS(taxonomy::roll_up(tree, neg), DomainError);
  neg[3] = std::nan("");
  CHECK_THROWS_AS(taxonomy::roll_up(tree, neg), DomainError);
}

TEST_CASE("decision picks the deepest rank clearing the threshold") {
  auto tree = bundled_tree();
  auto probs = bombus_mix();

  auto d = taxonomy::decide(tree, probs, 0.7);
  CHECK(d.rank == taxonomy::Rank::Genus);
  CHECK(d.name == "Bombus");
  CHECK(d.probability == Approx(0.75));
  CHECK(d.meets_threshold);

  d = taxonomy::decide(tree, probs, 0.4);  // species already clears it
  CHECK(d.rank == taxonomy::Rank::Species);
  CHECK(d.name == "Bombus lapidarius");
  CHECK(d.probability == Approx(0.40));

  d = taxonomy::decide(tree, probs, 0.8);  // family keeps missing, order wins
  CHECK(d.rank == taxonomy::Rank::Order);
  CHECK(d.name == "Hymenoptera");
  CHECK(d.probability == Approx(0.95));
  CHECK(d.meets_threshold);
}

TEST_CASE("decision below threshold falls back to the order argmax") {
  auto tree = bundled_tree();
  std::vector<double> p(16, 1.0 / 16.0);
  auto d = taxonomy::decide(tree, p, 0.9);
  CHECK_FALSE(d.meets_threshold);
  CHECK(d.rank == taxonomy::Rank::Order);
  CHECK(d.name == "Hymenoptera");  // 7 of 16 species
  CHECK(d.probability == Approx(7.0 / 16.0));
}

TEST_CASE("decision ties go to the alphabetically first name") {
  auto tree = bundled_tree();
  std::vector<double> p(16, 0.0);
  auto set = [&](const char* s, double v) {
    p[tree.species_index(s)] = v;
  };
  // two orders at exactly 0.5 each, nothing deeper clears 0.5
  set("Calliphora vicina", 0.25);
  set("Eristalis tenax", 0.25);
  set("Apis mellifica", 0.25);
  set("Formica rufa", 0.25);
  auto d = taxonomy::decide(tree, p, 0.5);
  CHECK(d.rank == taxonomy::Rank::Order);
  CHECK(d.name == "Diptera");  // before Hymenoptera
  CHECK(d.probability == Approx(0.5));
}

TEST_CASE("decision threshold must be usable") {
  auto tree = bundled_tree();
  std::vector<double> p(16, 1.0 / 16.0);
  CHECK_THROWS_AS(taxonomy::decide(tree, p, 0.0), DomainError);
  CHECK_THROWS_AS(taxonomy::decide(tree, p, 1.1), DomainError);
  CHECK_NOTHROW(taxonomy::decide(tree, p, 1.0));
}

}  // TEST_SUITE
