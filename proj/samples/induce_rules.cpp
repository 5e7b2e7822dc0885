// Fits a shallow tree on labeled feature rows, turns its leaves into an
// ontology and checks that the rules partition the feature space.
//
//   induce_rules samples/data/cefr_train.csv

#include <iostream>

#include "ontoctl/decision_tree.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: induce_rules <train.csv>\n";
    return 2;
  }
  try {
    auto data = ontoctl::load_training_csv(argv[1]);
    ontoctl::TreeConfig cfg;
    cfg.max_depth = 3;
    cfg.label_set = {"A1", "A2", "B1", "B2", "C1", "C2"};
    auto tree = ontoctl::fit_tree(data, cfg);
    auto spec = ontoctl::rules_to_ontology(tree, "CEFR", true);

    std::cout << spec.rules.size() << " rules from " << data.size() << " rows\n";
    for (const auto& r : spec.rules) {
      ontoctl::json preds = ontoctl::json::array();
      for (const auto& p : r.predicates) preds.push_back(ontoctl::predicate_to_json(p));
      std::cout << "  " << r.label << " <- " << preds.dump() << '\n';
    }
    auto report = ontoctl::check_consistency(spec);
    std::cout << (report.consistent() ? "consistent" : "inconsistent") << '\n';
    return report.consistent() ? 0 : 1;
  } catch (const ontoctl::Error& e) {
    std::cerr << "error: " << e.message() << '\n';
    return 1;
  }
}
