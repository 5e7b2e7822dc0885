// Drives a proficiency session against the bundled mock model. Each user
// line is annotated, the strategy picks a target, and the reply is checked.
//
//   mock_session < samples/data/questions.txt

#include <iostream>
#include <string>

#include "ontoctl/engine.hpp"

#ifndef ONTOCTL_RESOURCE_DIR
#error "ONTOCTL_RESOURCE_DIR must be defined by the build"
#endif

int main() {
  using namespace ontoctl;
  const std::string res = ONTOCTL_RESOURCE_DIR;
  try {
    auto spec = load_ontology(res + "/ontologies/cefr.json");
    auto strategy = load_strategy(res + "/strategies/harder_only.json");
    validate_strategy(strategy, spec);
    DescriptorAnnotator annotator(spec, {});
    MockGateway gateway(load_mock_script(res + "/fixtures/mock_cefr.json"));

    Session s;
    s.id = "sample";
    s.ontology = spec.concept_name;
    s.strategy = strategy.name;
    s.state = initial_state(strategy, spec);
    for (std::string line; std::getline(std::cin, line);) {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      auto agent = run_turn(s, line, spec, strategy, annotator, gateway);
      std::cout << "user  [" << *s.turns[s.turns.size() - 2].detected << "] " << line << '\n'
                << "agent [" << *agent.target << (*agent.compliant ? "" : ", off-target") << "] " << agent.text
                << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.message() << '\n';
    return 1;
  }
}
