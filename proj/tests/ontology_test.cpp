#include <gtest/gtest.h>

#include "ontoctl/ontology.hpp"
#include "ontoctl/text_metrics.hpp"
#include "test_support.hpp"

using namespace ontoctl;

namespace {

OntologySpec numeric_spec(const std::string& rules_json) {
  return parse_ontology(R"({"concept": "T", "classes": ["A", "B", "C"],
    "descriptors": {"f0": "numeric", "f1": "numeric"}, "rules": )" +
                        rules_json + "}");
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an ontoctl::Error";
  return ErrorKind::Io;
}

DescriptorValues num(double f0, double f1 = 0) { return {{{"f0", f0}, {"f1", f1}}, {}}; }

DescriptorValues cat(const std::string& load, const std::string& polarity) {
  return {{}, {{"load", load}, {"polarity", polarity}}};
}

// Every witness must reproduce its violation through classify().
void expect_witnesses_reproduce(const OntologySpec& spec, const ConsistencyReport& report) {
  for (const auto& v : report.violations) {
    auto expected = v.kind == Violation::Kind::Overlap ? ErrorKind::AmbiguousMatch : ErrorKind::NoRuleMatches;
    EXPECT_EQ(kind_of([&] { classify(v.witness, spec); }), expected) << v.message;
  }
}

}  // namespace

TEST(ParseOntology, BundledCefr) {
  auto spec = load_ontology(test_support::resource("ontologies/cefr.json"));
  EXPECT_EQ(spec.concept_name, "CEFR");
  EXPECT_EQ(spec.classes, (std::vector<std::string>{"A1", "A2", "B1", "B2", "C1", "C2"}));
  EXPECT_TRUE(spec.ordinal);
  EXPECT_EQ(spec.descriptors.size(), 6u);
  EXPECT_TRUE(check_consistency(spec).consistent());
}

TEST(ParseOntology, BundledPolarity) {
  auto spec = load_ontology(test_support::resource("ontologies/polarity.json"));
  EXPECT_EQ(spec.classes.size(), 6u);
  EXPECT_FALSE(spec.ordinal);
  auto report = check_consistency(spec);
  EXPECT_TRUE(report.consistent());
  EXPECT_TRUE(report.unused_classes.empty());
}

TEST(ParseOntology, Errors) {
  EXPECT_EQ(kind_of([] { numeric_spec(R"([{"label": "A", "predicates": [{"feature": "zz", "hi": 1}]}])"); }),
            ErrorKind::UnknownDescriptor);
  EXPECT_EQ(kind_of([] { numeric_spec(R"([{"label": "Q", "predicates": []}])"); }), ErrorKind::UnknownClass);
  EXPECT_EQ(kind_of([] { numeric_spec("[]"); }), ErrorKind::EmptyRuleSet);
  EXPECT_EQ(kind_of([] { numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "lo": 3, "hi": 1}]}])"); }),
            ErrorKind::SyntaxError);
  EXPECT_EQ(kind_of([] { parse_ontology(R"({"concept": "T", "classes": ["A"], "rules": []})"); }),
            ErrorKind::SyntaxError);
}

TEST(ParseOntology, SyntaxErrorsCarryLinePositions) {
  try {
    parse_ontology("{\n  \"concept\": \"T\",\n  \"classes\": [\"A\" \"B\"]\n}", "doc.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SyntaxError);
    EXPECT_NE(std::string(e.what()).find("doc.json: line 3"), std::string::npos) << e.what();
  }
}

TEST(ParseOntology, RepeatedIntervalsCollapse) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 6}, {"feature": "f0", "hi": 3}]},
                                {"label": "B", "predicates": [{"feature": "f0", "lo": 3}]}])");
  ASSERT_EQ(spec.rules[0].predicates.size(), 1u);
  EXPECT_EQ(std::get<Interval>(spec.rules[0].predicates[0]).hi, 3.0);
}

TEST(ParseOntology, DocumentRoundTrip) {
  auto spec = load_ontology(test_support::resource("ontologies/cefr.json"));
  EXPECT_EQ(parse_ontology(to_json(spec).dump(2)), spec);
  auto pol = load_ontology(test_support::resource("ontologies/polarity.json"));
  EXPECT_EQ(parse_ontology(to_json(pol).dump()), pol);
}

TEST(Classify, IntervalConvention) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 6}]},
                                {"label": "B", "predicates": [{"feature": "f0", "lo": 6}]}])");
  EXPECT_EQ(classify(num(2), spec), "A");
  EXPECT_EQ(classify(num(6), spec), "B");
  EXPECT_EQ(classify(num(5.999999), spec), "A");
  EXPECT_EQ(kind_of([&] { classify({}, spec); }), ErrorKind::MissingDescriptor);
}

TEST(Classify, PolarityScheme) {
  auto spec = load_ontology(test_support::resource("ontologies/polarity.json"));
  EXPECT_EQ(classify(cat("loaded", "negative"), spec), "L-");
  EXPECT_EQ(classify(cat("nonloaded", "neutral"), spec), "~L0");
  EXPECT_EQ(classify(cat("loaded", "positive"), spec), "L+");
}

TEST(Classify, AmbiguousAndUncovered) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 6}]},
                                {"label": "B", "predicates": [{"feature": "f0", "hi": 3}]}])");
  EXPECT_EQ(kind_of([&] { classify(num(2), spec); }), ErrorKind::AmbiguousMatch);
  EXPECT_EQ(kind_of([&] { classify(num(7), spec); }), ErrorKind::NoRuleMatches);
  EXPECT_EQ(classify(num(4), spec), "A");
}

TEST(Consistency, OverlapWitness) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 6}]},
                                {"label": "B", "predicates": [{"feature": "f0", "hi": 3}]},
                                {"label": "C", "predicates": [{"feature": "f0", "lo": 6}]}])");
  auto report = check_consistency(spec);
  ASSERT_EQ(report.violations.size(), 1u);
  const auto& v = report.violations[0];
  EXPECT_EQ(v.kind, Violation::Kind::Overlap);
  EXPECT_EQ(v.rules, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(v.witness.numeric.at("f0"), 2.0);
  expect_witnesses_reproduce(spec, report);
}

TEST(Consistency, SameLabelOverlapIsAllowed) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 6}]},
                                {"label": "A", "predicates": [{"feature": "f0", "hi": 3}]},
                                {"label": "B", "predicates": [{"feature": "f0", "lo": 6}]}])");
  EXPECT_TRUE(check_consistency(spec).consistent());
}

TEST(Consistency, NumericGapWitness) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 3}]},
                                {"label": "B", "predicates": [{"feature": "f0", "lo": 4}]}])");
  auto report = check_consistency(spec);
  ASSERT_FALSE(report.consistent());
  for (const auto& v : report.violations) {
    EXPECT_EQ(v.kind, Violation::Kind::Gap);
    EXPECT_GE(v.witness.numeric.at("f0"), 3.0);
    EXPECT_LT(v.witness.numeric.at("f0"), 4.0);
  }
  expect_witnesses_reproduce(spec, report);
}

TEST(Consistency, BoundaryPointGap) {
  // (-inf, 5) and (5, inf): the single point 5 is uncovered.
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 5}]},
                                {"label": "B", "predicates": [{"feature": "f0", "lo": 5, "lo_closed": false}]}])");
  auto report = check_consistency(spec);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].witness.numeric.at("f0"), 5.0);
  expect_witnesses_reproduce(spec, report);
}

TEST(Consistency, TwoDimensionalGap) {
  auto spec = numeric_spec(R"([{"label": "A", "predicates": [{"feature": "f0", "hi": 0}]},
                                {"label": "B", "predicates": [{"feature": "f0", "lo": 0}, {"feature": "f1", "hi": 1}]}])");
  auto report = check_consistency(spec);
  ASSERT_FALSE(report.consistent());
  for (const auto& v : report.violations) {
    EXPECT_GE(v.witness.numeric.at("f0"), 0.0);
    EXPECT_GE(v.witness.numeric.at("f1"), 1.0);
  }
  expect_witnesses_reproduce(spec, report);
}

TEST(Consistency, MissingPolarityRuleFound) {
  auto spec = load_ontology(test_support::resource("ontologies/polarity.json"));
  spec.rules.pop_back();  // drop ~L0
  auto report = check_consistency(spec);
  ASSERT_EQ(report.violations.size(), 1u);
  EXPECT_EQ(report.violations[0].witness, cat("nonloaded", "neutral"));
  EXPECT_EQ(report.unused_classes, (std::vector<std::string>{"~L0"}));
  expect_witnesses_reproduce(spec, report);
}

TEST(Consistency, GapReportIsCapped) {
  std::string rules = "[";
  for (int i = 0; i < 50; ++i) {
    if (i) rules += ",";
    rules += R"({"label": "A", "predicates": [{"feature": "f0", "lo": )" + std::to_string(2 * i) +
             R"(, "hi": )" + std::to_string(2 * i + 1) + "}]}";
  }
  rules += "]";
  auto spec = numeric_spec(rules);
  auto report = check_consistency(spec, 10);
  EXPECT_EQ(report.violations.size(), 10u);
  EXPECT_TRUE(report.gaps_truncated);
}

TEST(Classify, BundledCefrIsTotalOnRandomText) {
  auto spec = load_ontology(test_support::resource("ontologies/cefr.json"));
  std::mt19937_64 rng(41);
  for (int i = 0; i < 200; ++i) {
    auto f = features(test_support::random_utterance(rng));
    DescriptorValues v;
    auto vals = f.values();
    for (std::size_t k = 0; k < k_feature_count; ++k) v.numeric[std::string(k_feature_names[k])] = vals[k];
    EXPECT_TRUE(spec.has_class(classify(v, spec)));
  }
}
