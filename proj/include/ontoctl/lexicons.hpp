#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "ontoctl/error.hpp"

namespace ontoctl {

/// A closed word list: one lowercase token per line, `#` starts a comment.
using Lexicon = std::set<std::string, std::less<>>;

inline Lexicon parse_lexicon(std::string_view text) {
  Lexicon words;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    words.insert(line.substr(first, last - first + 1));
  }
  return words;
}

inline Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open lexicon " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_lexicon(buf.str());
}

// Built-in copies of resources/lexicons/*.txt. Keep in sync; a test compares them.
namespace builtin_lexicon {

inline constexpr std::string_view k_pronouns = R"lex(# English pronoun lexicon, v1
# personal
i
me
you
he
him
she
her
it
we
us
they
them
# possessive
my
mine
your
yours
his
hers
its
our
ours
their
theirs
# reflexive
myself
yourself
yourselves
himself
herself
itself
oneself
ourselves
themselves
# demonstrative
this
that
these
those
# interrogative / relative
who
whom
whose
which
what
whoever
whomever
whatever
whichever
# indefinite
someone
somebody
something
anyone
anybody
anything
everyone
everybody
everything
nobody
nothing
none
)lex";

inline constexpr std::string_view k_positive = R"lex(# Positive polarity lexicon, v1
agree
amazing
awesome
beautiful
benefit
benefits
best
better
brilliant
correct
delighted
delightful
effective
enjoy
enjoyed
excellent
exciting
fantastic
favorite
fun
glad
good
grateful
great
happy
helpful
hope
hopeful
impressive
joy
kind
love
loved
lovely
nice
outstanding
perfect
perfectly
pleasant
pleased
positive
proud
recommend
safe
success
successful
superb
thanks
thrilled
useful
valuable
win
wonderful
)lex";

inline constexpr std::string_view k_negative = R"lex(# Negative polarity lexicon, v1
afraid
angry
annoyed
annoying
awful
bad
boring
broken
cruel
damage
danger
dangerous
disagree
disappointed
disappointing
disaster
drawback
drawbacks
fail
failed
failure
fear
harm
harmful
hate
hated
horrible
inaccurate
miserable
negative
pain
painful
poor
problem
problems
risk
risky
sad
sadly
scared
stupid
terrible
threat
toxic
ugly
unfortunately
unsafe
upset
useless
worse
worst
wrong
)lex";

inline constexpr std::string_view k_emotion = R"lex(# Emotion-bearing words used by the load heuristic, v1
afraid
angry
anger
annoyed
anxious
ashamed
delighted
disgusted
excited
fear
frustrated
furious
glad
grateful
happy
hate
heartbroken
hurt
jealous
joy
lonely
love
miserable
nervous
proud
sad
scared
shocked
surprised
thrilled
upset
worried
)lex";

}  // namespace builtin_lexicon

inline const Lexicon& pronoun_lexicon() {
  static const Lexicon words = parse_lexicon(builtin_lexicon::k_pronouns);
  return words;
}

inline const Lexicon& positive_lexicon() {
  static const Lexicon words = parse_lexicon(builtin_lexicon::k_positive);
  return words;
}

inline const Lexicon& negative_lexicon() {
  static const Lexicon words = parse_lexicon(builtin_lexicon::k_negative);
  return words;
}

inline const Lexicon& emotion_lexicon() {
  static const Lexicon words = parse_lexicon(builtin_lexicon::k_emotion);
  return words;
}

}  // namespace ontoctl
