#include "safl/config.hpp"

#include <gtest/gtest.h>

#include "safl/harness.hpp"

using namespace safl;

namespace {

const char* kSample = R"(# sample
[scenario]
name = sconvex-rate

[algorithm]
rounds = 128, 256, 512
q = 0.5
couple_steps = true

[run]
seeds = 0..3
)";

}  // namespace

TEST(Config, ParseScalarsListsAndRanges) {
  const Config cfg = Config::parse_string(kSample);
  EXPECT_EQ(cfg.get_string("scenario", "name"), "sconvex-rate");
  EXPECT_DOUBLE_EQ(cfg.get_double("algorithm", "q"), 0.5);
  EXPECT_TRUE(cfg.get_bool_or("algorithm", "couple_steps", false));
  EXPECT_EQ(cfg.get_int_list("algorithm", "rounds"), (std::vector<long long>{128, 256, 512}));
  EXPECT_EQ(cfg.get_int_list("run", "seeds"), (std::vector<long long>{0, 1, 2, 3}));
  EXPECT_EQ(cfg.get_int_or("population", "clients", 10), 10);
}

TEST(Config, ErrorsAreConfigErrors) {
  EXPECT_THROW(Config::parse_string("key = 1\n"), config_error);       // entry before section
  EXPECT_THROW(Config::parse_string("[a\nk = 1\n"), config_error);     // malformed header
  EXPECT_THROW(Config::parse_string("[a]\n= 1\n"), config_error);      // empty key
  const Config cfg = Config::parse_string("[a]\nk = x\n");
  EXPECT_THROW(cfg.get_double("a", "k"), config_error);
  EXPECT_THROW(cfg.get_int("a", "k"), config_error);
  EXPECT_THROW(cfg.get_string("a", "missing"), config_error);
}

TEST(Config, OverridesReplaceValues) {
  Config cfg = Config::parse_string(kSample);
  cfg.apply_override("algorithm.q=0.9");
  EXPECT_DOUBLE_EQ(cfg.get_double("algorithm", "q"), 0.9);
  cfg.apply_override("population.clients=12");
  EXPECT_EQ(cfg.get_int("population", "clients"), 12);
  EXPECT_THROW(cfg.apply_override("noequals"), config_error);
  EXPECT_THROW(cfg.apply_override("nodot=1"), config_error);
}

TEST(Config, HashIsStableAndSensitive) {
  const Config a = Config::parse_string(kSample);
  const Config b = Config::parse_string(kSample);
  EXPECT_EQ(a.hash_hex(), b.hash_hex());
  Config c = Config::parse_string(kSample);
  c.apply_override("algorithm.q=0.25");
  EXPECT_NE(a.hash_hex(), c.hash_hex());
  // Key order must not matter: canonical form sorts sections and keys.
  const Config d = Config::parse_string("[z]\nb = 2\na = 1\n");
  const Config e = Config::parse_string("[z]\na = 1\nb = 2\n");
  EXPECT_EQ(d.hash_hex(), e.hash_hex());
}

TEST(Config, CommentsAndWhitespace) {
  const Config cfg = Config::parse_string("[s]   \n  k =  7  ; trailing comment\n# full line\n");
  EXPECT_EQ(cfg.get_int("s", "k"), 7);
}

TEST(Config, UnknownKeysRejectedPerScenario) {
  Config cfg = Config::parse_string(kSample);
  EXPECT_NO_THROW(validate_config(cfg));
  cfg.apply_override("algorithm.bogus_knob=1");
  EXPECT_THROW(validate_config(cfg), config_error);
  Config other = Config::parse_string("[scenario]\nname = nosuch\n");
  EXPECT_THROW(validate_config(other), config_error);
}
