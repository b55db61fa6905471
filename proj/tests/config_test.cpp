#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rdpo/config.hpp"

using namespace rdpo;
using cfg::RunConfig;

TEST_CASE("defaults cover every registered key and validate") {
  const RunConfig c = RunConfig::defaults();
  c.validate();
  for (const cfg::KeySpec& spec : cfg::key_specs()) {
    CHECK(c.get(spec.name) == spec.def);
  }
  CHECK(c.seed() == 7);
  CHECK(c.total_steps() == 50);
  CHECK(c.model_shape().latent == 64);
  CHECK(c.progressive_options().schedule.size() == 3);
  CHECK(c.audit_buckets() == std::vector<int>{20, 40, 50});
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_WITH_AS(RunConfig::from_text("no.such.key = 1\n"),
                       doctest::Contains("unknown key"), std::runtime_error);
  RunConfig c = RunConfig::defaults();
  CHECK_THROWS(c.set("bogus", "1"));
  CHECK_THROWS(c.get("bogus"));
}

TEST_CASE("parsing accepts comments, blanks and spacing") {
  const RunConfig c = RunConfig::from_text(
      "# comment\n"
      "\n"
      "train.lr = 0.01   # inline comment\n"
      "  model.width=64\n");
  CHECK(c.get("train.lr") == "0.01");
  CHECK(c.model_shape().width == 64);
}

TEST_CASE("malformed lines and values are errors") {
  CHECK_THROWS(RunConfig::from_text("train.lr\n"));
  CHECK_THROWS(RunConfig::from_text("train.lr = abc\n"));
  CHECK_THROWS(RunConfig::from_text("model.time_emb = 7\n"));   // must be even
  CHECK_THROWS(RunConfig::from_text("rdpo.schedule = 99\n"));   // beyond model.steps
  CHECK_THROWS(RunConfig::from_text("rdpo.beta = 0\n"));
  CHECK_THROWS(RunConfig::from_text("dynamics.restitution = 1.5\n"));
  CHECK_THROWS(RunConfig::from_text("rdpo.sft_interleave = yes\n"));
}

TEST_CASE("hash ignores key order and numeric spelling") {
  const RunConfig a = RunConfig::from_text("train.lr = 0.001\nmodel.width = 128\n");
  const RunConfig b = RunConfig::from_text("model.width = 128\ntrain.lr = 1e-3\n");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() == RunConfig::defaults().hash());

  const RunConfig c = RunConfig::from_text("train.lr = 0.002\n");
  CHECK(c.hash() != a.hash());
}

TEST_CASE("canonical form is sorted key=value lines") {
  const std::string canon = RunConfig::defaults().canonical();
  CHECK(canon.find("audit.buckets=20,40,50\n") == 0);  // first key alphabetically
  size_t prev = std::string::npos;
  size_t pos = canon.find("seed=");
  CHECK(pos != std::string::npos);
  prev = canon.find("rdpo.schedule=");
  CHECK(prev < pos);
}

TEST_CASE("typed accessors reflect overrides") {
  RunConfig c = RunConfig::defaults();
  c.set("rdpo.schedule", "30,20,mix");
  c.set("pairgen.s", "10,30");
  c.set("eval.conditions", "12");
  c.validate();
  const auto opt = c.progressive_options();
  CHECK(opt.schedule[0].s == 30);
  CHECK(opt.schedule[2].mix);
  CHECK(c.pairgen_steps() == std::vector<int>{10, 30});
  CHECK(c.eval_conditions() == 12);
}
