#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "nrsteg/config.hpp"
#include "nrsteg/error.hpp"
#include "support.hpp"

using namespace nrsteg;
using nrsteg::test::ScratchDir;

TEST_CASE("defaults follow the reference run") {
  const RunConfig c;
  CHECK(c.dataset.k == 3555);
  CHECK(c.dataset.clip_seconds == 10.0);
  CHECK(c.dataset.segments_train == 5);
  CHECK(c.dataset.segments_eval == 20);
  CHECK(c.train.epochs == 150);
  CHECK(c.train.batch_size == 20);
  CHECK(c.train.opt.lr == 0.4);
  CHECK(c.train.opt.rho == 0.95);
  CHECK(c.train.opt.eps == 1e-8);
  CHECK(c.train.opt.weight_decay == 5e-4);
  c.validate();
}

TEST_CASE("parse key=value text with comments and blanks") {
  const auto c = RunConfig::parse(
      "# desk run\n"
      "k = 90\n"
      "clip_seconds=10   # seconds\n"
      "\n"
      "seed=7\n"
      "epochs=30\n"
      "batch_size=20\n"
      "lr=0.4\n"
      "ss_bpp=0.1\n");
  CHECK(c.dataset.k == 90);
  CHECK(c.dataset.seed == 7);
  CHECK(c.train.seed == 7);
  CHECK(c.train.epochs == 30);
  CHECK(c.dataset.ss_bpp == 0.1);
  c.validate();
}

TEST_CASE("every advertised key is accepted") {
  for (const auto& key : RunConfig::keys()) {
    RunConfig c;
    INFO(key);
    CHECK_NOTHROW(c.set(key, "1"));
  }
}

TEST_CASE("bad input names the line") {
  try {
    RunConfig::parse("k=9\nbogus=1\n", "run.cfg");
    FAIL("expected rejection");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("run.cfg:2") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::parse("k\n"), ValidationError);
  CHECK_THROWS_AS(RunConfig::parse("k=ten\n"), ValidationError);
  CHECK_THROWS_AS(RunConfig::parse("epochs=3x\n"), ValidationError);
  CHECK_THROWS_AS(RunConfig::parse("k=10\n").validate(), ValidationError);
  CHECK_THROWS_AS(RunConfig::parse("batch_size=1\n").validate(), ValidationError);
}

TEST_CASE("load from file") {
  ScratchDir dir("config");
  {
    std::ofstream out(dir / "a.cfg");
    out << "k=30\nsegments_train=2\n";
  }
  const auto c = RunConfig::load(dir / "a.cfg");
  CHECK(c.dataset.k == 30);
  CHECK(c.dataset.segments_train == 2);
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.cfg"), IoError);
}
