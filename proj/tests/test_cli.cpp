#include "drbayes/cli.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "drbayes_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(DRBAYES_CLI_PATH) + " " + args + " > " + (kWork / "stdout.txt").string() +
                          " 2> " + (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

struct Workdir {
  Workdir() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_CASE_FIXTURE(Workdir, "simulate writes reproducible outputs") {
  const std::string base = "simulate --n 100 --reps 3 --seed 5 --estimators naive,dr,is --draws 20 --boot 20 --quiet";
  REQUIRE(run(base + " --out " + (kWork / "a").string()) == 0);
  REQUIRE(run(base + " --out " + (kWork / "b").string()) == 0);
  const std::string reps = slurp(kWork / "a" / "replications.csv");
  CHECK(lines(reps).size() == 1 + 3 * 3);
  CHECK(reps == slurp(kWork / "b" / "replications.csv"));
  CHECK(slurp(kWork / "a" / "summary.csv") == slurp(kWork / "b" / "summary.csv"));
  CHECK(lines(slurp(kWork / "a" / "summary.csv")).size() == 4);
  const std::string manifest = slurp(kWork / "a" / "manifest.json");
  CHECK(manifest.find("\"seed\"") != std::string::npos);
  CHECK(manifest.find("drbayes") != std::string::npos);

  // A config file is read and command-line flags override it.
  std::ofstream(kWork / "cfg.json") << R"({"n": 100, "reps": 2, "seed": 9, "estimators": "naive", "boot": 20})";
  REQUIRE(run("simulate --quiet --config " + (kWork / "cfg.json").string() + " --reps 4 --out " +
              (kWork / "c").string()) == 0);
  CHECK(lines(slurp(kWork / "c" / "replications.csv")).size() == 1 + 4);

  std::ofstream(kWork / "bad.json") << R"({"n": 100, "replications": 2})";
  CHECK(run("simulate --quiet --config " + (kWork / "bad.json").string() + " --out " + (kWork / "d").string()) == 2);
  CHECK(run("simulate --quiet --estimators bogus --out " + (kWork / "e").string()) == 2);
}

TEST_CASE_FIXTURE(Workdir, "estimate on a csv file") {
  const fs::path data = kWork / "data.csv";
  REQUIRE(run("generate --n 2000 --seed 3 --out " + data.string()) == 0);
  const fs::path out = kWork / "est.csv";
  REQUIRE(run("estimate --data " + data.string() +
              " --s-cols abs:x1,x2,x4 --b-cols x1,x2,x3 --estimators naive,dr,is_dr --draws 50 --boot 50 --out " +
              out.string()) == 0);
  const auto rows = lines(slurp(out));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "method,point,se,ci_low,ci_high,diagnostics");
  CHECK(fs::exists(out.string() + ".manifest.json"));
  for (const auto& r : rows) {
    if (r.rfind("dr,", 0) != 0) continue;
    std::istringstream in(r.substr(3));
    double point = 0, se = 0;
    char comma = 0;
    in >> point >> comma >> se;
    CHECK(std::abs(point - 1.0) < 3.0 * se);
  }

  // Non-binary treatment names the data row.
  std::string text = slurp(data);
  auto all = lines(text);
  {
    std::ofstream bad(kWork / "bad.csv");
    for (std::size_t i = 0; i < all.size(); ++i) {
      std::string l = all[i];
      if (i == 3) l = l.substr(0, l.find(',')) + ",2" + l.substr(l.find(',', l.find(',') + 1));
      bad << l << '\n';
    }
  }
  CHECK(run("estimate --data " + (kWork / "bad.csv").string() + " --estimators naive --boot 20") == 2);
  CHECK(slurp(kWork / "stderr.txt").find("row 3") != std::string::npos);

  CHECK(run("estimate --data " + data.string() + " --s-cols nope --estimators naive --boot 20") == 2);
  CHECK(run("estimate --data " + data.string() + " --estimators naive --boot 20") == 0);
  CHECK(lines(slurp(kWork / "stdout.txt")).size() == 2);
  CHECK(run("estimate --estimators naive") == 2);
}

TEST_CASE_FIXTURE(Workdir, "selfcheck and version") {
  CHECK(run("selfcheck") == 0);
  CHECK(run("selfcheck --mutate-dr-sign") == 1);
  CHECK(run("--version") == 0);
  CHECK(slurp(kWork / "stdout.txt").find("drbayes") != std::string::npos);
}

TEST_CASE("csv reader") {
  std::istringstream in("y,z,a,b\n1,1,0.5,-2\n2,0,1.5,3\n");
  const auto sel = drbayes::read_dataset_csv(in, "y", "z", {"abs:b"}, {"a"});
  CHECK(sel.data.size() == 2);
  CHECK(sel.data.y[1] == 2.0);
  CHECK(sel.spec.s_columns.size() == 1);
  CHECK(sel.spec.s_columns[0].transform == drbayes::Transform::kAbsStandardized);

  std::istringstream missing("y,z,a\n1,1,\n");
  CHECK_THROWS(drbayes::read_dataset_csv(missing, "y", "z", {"a"}, {}));
}
