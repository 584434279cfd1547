#include <nroy/io.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

namespace fs = std::filesystem;
using nroy::json;

namespace {

const std::string kCli = NROY_CLI_PATH;
const std::string kStudy = std::string(NROY_STUDY_DIR) + "/two_box.json";

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("nroy_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

int run(const std::string& args) {
  const int status = std::system((kCli + " " + args + " 2>/dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json manifest(const fs::path& dir) { return json::parse(slurp(dir / "manifest.json")); }

void expect_outputs_parse(const fs::path& dir) {
  const auto m = manifest(dir);
  ASSERT_TRUE(m.contains("outputs"));
  for (const auto& [key, file] : m["outputs"].items()) {
    const auto path = dir / file.get<std::string>();
    ASSERT_TRUE(fs::exists(path)) << key;
    const auto text = slurp(path);
    const auto ext = path.extension().string();
    if (ext == ".json") {
      EXPECT_NO_THROW(json::parse(text)) << key;
    } else if (ext == ".jsonl") {
      std::istringstream is(text);
      std::string line;
      while (std::getline(is, line)) EXPECT_NO_THROW(json::parse(line)) << key;
    } else if (ext == ".svg") {
      EXPECT_NE(text.find("<svg"), std::string::npos) << key;
      EXPECT_NE(text.find("</svg>"), std::string::npos) << key;
    } else if (ext == ".csv") {
      EXPECT_NE(text.find('\n'), std::string::npos) << key;
    }
  }
}

}  // namespace

TEST(Cli, MatchRecordsWaves) {
  const auto out = scratch("match");
  ASSERT_EQ(run("match --config " + kStudy + " --out " + out.string()), 0);
  const auto m = manifest(out);
  EXPECT_EQ(m["command"], "match");
  EXPECT_GE(m["waves"].size(), 1u);
  EXPECT_EQ(m["waves"][0]["wave"], 1);
  for (const auto& [key, file] : m["outputs"].items()) EXPECT_TRUE(fs::path(file.get<std::string>()).is_relative()) << key;
  expect_outputs_parse(out);
}

TEST(Cli, ValidationErrorsExitTwo) {
  const auto out = scratch("abc_zero");
  EXPECT_EQ(run("abc --budget 0 --config " + kStudy + " --out " + out.string()), 2);
  EXPECT_EQ(run("abc --config /nonexistent.json --out " + out.string()), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("match --out " + out.string()), 2);

  const auto bad = scratch("bad_study");
  fs::create_directories(bad);
  std::ofstream(bad / "study.json") << R"({"schema_version": 1, "bogus": 3})";
  EXPECT_EQ(run("design --config " + (bad / "study.json").string() + " --out " + bad.string()), 2);
  std::ofstream(bad / "v2.json") << R"({"schema_version": 2})";
  EXPECT_EQ(run("design --config " + (bad / "v2.json").string() + " --out " + bad.string()), 2);
}

TEST(Cli, EmptyPlausibleSetExitsThree) {
  const auto dir = scratch("empty");
  fs::create_directories(dir);
  auto study = json::parse(slurp(kStudy));
  study["waves"] = json::array({json{{"T_surface", {400.0, 401.0}}}});
  study["design"]["n"] = 8;
  study["match"]["max_draws"] = 2000;
  std::ofstream(dir / "study.json") << study.dump();
  EXPECT_EQ(run("match --config " + (dir / "study.json").string() + " --out " + (dir / "out").string()), 3);
  EXPECT_EQ(manifest(dir / "out")["status"], "empty_plausible_set");
}

TEST(Cli, OracleReportAgreesWithGrid) {
  const auto out = scratch("report");
  ASSERT_EQ(run("report --oracle --config " + kStudy + " --out " + out.string()), 0);
  const std::string svg = slurp(out / "surface.svg");
  const std::regex rect("<rect class=\"(\\w+)\" x=\"([0-9.]+)\" y=\"([0-9.]+)\"");
  std::size_t cells = 0, agree = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), rect); it != std::sregex_iterator(); ++it) {
    const auto ix = static_cast<std::size_t>(std::lround((std::stod((*it)[2]) - 50.0) / 6.0));
    const auto iy = 99 - static_cast<std::size_t>(std::lround((std::stod((*it)[3]) - 50.0) / 6.0));
    const double gamma = 1.0 + (ix + 0.5) / 100.0, d = 30.0 + 20.0 * (iy + 0.5) / 100.0;
    const double t = 288.0 + (3.0 + 5.35 * std::log(2.0) * gamma) / (1.0 + (d - 40.0) / 100.0);
    // The study's last wave is the [294.5, 295.5] window.
    if ((*it)[1] == (t >= 294.5 && t <= 295.5 ? "plausible" : "ruled_out")) ++agree;
    ++cells;
  }
  EXPECT_EQ(cells, 10000u);
  EXPECT_EQ(agree, cells);
  expect_outputs_parse(out);
}

TEST(Cli, EverySubcommandWritesParsableOutputs) {
  const auto root = scratch("all");
  ASSERT_EQ(run("design --config " + kStudy + " --out " + (root / "design").string()), 0);
  expect_outputs_parse(root / "design");
  ASSERT_EQ(run("run --design " + (root / "design/ensemble.jsonl").string() + " --config " + kStudy + " --out " +
                (root / "run").string()),
            0);
  expect_outputs_parse(root / "run");
  ASSERT_EQ(run("fit --ensemble " + (root / "run/ensemble.jsonl").string() + " --config " + kStudy + " --out " +
                (root / "fit").string()),
            0);
  expect_outputs_parse(root / "fit");
  ASSERT_EQ(run("predict --model " + (root / "fit/model.json").string() + " --theta 1.5,40 --theta 1.2,35 --config " +
                kStudy + " --out " + (root / "predict").string()),
            0);
  expect_outputs_parse(root / "predict");
  std::istringstream preds(slurp(root / "predict/predictions.jsonl"));
  std::string line;
  int rows = 0;
  while (std::getline(preds, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(j.contains("probability"));
    ++rows;
  }
  EXPECT_EQ(rows, 2);
  ASSERT_EQ(run("abc --config " + kStudy + " --out " + (root / "abc").string()), 0);
  expect_outputs_parse(root / "abc");
  ASSERT_EQ(run("acquire --config " + kStudy + " --out " + (root / "acquire").string()), 0);
  expect_outputs_parse(root / "acquire");
  ASSERT_EQ(run("report --model " + (root / "fit/model.json").string() + " --ensemble " +
                (root / "run/ensemble.jsonl").string() + " --config " + kStudy + " --out " + (root / "report").string()),
            0);
  expect_outputs_parse(root / "report");
}

TEST(Cli, ManifestReplayIsByteIdentical) {
  const auto root = scratch("replay");
  for (const std::string cmd : {"match", "abc", "design"}) {
    const auto first = root / (cmd + "_1"), second = root / (cmd + "_2");
    ASSERT_EQ(run(cmd + " --config " + kStudy + " --seed 5 --out " + first.string()), 0) << cmd;
    ASSERT_EQ(run(cmd + " --config " + (first / "manifest.json").string() + " --out " + second.string()), 0) << cmd;
    EXPECT_EQ(slurp(first / "ensemble.jsonl"), slurp(second / "ensemble.jsonl")) << cmd;
    EXPECT_EQ(manifest(first)["study"], manifest(second)["study"]) << cmd;
  }
}

TEST(Cli, WorkerCountDoesNotChangeResults) {
  const auto root = scratch("workers");
  ASSERT_EQ(run("abc --workers 1 --config " + kStudy + " --out " + (root / "w1").string()), 0);
  ASSERT_EQ(run("abc --workers 3 --config " + kStudy + " --out " + (root / "w3").string()), 0);
  EXPECT_EQ(slurp(root / "w1/ensemble.jsonl"), slurp(root / "w3/ensemble.jsonl"));
}
