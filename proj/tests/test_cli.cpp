// Eigen before httplib; see src/review/server.cpp.
#include <doctest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <sstream>

#include "cli.hpp"
#include "polypbench/bench.hpp"
#include "polypbench/io.hpp"
#include "support.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace polypbench;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

/// Every regular file under `dir` except run configs, keyed by relative path.
std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file() && !e.path().filename().string().ends_with("run_config.json"))
      files[std::filesystem::relative(e.path(), dir).string()] = test::slurp(e.path());
  return files;
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run({}).code == cli::kUsageError);
  CHECK(run({"--help"}).code == cli::kSuccess);
  CHECK(run({"phantom-gen", "--help"}).out.find("--healthy-fraction") != std::string::npos);
  CHECK(run({"no-such-command"}).code == cli::kUsageError);
  CHECK(run({"phantom-gen", "--n", "0"}).code == cli::kUsageError);
  CHECK(run({"phantom-gen", "--preset", "weird"}).code == cli::kUsageError);
  CHECK(run({"train-uncond"}).code == cli::kUsageError);  // --data is required
  test::TempDir dir;
  const Result missing = run({"train-uncond", "--data", (dir / "nothing").string()});
  CHECK(missing.code == cli::kDomainError);
  CHECK(missing.err.rfind("error: ", 0) == 0);
  CHECK(run({"rerun", (dir / "none.json").string()}).code == cli::kDomainError);
  CHECK(run({"evaluate", "--data", (dir / "x").string(), "--adapter", "nonsense"}).code == cli::kDomainError);
}

TEST_CASE("phantom-gen is deterministic and rerunnable") {
  test::TempDir dir;
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run({"phantom-gen", "--n", "6", "--seed", "3", "--healthy-fraction", "0.5", "--out", a}).code == 0);
  REQUIRE(run({"phantom-gen", "--n", "6", "--seed", "3", "--healthy-fraction", "0.5", "--out", b}).code == 0);
  CHECK(snapshot(a) == snapshot(b));
  CHECK(load_dataset(a).size() == 6);

  const json config = json::parse(test::slurp(dir / "a" / "run_config.json"));
  CHECK(config["command"] == "phantom-gen");
  CHECK(config["options"]["seed"] == "3");
  CHECK(config["options"]["size"] == "64");  // defaults are recorded too

  const auto before = snapshot(a);
  std::filesystem::remove_all(dir / "a" / "images");
  REQUIRE(run({"rerun", (dir / "a" / "run_config.json").string()}).code == 0);
  CHECK(snapshot(a) == before);

  REQUIRE(run({"phantom-gen", "--n", "6", "--seed", "4", "--out", b}).code == 0);
  CHECK(snapshot(a) != snapshot(b));
}

TEST_CASE("tiny end-to-end run") {
  test::TempDir dir;
  auto p = [&](const std::string& name) { return (dir / name).string(); };
  REQUIRE(run({"phantom-gen", "--n", "8", "--seed", "1", "--healthy-fraction", "0.25", "--prefix", "train", "--out",
               p("train")})
              .code == 0);
  REQUIRE(run({"phantom-gen", "--n", "3", "--seed", "2", "--prefix", "test", "--out", p("test")}).code == 0);
  REQUIRE(run({"phantom-gen", "--n", "3", "--seed", "3", "--preset", "ood", "--prefix", "ood", "--out", p("ood")})
              .code == 0);
  for (const char* cmd : {"train-inpainter", "train-uncond", "train-repainter"}) {
    const Result r = run({cmd, "--data", p("train"), "--epochs", "1", "--width", "4", "--out", p("models")});
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
  }
  REQUIRE(run({"train-segmenter", "--data", p("train"), "--epochs", "1", "--width", "4", "--out", p("models")}).code ==
          0);
  CHECK(std::filesystem::exists(dir / "models" / "toyseg.pbck"));
  CHECK(std::filesystem::exists(dir / "models" / "uncond.run_config.json"));

  const std::vector<std::string> steps{"--steps-bg", "3", "--steps-edit", "2", "--steps-refine", "2"};
  std::vector<std::string> build{"build-bench", "--data", p("test"), "--models", p("models"), "--seed", "5"};
  build.insert(build.end(), steps.begin(), steps.end());
  auto build_a = build, build_b = build;
  build_a.insert(build_a.end(), {"--out", p("bench")});
  build_b.insert(build_b.end(), {"--out", p("bench2"), "--jobs", "2"});
  const Result built = run(build_a);
  CAPTURE(built.err);
  REQUIRE(built.code == 0);
  CHECK(built.out.find("family position_0.2:") != std::string::npos);
  REQUIRE(run(build_b).code == 0);
  CHECK(snapshot(p("bench")) == snapshot(p("bench2")));
  CHECK(read_manifest(dir / "bench" / "manifest.jsonl").records.size() == 18);

  REQUIRE(run({"recon-check", "--data", p("test"), "--models", p("models"), "--steps-edit", "2", "--segmenter",
               p("models") + "/toyseg.pbck", "--out", p("recon")})
              .code == 0);
  CHECK(load_dataset(dir / "recon").size() == 3);

  for (const std::string& adapter : std::vector<std::string>{"oracle", "empty", p("models") + "/toyseg.pbck"}) {
    const Result r = run({"evaluate", "--data", p("test"), "--bench", p("bench"), "--recon", p("recon"),
                          "--include-pending", "--adapter", adapter, "--out", p("eval")});
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
  }
  const Result report = run({"report", "--inputs", p("eval"), "--out", p("report")});
  REQUIRE(report.code == 0);
  CHECK(report.out.find("Real Dice") != std::string::npos);
  const std::string csv = test::slurp(dir / "report" / "report.csv");
  const auto rows = parse_report_csv(csv);
  REQUIRE(rows.size() == 3);
  const auto oracle = std::find_if(rows.begin(), rows.end(), [](const EvaluationRow& r) { return r.model == "oracle"; });
  REQUIRE(oracle != rows.end());
  CHECK(oracle->real_dice == 100.0);
  CHECK(oracle->recon_drop.value() == 0.0);

  const Result quality = run({"quality-report", "--real", p("test"), "--synthetic", "bench=" + p("bench"), "--out",
                              p("quality")});
  CAPTURE(quality.err);
  REQUIRE(quality.code == 0);
  CHECK(quality.out.find("MS-SSIM") != std::string::npos);
  CHECK(run({"quality-report", "--real", p("test"), "--synthetic", "nameless"}).code == cli::kDomainError);

  const Result augment = run({"augment-experiment", "--train", p("train"), "--id-test", p("test"), "--ood-test",
                              p("ood"), "--synthetic", "bench=" + p("bench"), "--include-pending", "--seeds", "1,2",
                              "--epochs", "1", "--widths", "4", "--out", p("augment")});
  CAPTURE(augment.err);
  REQUIRE(augment.code == 0);
  CHECK(augment.out.find("toyseg-w4") != std::string::npos);
  CHECK(augment.out.find("baseline") != std::string::npos);
  CHECK(augment.err.find("fewer than 3 seeds") != std::string::npos);
  // Nothing is curated, so without --include-pending there is nothing to add.
  CHECK(run({"augment-experiment", "--train", p("train"), "--id-test", p("test"), "--ood-test", p("ood"),
             "--synthetic", "bench=" + p("bench")})
            .code == cli::kDomainError);
}

TEST_CASE("review-serve answers and stops on SIGTERM") {
  test::TempDir dir;
  REQUIRE(run({"phantom-gen", "--n", "2", "--out", (dir / "real").string()}).code == 0);
  BenchmarkManifest empty;
  write_manifest(empty, dir / "manifest.jsonl");

  int out_pipe[2];
  REQUIRE(::pipe(out_pipe) == 0);
  const pid_t child = ::fork();
  REQUIRE(child >= 0);
  if (child == 0) {
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    const std::string manifest = (dir / "manifest.jsonl").string(), real = (dir / "real").string();
    ::execl(POLYPBENCH_EXE, "polypbench", "review-serve", "--manifest", manifest.c_str(), "--real", real.c_str(),
            "--port", "0", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(out_pipe[1]);
  std::string line;
  char ch;
  while (::read(out_pipe[0], &ch, 1) == 1 && ch != '\n') line.push_back(ch);
  REQUIRE(line.rfind("listening on http://127.0.0.1:", 0) == 0);
  const int port = std::stoi(line.substr(line.rfind(':') + 1));

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/session/next?mode=blinded_vote&reviewer=r");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["total"] == 2);

  ::kill(child, SIGTERM);
  int status = 0;
  ::waitpid(child, &status, 0);
  ::close(out_pipe[0]);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}
