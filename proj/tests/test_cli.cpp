#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(EERL_BIN) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  RunResult r;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path case_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("eer-cli-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> ls;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) ls.push_back(line);
  return ls;
}

std::string line_with(const std::string& text, const std::string& prefix) {
  for (const auto& line : lines_of(text))
    if (line.rfind(prefix, 0) == 0) return line;
  return "";
}

bool has(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

const char* kUniversity =
    "entity student 5\n"
    "entity course 4\n"
    "entity prof 3\n"
    "relation takes student course\n"
    "relation prereq course course\n"
    "relation advises prof student one prof\n";

const char* kTriple =
    "entity a 4\n"
    "entity b 3\n"
    "entity c 3\n"
    "relation r1 a b\n"
    "relation r2 a c\n"
    "relation r3 b c\n";

}  // namespace

TEST_CASE("schema-check reports sizes and tying counts") {
  fs::path dir = case_dir("schema-check");
  write_file(dir / "u.schema", kUniversity);

  RunResult r = run_cli("schema-check --schema " + (dir / "u.schema").string());
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "entities: 3"));
  CHECK(has(r.out, "student x5"));
  CHECK(has(r.out, "relations: 3"));
  CHECK(has(r.out, "prereq (size 16)"));
  CHECK(has(r.out, "advises (size 15) one prof"));
  CHECK(has(r.out, "coupled vector size: 51"));
  CHECK(has(r.out, "total classes: 45"));

  RunResult missing = run_cli("schema-check --schema " + (dir / "nope.schema").string());
  CHECK(missing.code == 2);
  CHECK(has(missing.out, "cannot open"));

  write_file(dir / "bad.schema", "entity a zero\n");
  RunResult bad = run_cli("schema-check --schema " + (dir / "bad.schema").string());
  CHECK(bad.code == 2);
  CHECK(has(bad.out, "line 1"));

  CHECK(run_cli("schema-check --bogus-flag x").code == 1);
  CHECK(run_cli("").code == 1);
  fs::remove_all(dir);
}

TEST_CASE("pattern writes a PGM image and a class report") {
  fs::path dir = case_dir("pattern");
  write_file(dir / "u.schema", kUniversity);

  RunResult r = run_cli("pattern --schema " + (dir / "u.schema").string() + " --out " +
                        (dir / "pat.pgm").string() + " --report " + (dir / "rep.txt").string());
  REQUIRE(r.code == 0);
  std::string pgm = slurp_file(dir / "pat.pgm");
  CHECK(pgm.rfind("P2\n51 51\n41\n", 0) == 0);
  CHECK(has(slurp_file(dir / "rep.txt"), "total classes: 45"));
  fs::remove_all(dir);
}

TEST_CASE("check-equivariance passes on a sound layer and fails when tying is broken") {
  fs::path dir = case_dir("equivariance");
  write_file(dir / "t.schema", kTriple);
  write_file(dir / "u.schema", kUniversity);

  RunResult ok = run_cli("check-equivariance --schema " + (dir / "t.schema").string() +
                         " --trials 10 --seed 3");
  REQUIRE(ok.code == 0);
  CHECK(has(ok.out, "pass  legal-commute"));
  CHECK(has(ok.out, "pass  illegal-violate"));
  CHECK(has(ok.out, "pass  bias-invariant"));
  CHECK(has(ok.out, "pass  pooled-vs-oracle"));
  CHECK(has(ok.out, "pass  gradient-check"));
  CHECK(has(ok.out, "all checks passed"));

  RunResult broken = run_cli("check-equivariance --schema " + (dir / "t.schema").string() +
                             " --trials 10 --seed 3 --break-tying");
  CHECK(broken.code == 2);
  CHECK(has(broken.out, "FAIL"));
  CHECK(has(broken.out, "checks failed"));

  // self-relation: dense oracle checks only, pooled path skipped
  RunResult self = run_cli("check-equivariance --schema " + (dir / "u.schema").string() +
                           " --trials 10 --seed 3");
  REQUIRE(self.code == 0);
  CHECK(has(self.out, "oracle checks only"));
  CHECK(!has(self.out, "pooled-vs-oracle"));

  write_file(dir / "big.schema", "entity z 5000\nrelation r z\n");
  RunResult big = run_cli("check-equivariance --schema " + (dir / "big.schema").string());
  CHECK(big.code == 2);
  CHECK(has(big.out, "too large"));
  fs::remove_all(dir);
}

TEST_CASE("gen writes a dataset with a replayable manifest") {
  fs::path dir = case_dir("gen");
  fs::path data = dir / "data";

  RunResult r = run_cli("gen --out " + data.string() +
                        " --n 8,7,6 --h 2 --mode cp --sparsity 0.5 --min-per-line 2 --seed 4");
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "/146 entries"));
  for (const char* name : {"schema.txt", "r12.train.csv", "r12.test.csv", "r13.train.csv",
                           "r13.test.csv", "r23.train.csv", "r23.test.csv", "manifest.json"})
    REQUIRE(fs::exists(data / name));

  nlohmann::json m = nlohmann::json::parse(slurp_file(data / "manifest.json"));
  auto tokens = m.at("command").get<std::vector<std::string>>();
  REQUIRE(tokens.size() >= 2);
  CHECK(tokens[0] == "gen");
  bool saw_sparsity = false;
  for (size_t t = 0; t + 1 < tokens.size(); ++t)
    saw_sparsity = saw_sparsity || (tokens[t] == "--sparsity" && tokens[t + 1] == "0.5");
  CHECK(saw_sparsity);

  // replay regenerates the same dataset byte for byte
  std::string before = slurp_file(data / "r12.train.csv");
  RunResult replayed = run_cli("replay --manifest " + (data / "manifest.json").string());
  REQUIRE(replayed.code == 0);
  CHECK(slurp_file(data / "r12.train.csv") == before);

  CHECK(run_cli("gen --out " + (dir / "d2").string() + " --mode banana").code == 2);
  CHECK(run_cli("replay --manifest " + (dir / "nope.json").string()).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("train-eern fits, saves a model, and eval reloads it") {
  fs::path dir = case_dir("train-eern");
  fs::path data = dir / "data";
  REQUIRE(run_cli("gen --out " + data.string() +
                  " --n 7,6,5 --h 2 --mode cp --sparsity 0.6 --min-per-line 2 --seed 9")
              .code == 0);

  fs::path run1 = dir / "run1";
  RunResult tr = run_cli("train-eern --data " + data.string() +
                         " --target-relation r12 --out " + run1.string() +
                         " --layers 1 --width 6 --h-code 3 --epochs 40 --lr 0.01 --seed 1" +
                         " --run-id trial");
  REQUIRE(tr.code == 0);
  CHECK(line_with(tr.out, "train_rmse ") != "");
  CHECK(line_with(tr.out, "test_rmse ") != "");
  for (const char* name : {"model/config.txt", "model/schema.txt", "codes.csv", "metrics.csv",
                           "manifest.json"})
    REQUIRE(fs::exists(run1 / name));

  auto metrics = lines_of(slurp_file(run1 / "metrics.csv"));
  REQUIRE(metrics.size() == 2);
  CHECK(metrics[0] == "run_id,method,mode,sparsity,seed,train_rmse,test_rmse,seconds");
  CHECK(metrics[1].rfind("trial,eern,cp,0.6,1,", 0) == 0);

  nlohmann::json m = nlohmann::json::parse(slurp_file(run1 / "manifest.json"));
  CHECK(std::isfinite(m.at("metrics").at("test_rmse").get<double>()));

  RunResult ev = run_cli("eval --model " + run1.string() + " --data " + data.string() +
                         " --target-relation r12");
  REQUIRE(ev.code == 0);
  CHECK(line_with(ev.out, "test_rmse ") == line_with(tr.out, "test_rmse "));

  CHECK(run_cli("train-eern --data " + data.string() + " --target-relation zz --out " +
                (dir / "r2").string())
            .code == 2);
  CHECK(run_cli("train-eern --data " + (dir / "missing").string() +
                " --target-relation r12 --out " + (dir / "r3").string())
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("train-cmtf fits both factorization baselines") {
  fs::path dir = case_dir("train-cmtf");
  fs::path data = dir / "data";
  REQUIRE(run_cli("gen --out " + data.string() +
                  " --n 7,6,5 --h 2 --mode tucker --sparsity 0.7 --min-per-line 2 --seed 11")
              .code == 0);

  fs::path runc = dir / "ccpf";
  RunResult cp = run_cli("train-cmtf --data " + data.string() +
                         " --target-relation r12 --method ccpf --out " + runc.string() +
                         " --rank 3 --iters 150 --lr 0.2 --seed 1 --run-id cp1");
  REQUIRE(cp.code == 0);
  CHECK(line_with(cp.out, "test_rmse ") != "");
  auto factors = lines_of(slurp_file(runc / "factors.csv"));
  REQUIRE(!factors.empty());
  CHECK(factors[0] == "kind,name,instance,f1,f2,f3");
  CHECK(factors.size() == 1u + 7 + 6 + 5);  // entity rows only for cp
  auto metrics = lines_of(slurp_file(runc / "metrics.csv"));
  REQUIRE(metrics.size() == 2);
  CHECK(metrics[1].rfind("cp1,ccpf,tucker,0.7,1,", 0) == 0);

  RunResult tk = run_cli("train-cmtf --data " + data.string() +
                         " --target-relation r12 --method ctkf --out " + (dir / "ctkf").string() +
                         " --rank 3 --iters 150 --lr 0.2 --seed 1");
  REQUIRE(tk.code == 0);
  auto tf = lines_of(slurp_file(dir / "ctkf" / "factors.csv"));
  CHECK(tf.size() == 1u + 7 + 6 + 5 + 9);  // plus 3x3 core rows

  RunResult div = run_cli("train-cmtf --data " + data.string() +
                          " --target-relation r12 --method ccpf --out " + (dir / "div").string() +
                          " --rank 3 --iters 50 --lr 1e9 --seed 1");
  CHECK(div.code == 3);
  CHECK(has(div.out, "diverged"));

  CHECK(run_cli("train-cmtf --data " + data.string() +
                " --target-relation r12 --method banana --out " + (dir / "x").string())
            .code == 2);
  fs::remove_all(dir);
}

TEST_CASE("replay re-runs a training command and appends metrics") {
  fs::path dir = case_dir("replay");
  fs::path data = dir / "data";
  REQUIRE(run_cli("gen --out " + data.string() +
                  " --n 6,5,4 --h 1 --mode cp --sparsity 0.7 --min-per-line 1 --seed 2")
              .code == 0);
  fs::path run1 = dir / "run1";
  REQUIRE(run_cli("train-eern --data " + data.string() + " --target-relation r23 --out " +
                  run1.string() + " --layers 1 --width 4 --h-code 2 --epochs 10 --seed 5")
              .code == 0);

  RunResult rp = run_cli("replay --manifest " + (run1 / "manifest.json").string());
  REQUIRE(rp.code == 0);
  auto metrics = lines_of(slurp_file(run1 / "metrics.csv"));
  REQUIRE(metrics.size() == 3);  // header + original + replay
  // deterministic training: identical rmse columns, only the timing may move
  auto cut = [](const std::string& row) { return row.substr(0, row.rfind(',')); };
  CHECK(cut(metrics[1]) == cut(metrics[2]));
  fs::remove_all(dir);
}

TEST_CASE("sweep writes one CSV row per level, method, and seed") {
  fs::path dir = case_dir("sweep");
  fs::path csv = dir / "sweep.csv";

  RunResult r = run_cli("sweep --kind sparsity --out " + csv.string() +
                        " --n 8 --h 1 --seeds 1 --epochs 10 --iters 20");
  REQUIRE(r.code == 0);
  auto rows = lines_of(slurp_file(csv));
  REQUIRE(rows.size() == 1u + 3 * 3);
  CHECK(rows[0] == "kind,level,method,seed,test_rmse");
  int eern = 0, ccpf = 0, ctkf = 0;
  for (const auto& row : rows) {
    eern += has(row, ",eern,");
    ccpf += has(row, ",ccpf,");
    ctkf += has(row, ",ctkf,");
  }
  CHECK(eern == 3);
  CHECK(ccpf == 3);
  CHECK(ctkf == 3);
  REQUIRE(fs::exists(dir / "sweep.csv.manifest.json"));

  RunResult side = run_cli("sweep --kind side-info --out " + (dir / "side.csv").string() +
                           " --n 8 --h 1 --seeds 1 --epochs 5");
  REQUIRE(side.code == 0);
  CHECK(lines_of(slurp_file(dir / "side.csv")).size() == 1u + 5);

  CHECK(run_cli("sweep --kind banana --out " + (dir / "x.csv").string()).code == 2);
  fs::remove_all(dir);
}
