#include "doctest.h"

#include "support.hpp"

#include <sys/wait.h>

#include "json.hpp"

using namespace dosgan::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(const TempDir& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(DOSGAN_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

const std::string kNet = " --image-size 8 --downsample-stages 2 --feature-dim 4 --base-width 2 --residual-blocks 1";

}  // namespace

TEST_CASE("usage and runtime exit codes") {
  TempDir t("cli_codes");
  CHECK(run(t, "--help").code == 0);
  CHECK(run(t, "train --help").out.find("--lambda-im") != std::string::npos);
  CHECK(run(t, "").code == 2);
  CHECK(run(t, "synth").code == 2);
  CHECK(run(t, "synth --out " + (t / "x").string() + " --bogus 1").code == 2);
  CHECK(run(t, "frobnicate").code == 2);
  CHECK(run(t, "synth --domains many --out " + (t / "x").string()).code == 2);
  CHECK(run(t, "synth --config " + (t / "missing.cfg").string() + " --out " + (t / "x").string()).code == 2);

  const Run bad = run(t, "pretrain --data " + (t / "nowhere").string() + " --out " + (t / "p").string());
  CHECK(bad.code == 1);
  CHECK(bad.err.find("does not exist") != std::string::npos);
  CHECK(run(t, "synth --domains 1 --out " + (t / "x").string()).code == 1);
}

TEST_CASE("config file values yield to flags") {
  TempDir t("cli_config");
  std::ofstream(t / "synth.cfg") << "# toy\ndomains = 2\nper_domain = 3\nsize = 8\nseed = 5\n";
  const Run r = run(t, "synth --config " + (t / "synth.cfg").string() + " --domains 3 --out " + (t / "d").string());
  REQUIRE(r.code == 0);
  CHECK(fs::exists(t / "d/domain_2"));
  CHECK(count_files(t / "d/domain_0", ".png") == 3);

  REQUIRE(run(t, "synth --domains 3 --per-domain 3 --size 8 --seed 5 --out " + (t / "e").string()).code == 0);
  CHECK(read_file(t / "d/factors.tsv") == read_file(t / "e/factors.tsv"));
  CHECK(read_file(t / "d/domain_1/img_00002.png") == read_file(t / "e/domain_1/img_00002.png"));
}

TEST_CASE("full pipeline at toy scale") {
  TempDir t("cli_pipeline");
  const std::string data = (t / "data").string();
  REQUIRE(run(t, "synth --domains 3 --per-domain 6 --size 8 --seed 1 --out " + data).code == 0);

  const std::string no_cls = "train --data " + data + " --out " + (t / "nc").string() + kNet + " --iters 2";
  const Run missing = run(t, no_cls);
  CHECK(missing.code == 1);
  CHECK(missing.err.find("run pretrain first") != std::string::npos);

  const Run pre = run(t, "pretrain --data " + data + " --out " + (t / "pre").string() + kNet +
                             " --iters 10 --eval-interval 5 --batch-size 4 --holdout 0.34");
  REQUIRE(pre.code == 0);
  CHECK(pre.out.find("train_accuracy") != std::string::npos);
  CHECK(fs::exists(t / "pre/classifier.ckpt"));
  CHECK(fs::exists(t / "pre/styles.json"));
  const std::string cls = (t / "pre/classifier.ckpt").string();

  const Run resumed = run(t, "pretrain --data " + data + " --out " + (t / "pre2").string() + kNet +
                                 " --iters 14 --eval-interval 100 --batch-size 4 --holdout 0.34 --resume " + cls);
  REQUIRE(resumed.code == 0);
  CHECK(resumed.out.find("iterations 14") != std::string::npos);

  const std::string train = "train --data " + data + " --classifier " + cls + kNet +
                            " --iters 4 --batch-size 2 --checkpoint-interval 2 --log-interval 1";
  REQUIRE(run(t, train + " --mode nc --out " + (t / "nc").string()).code == 0);
  REQUIRE(run(t, train + " --mode c --out " + (t / "c").string()).code == 0);
  CHECK(run(t, "train --data " + data + kNet + " --iters 2 --batch-size 2 --mode ablation_p --out " +
                   (t / "p").string()).code == 0);
  CHECK(run(t, train + " --mode sideways --out " + (t / "z").string()).code != 0);

  std::ifstream log(t / "nc/train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    CHECK(nlohmann::json::parse(line).contains("total_net"));
    ++lines;
  }
  CHECK(lines == 4);
  const std::string ckpt = (t / "nc/ckpt_4.ckpt").string();
  REQUIRE(fs::exists(ckpt));

  const std::string inputs = data + "/domain_0";
  REQUIRE(run(t, "translate --checkpoint " + ckpt + " --input " + inputs + " --target-domain 2 --out " +
                     (t / "tr").string()).code == 0);
  CHECK(count_files(t / "tr", ".png") == 6);
  CHECK(fs::exists(t / "tr/img_00000_to_2.png"));
  const auto results = nlohmann::json::parse(read_file(t / "tr/results.json"));
  CHECK(results.size() == 6);
  CHECK(results[0]["target_domain"] == 2);
  CHECK(run(t, "translate --checkpoint " + ckpt + " --input " + inputs + " --target-domain 2 --reconstruct --out " +
                   (t / "tr2").string()).code == 2);

  const std::string c_ckpt = (t / "c/ckpt_4.ckpt").string();
  const std::string img0 = data + "/domain_0/img_00000.png";
  REQUIRE(run(t, "translate --checkpoint " + c_ckpt + " --input " + img0 + " --cond " + data +
                     "/domain_1/img_00000.png --out " + (t / "cond").string()).code == 0);
  CHECK(count_files(t / "cond", ".png") == 1);
  REQUIRE(run(t, "interpolate --checkpoint " + c_ckpt + " --input " + img0 + " --cond1 " + data +
                     "/domain_1/img_00000.png --cond2 " + data + "/domain_2/img_00000.png --steps 4 --out " +
                     (t / "interp").string()).code == 0);
  CHECK(fs::exists(t / "interp/frame_03.png"));
  CHECK(fs::exists(t / "interp/grid.png"));

  REQUIRE(run(t, "evaluate --checkpoint " + ckpt + " --data " + data + " --evaluator " + cls +
                     " --protocol identity_topk --k 1,2 --out " + (t / "ev").string()).code == 0);
  const auto report = nlohmann::json::parse(read_file(t / "ev/report.json"));
  CHECK(report["metrics"].contains("top1"));
  CHECK(report["metrics"].contains("top2"));
  CHECK(report["metrics"]["top1"]["samples"] == 18);
  CHECK(read_file(t / "ev/report.csv").find("identity_topk,top2,") != std::string::npos);
  CHECK(run(t, "evaluate --checkpoint " + ckpt + " --data " + data + " --protocol identity_topk --out " +
                   (t / "ev2").string()).code == 1);
}
