// Integration tests driving the installed CLI binary end to end.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ingraph/dataset.hpp"

using namespace ingraph;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("ingraph_cli_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = std::string(INGRAPH_CLI_PATH) + " " + args;
  if (!stdout_file.empty())
    cmd += " > " + stdout_file.string() + " 2>&1";
  else
    cmd += " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void write_config(const fs::path& path, const json& extra) {
  json cfg = {{"data_dir", "data"}, {"checkpoint", "model.igk1"},
              {"report", "report.json"}, {"iterations", 10},
              {"batch_size", 4},    {"seed", 0}};
  for (const auto& [k, v] : extra.items()) cfg[k] = v;
  std::ofstream os(path);
  os << cfg.dump(2);
}

std::vector<json> parse_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream is(p);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] != '{') continue;
    out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace

TEST_CASE("gen-data is deterministic per seed") {
  TempDir dir("gen");
  const std::string a = (dir.path / "a").string();
  const std::string b = (dir.path / "b").string();
  REQUIRE(run_cli("gen-data --out " + a + " --images 6 --verbs 4 --seed 9") == 0);
  REQUIRE(run_cli("gen-data --out " + b + " --images 6 --verbs 4 --seed 9") == 0);
  CHECK(slurp(fs::path(a) / "annotations.jsonl") ==
        slurp(fs::path(b) / "annotations.jsonl"));
  CHECK(slurp(fs::path(a) / "images" / "img_00000.igim") ==
        slurp(fs::path(b) / "images" / "img_00000.igim"));

  const std::string c = (dir.path / "c").string();
  REQUIRE(run_cli("gen-data --out " + c + " --images 6 --verbs 4 --seed 10") == 0);
  CHECK(slurp(fs::path(a) / "annotations.jsonl") !=
        slurp(fs::path(c) / "annotations.jsonl"));
}

TEST_CASE("train smoke run: finite loss, checkpoint, JSON log lines") {
  TempDir dir("train");
  REQUIRE(run_cli("gen-data --out " + (dir.path / "data").string() +
                  " --images 8 --verbs 4 --seed 0") == 0);
  write_config(dir.path / "cfg.json", {});
  const int rc = run_cli("train --config " + (dir.path / "cfg.json").string() +
                             " --data-dir " + (dir.path / "data").string() +
                             " --checkpoint " + (dir.path / "m.igk1").string(),
                         dir.path / "train.log");
  REQUIRE(rc == 0);
  CHECK(fs::exists(dir.path / "m.igk1"));
  CHECK(fs::exists(dir.path / "m.igk1.json"));

  const auto lines = parse_jsonl(dir.path / "train.log");
  REQUIRE(lines.size() == 10);
  for (const json& line : lines) {
    REQUIRE(line.contains("iter"));
    REQUIRE(line.contains("loss"));
    REQUIRE(line.contains("loss_h"));
    REQUIRE(line.contains("loss_o"));
    REQUIRE(line.contains("loss_s"));
    CHECK(std::isfinite(line["loss"].get<double>()));
  }
}

TEST_CASE("resumed training starts from a bit-exact forward pass") {
  TempDir dir("resume");
  REQUIRE(run_cli("gen-data --out " + (dir.path / "data").string() +
                  " --images 8 --verbs 4 --seed 1") == 0);
  write_config(dir.path / "cfg.json",
               {{"data_dir", (dir.path / "data").string()},
                {"checkpoint", (dir.path / "m.igk1").string()},
                {"iterations", 5}});
  REQUIRE(run_cli("train --config " + (dir.path / "cfg.json").string(),
                  dir.path / "first.log") == 0);

  write_config(dir.path / "cfg1.json",
               {{"data_dir", (dir.path / "data").string()},
                {"checkpoint", (dir.path / "m2.igk1").string()},
                {"iterations", 1}});
  const std::string resume_args = "train --config " +
                                  (dir.path / "cfg1.json").string() + " --resume " +
                                  (dir.path / "m.igk1").string();
  REQUIRE(run_cli(resume_args, dir.path / "resume1.log") == 0);
  REQUIRE(run_cli(resume_args, dir.path / "resume2.log") == 0);
  const auto l1 = parse_jsonl(dir.path / "resume1.log");
  const auto l2 = parse_jsonl(dir.path / "resume2.log");
  REQUIRE(l1.size() == 1);
  REQUIRE(l2.size() == 1);
  CHECK(l1[0]["loss"].get<double>() == l2[0]["loss"].get<double>());
}

TEST_CASE("eval writes detections and a schema-conforming report") {
  TempDir dir("eval");
  REQUIRE(run_cli("gen-data --out " + (dir.path / "data").string() +
                  " --images 8 --verbs 4 --seed 2") == 0);
  write_config(dir.path / "cfg.json", {{"data_dir", (dir.path / "data").string()},
                                       {"checkpoint", (dir.path / "m.igk1").string()},
                                       {"iterations", 3}});
  REQUIRE(run_cli("train --config " + (dir.path / "cfg.json").string()) == 0);
  REQUIRE(run_cli("eval --checkpoint " + (dir.path / "m.igk1").string() +
                  " --data " + (dir.path / "data").string() + " --report " +
                  (dir.path / "report.json").string()) == 0);

  REQUIRE(fs::exists(dir.path / "report.json"));
  REQUIRE(fs::exists(dir.path / "detections.jsonl"));
  const json report = json::parse(slurp(dir.path / "report.json"));
  REQUIRE(report.contains("role_map"));
  REQUIRE(report.contains("per_category_ap"));
  REQUIRE(report.contains("gt_count"));
  REQUIRE(report.contains("num_detections"));
  REQUIRE(report.contains("iou_threshold"));
  CHECK(report["role_map"].is_number());
  CHECK(report["per_category_ap"].is_object());
  CHECK(report["iou_threshold"].get<double>() == 0.5);
  const double mAP = report["role_map"].get<double>();
  CHECK(mAP >= 0.0);
  CHECK(mAP <= 1.0);

  const auto dets = read_detections((dir.path / "detections.jsonl").string());
  CHECK(dets.size() == report["num_detections"].get<std::size_t>());
}

TEST_CASE("eval on a dataset with no labeled pairs reports zero mAP") {
  TempDir dir("empty");
  // train a checkpoint on a normal dataset first
  REQUIRE(run_cli("gen-data --out " + (dir.path / "data").string() +
                  " --images 6 --verbs 4 --seed 3") == 0);
  write_config(dir.path / "cfg.json", {{"data_dir", (dir.path / "data").string()},
                                       {"checkpoint", (dir.path / "m.igk1").string()},
                                       {"iterations", 2}});
  REQUIRE(run_cli("train --config " + (dir.path / "cfg.json").string()) == 0);

  // a dataset whose only image has a human and no objects: no candidate
  // pairs, so no detections and an empty report
  const fs::path empty = dir.path / "empty_data";
  fs::create_directories(empty / "images");
  {
    SynthConfig one;
    one.num_images = 1;
    one.seed = 0;
    auto [images, anns] = generate_synthetic(one);
    write_image((empty / "images" / (images[0].id + ".igim")).string(), images[0]);
    std::ofstream os(empty / "annotations.jsonl");
    os << R"({"image_id":")" << images[0].id
       << R"(","humans":[[2,2,12,12]],"objects":[],"hois":[]})" << '\n';
  }
  REQUIRE(run_cli("eval --checkpoint " + (dir.path / "m.igk1").string() +
                  " --data " + empty.string() + " --report " +
                  (dir.path / "empty_report.json").string()) == 0);
  const json report = json::parse(slurp(dir.path / "empty_report.json"));
  CHECK(report["role_map"].get<double>() == 0.0);
  CHECK(report["num_detections"].get<std::size_t>() == 0);
}

TEST_CASE("train+eval are byte-deterministic given config and seed") {
  TempDir dir("determ");
  REQUIRE(run_cli("gen-data --out " + (dir.path / "data").string() +
                  " --images 8 --verbs 4 --seed 4") == 0);
  for (const char* tag : {"r1", "r2"}) {
    const fs::path rd = dir.path / tag;
    fs::create_directories(rd);
    write_config(dir.path / (std::string(tag) + ".json"),
                 {{"data_dir", (dir.path / "data").string()},
                  {"checkpoint", (rd / "m.igk1").string()},
                  {"report", (rd / "report.json").string()},
                  {"iterations", 5}});
    REQUIRE(run_cli("train --config " +
                    (dir.path / (std::string(tag) + ".json")).string()) == 0);
    REQUIRE(run_cli("eval --checkpoint " + (rd / "m.igk1").string() + " --data " +
                    (dir.path / "data").string() + " --report " +
                    (rd / "report.json").string()) == 0);
  }
  CHECK(slurp(dir.path / "r1" / "m.igk1") == slurp(dir.path / "r2" / "m.igk1"));
  CHECK(slurp(dir.path / "r1" / "report.json") ==
        slurp(dir.path / "r2" / "report.json"));
  CHECK(slurp(dir.path / "r1" / "detections.jsonl") ==
        slurp(dir.path / "r2" / "detections.jsonl"));
}

TEST_CASE("checkpoint/config mismatch yields a descriptive error and exit 1") {
  TempDir dir("mismatch");
  REQUIRE(run_cli("gen-data --out " + (dir.path / "data").string() +
                  " --images 6 --verbs 4 --seed 5") == 0);
  write_config(dir.path / "cfg.json", {{"data_dir", (dir.path / "data").string()},
                                       {"checkpoint", (dir.path / "m.igk1").string()},
                                       {"iterations", 2}});
  REQUIRE(run_cli("train --config " + (dir.path / "cfg.json").string()) == 0);

  // rewrite the sidecar with a different feature dim: tensor shapes mismatch
  json side = json::parse(slurp(dir.path / "m.igk1.json"));
  side["D"] = 16;
  {
    std::ofstream os(dir.path / "m.igk1.json");
    os << side.dump(2);
  }
  const int rc = run_cli("eval --checkpoint " + (dir.path / "m.igk1").string() +
                             " --data " + (dir.path / "data").string() +
                             " --report " + (dir.path / "r.json").string(),
                         dir.path / "err.log");
  CHECK(rc == 1);
  CHECK(slurp(dir.path / "err.log").find("shape") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected with exit 1") {
  TempDir dir("badcfg");
  {
    std::ofstream os(dir.path / "bad.json");
    os << R"({"data_dir":"x","learning_rote":0.1})";
  }
  const int rc = run_cli("train --config " + (dir.path / "bad.json").string(),
                         dir.path / "err.log");
  CHECK(rc == 1);
  CHECK(slurp(dir.path / "err.log").find("learning_rote") != std::string::npos);
}

TEST_CASE("grad-check passes clean and fails under fault injection") {
  TempDir dir("gc");
  const int clean = run_cli("grad-check --seed 0", dir.path / "clean.log");
  CHECK(clean == 0);
  const std::string log = slurp(dir.path / "clean.log");
  for (const char* group : {"op.matmul", "op.conv1x1", "op.bce_loss", "op.roi_pool",
                            "ingraph.hs.phi1.weight", "ingraph.os.theta2.weight",
                            "ingraph.ho.adjacency", "ingraph.hs.out.weight",
                            "head.human.fc1.weight", "head.spatial.conv1.weight",
                            "backbone.stem1.weight"})
    CHECK(log.find(group) != std::string::npos);

  const int faulty =
      run_cli("grad-check --seed 0 --inject-fault", dir.path / "fault.log");
  CHECK(faulty == 2);
  CHECK(slurp(dir.path / "fault.log").find("FAIL") != std::string::npos);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("train") == 1);  // missing --config
  CHECK(run_cli("no-such-command") == 1);
  // /dev/null is a file, so no directory can ever be created beneath it
  CHECK(run_cli("gen-data --out /dev/null/data --images 1") == 1);
}
