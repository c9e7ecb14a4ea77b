#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "lucid/rng.hpp"
#include "lucid/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lucid");
  std::ostringstream out, err;
  Run r;
  r.code = lucid::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lucid_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Busy first and third windows, quiet second and fourth.
fs::path write_trace(const fs::path& dir) {
  lucid::ArrivalTrace t;
  t.duration_us = 4 * 60ULL * 1000000ULL;
  lucid::Rng rng(11);
  double now = 0.0;
  for (int w = 0; w < 4; ++w) {
    const double mean = w % 2 == 0 ? 3000.0 : 200000.0;
    const double end = (w + 1) * 60e6;
    while ((now += rng.exponential(1.0 / mean)) < end) {
      const auto at = static_cast<lucid::Micros>(now);
      if (t.arrivals.empty() || t.arrivals.back() != at) t.arrivals.push_back(at);
    }
    now = end;
  }
  const auto p = dir / "trace.txt";
  std::ofstream f(p);
  lucid::emit_trace(t, f);
  return p;
}

}  // namespace

TEST_CASE("cli: usage errors exit 2, help exits 0") {
  CHECK(cli({}).code == lucid::cli::kExitInput);
  CHECK(cli({"--help"}).code == lucid::cli::kExitOk);
  CHECK(cli({"bogus"}).code == lucid::cli::kExitInput);
  CHECK(cli({"simulate"}).code == lucid::cli::kExitInput);  // missing --config/--out
}

TEST_CASE("cli: missing input names the path") {
  const auto dir = scratch("missing");
  const auto r = cli({"characterize", "/no/such/trace.txt", "--out", dir.string()});
  CHECK(r.code == lucid::cli::kExitInput);
  CHECK(r.err.find("/no/such/trace.txt") != std::string::npos);

  const auto s = cli({"simulate", "--config", "/no/such/config.json", "--out", dir.string()});
  CHECK(s.code == lucid::cli::kExitInput);
  CHECK(s.err.find("/no/such/config.json") != std::string::npos);
}

TEST_CASE("cli: malformed trace is an input error") {
  const auto dir = scratch("malformed");
  {
    std::ofstream f(dir / "bad.txt");
    f << "100\n50\n";
  }
  const auto r = cli({"characterize", (dir / "bad.txt").string(), "--out", (dir / "o").string()});
  CHECK(r.code == lucid::cli::kExitInput);
  CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("cli: characterize, segment, train, evaluate, predict") {
  const auto dir = scratch("pipeline");
  const auto trace = write_trace(dir).string();

  auto r = cli({"characterize", trace, "--slot-ms", "50", "--window-min", "1", "--out", (dir / "ch").string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"features.csv", "histogram.csv", "segmentation.csv", "manifest.json"}) {
    CHECK(fs::exists(dir / "ch" / f));
  }
  {
    std::ifstream f(dir / "ch" / "features.csv");
    std::string first;
    std::getline(f, first);
    CHECK(first == "# slot_len_us=50000");  // --slot-ms override reaches the output
  }
  const auto man = read_json(dir / "ch" / "manifest.json");
  CHECK(man["command"] == "characterize");
  CHECK(man["parameters"]["slot_len_us"] == 50000);
  CHECK(man["parameters"]["peak_reference_window"].get<int>() % 2 == 0);
  CHECK(man["inputs"]["trace"].get<std::string>().find("trace.txt") != std::string::npos);

  r = cli({"segment", trace, "--slot-ms", "50", "--window-min", "1", "--peak-window", "0", "--out",
           (dir / "sg").string()});
  REQUIRE(r.code == 0);
  const auto tw = read_json(dir / "sg" / "training_windows.json");
  CHECK(tw["peak_window"].get<int>() % 2 == 0);
  CHECK(tw["offpeak_window"].get<int>() % 2 == 1);

  r = cli({"segment", trace, "--window-min", "1", "--peak-window", "9", "--out", (dir / "bad").string()});
  CHECK(r.code == lucid::cli::kExitInput);

  r = cli({"train", "--peak", (dir / "sg" / "peak_features.csv").string(), "--offpeak",
           (dir / "sg" / "offpeak_features.csv").string(), "--components", "4", "--out", (dir / "tr").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "tr" / "model.json"));

  const auto model = (dir / "tr" / "model.json").string();
  r = cli({"evaluate", "--model", model, "--trace", trace, "--regime", "peak", "--out", (dir / "ev").string()});
  REQUIRE(r.code == 0);
  const auto ev = read_json(dir / "ev" / "evaluation.json");
  CHECK(ev["accuracy_pct"].get<double>() > 90.0);

  r = cli({"evaluate", "--model", model, "--trace", trace, "--slot-ms", "100", "--out", (dir / "ev2").string()});
  CHECK(r.code == lucid::cli::kExitInput);
  CHECK(r.err.find("slot length") != std::string::npos);

  r = cli({"predict", "--model", model, "--period", "5", "--count", "2", "--t-data-ms", "10000", "--out",
           (dir / "pr").string()});
  REQUIRE(r.code == 0);
  const auto pr = read_json(dir / "pr" / "prediction.json");
  CHECK(pr["horizon_slots"] == 200);
  CHECK(pr["periods"].size() == 2);
  // The same request reproduces the same list.
  r = cli({"predict", "--model", model, "--period", "5", "--count", "2", "--t-data-ms", "10000", "--out",
           (dir / "pr2").string()});
  CHECK(read_json(dir / "pr2" / "prediction.json") == pr);
}

TEST_CASE("cli: train rejects unlabeled features") {
  const auto dir = scratch("unlabeled");
  {
    std::ofstream f(dir / "f.csv");
    f << "# slot_len_us=50000\nslot_index,start_us,mean_iat_us,count\n0,0,100,5\n";
  }
  const auto f = (dir / "f.csv").string();
  const auto r = cli({"train", "--peak", f, "--offpeak", f, "--out", (dir / "o").string()});
  CHECK(r.code == lucid::cli::kExitInput);
  CHECK(r.err.find("state") != std::string::npos);
}

TEST_CASE("cli: simulate, compare, report") {
  const auto dir = scratch("sim");
  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"scenario": "5-node", "environment": "home", "interference_type": "peak",
             "t_data_us": 60000000, "duration_us": 600000000})";
  }
  const auto cfg = (dir / "cfg.json").string();
  auto r = cli({"simulate", "--config", cfg, "--ledger", "--out", (dir / "s").string()});
  REQUIRE(r.code == 0);
  const auto res = read_json(dir / "s" / "result.json");
  CHECK(res["protocol"] == "LUCID");
  CHECK(fs::exists(dir / "s" / "ledger.csv"));
  CHECK(read_json(dir / "s" / "manifest.json")["seeds"] == json::array({1}));

  r = cli({"simulate", "--config", cfg, "--protocol", "TDMA", "--out", (dir / "s2").string()});
  CHECK(r.code == lucid::cli::kExitInput);

  r = cli({"compare", "--config", cfg, "--seeds", "2", "--threads", "1", "--out", (dir / "c").string()});
  REQUIRE(r.code == 0);
  const auto rep = read_json(dir / "c" / "report.json");
  REQUIRE(rep["rows"].size() == 1);
  CHECK(rep["rows"][0]["seed"] == "1;2");

  r = cli({"report", (dir / "c" / "results").string(), "--per-seed", "--out", (dir / "r").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "r" / "report.csv"));
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 3);  // header + two runs

  r = cli({"report", (dir / "nothing").string(), "--out", (dir / "r2").string()});
  CHECK(r.code == lucid::cli::kExitInput);
}
