// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"
#include "oracles.hpp"
#include "proofkit/adjacency.hpp"
#include "proofkit/cnn.hpp"
#include "proofkit/evalkit.hpp"
#include "proofkit/pipeline.hpp"
#include "proofkit/synthgen.hpp"
#include "proofkit/taskserve.hpp"
#include "proofkit/workflow.hpp"

namespace fs = std::filesystem;
namespace pl = proofkit::pipeline;
using namespace proofkit;
using nlohmann::json;

namespace {

int failures = 0;

void report(int n, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << detail << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

// --- 1-3: oracle comparisons ----------------------------------------------

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void adjacency_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  int mismatches = 0;
  for (uint64_t s = 0; s < 100; ++s) {
    const LabelVolume v = oracle::random_labels(s, 32, 2 + s % 20, 8 + 8 * (s % 2));
    const auto expect = oracle::brute_adjacency(v.to_dense());
    for (int64_t be : {16, 32, 64}) mismatches += compute_adjacency(v, 1, be) != expect;
  }
  const double secs = seconds_since(t0);
  report(1, "adjacency vs brute force", mismatches == 0 && secs < 60,
         "100 random 32^3 volumes (seeds 0-99) x block_edge {16,32,64}, " + std::to_string(mismatches) +
             " mismatches, " + fmt(secs) + " s");
}

void grad_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  CnnConfig cfg;
  cfg.input_edge = 11;
  cfg.conv_blocks = {{3, 3, 2}, {4, 3, 2}, {4, 3, 2}};
  cfg.fc_widths = {5};
  double worst = 0;
  for (uint64_t s = 0; s < 5; ++s) {
    Rng rng(500 + s);
    GradCheckSample sample;
    sample.input.resize(static_cast<size_t>(cfg.in_channels * cfg.input_edge * cfg.input_edge * cfg.input_edge));
    for (auto& x : sample.input) x = static_cast<float>(rng.uniform());
    sample.label = static_cast<int>(s % 2);
    worst = std::max(worst, grad_check(cfg, sample, s).max_rel_error);
  }
  const double secs = seconds_since(t0);
  report(2, "gradient check", worst < 1e-4 && secs < 120,
         "f64, max relative error " + fmt(worst) + " over 5 seeds (< 1e-4), " + fmt(secs) + " s");
}

void pr_criterion() {
  Rng rng(777);
  int bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const size_t n = 1 + rng.below(50);
    std::vector<std::pair<double, int>> s;
    for (size_t i = 0; i < n; ++i) s.push_back({static_cast<double>(rng.below(15)) / 14.0, rng.uniform() < 0.35});
    s[rng.below(n)].second = 1;
    const PrCurve a = pr_curve(s), b = oracle::brute_pr(s);
    bad += !(a.positives == b.positives && a.points == b.points && a.auprc == b.auprc);
  }
  report(3, "PR curve vs threshold-sweep oracle", bad == 0, "1000 random sets with n <= 50, " + std::to_string(bad) + " mismatches");
}

// --- pipeline ---------------------------------------------------------------

struct Layout {
  fs::path root;
  std::vector<fs::path> train, cal;
  fs::path fusion, test, holdout;
  fs::path cnn() const { return root / "cnn.aprf"; }
  fs::path model() const { return root / "model.aprf"; }
  fs::path calibrated() const { return root / "model_calibrated.aprf"; }
};

Layout layout(const fs::path& root, int n_cal) {
  Layout l;
  l.root = root;
  for (int i = 0; i < 3; ++i) l.train.push_back(root / ("train" + std::to_string(i)));
  for (int i = 0; i < n_cal; ++i) l.cal.push_back(root / ("cal" + std::to_string(i)));
  l.fusion = root / "fusion";
  l.test = root / "test";
  l.holdout = root / "holdout";
  return l;
}

class Runner {
 public:
  Runner(std::string cli, fs::path log) : cli_(std::move(cli)), log_(std::move(log)) {}
  // Runs one CLI stage; throws with the captured output on failure.
  void operator()(const std::string& args) const {
    const fs::path out = log_.parent_path() / "last_stage.txt";
    const std::string cmd = cli_ + " " + args + " > " + out.string() + " 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = std::system(cmd.c_str());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream(log_, std::ios::app) << "$ proofkit " << args << "  (" << fmt(secs) << " s)\n" << slurp(out);
    if (rc != 0) throw std::runtime_error("stage failed: " + args + "\n" + slurp(out));
  }

 private:
  std::string cli_;
  fs::path log_;
};

std::string dir_arg(const fs::path& d) { return "--data-dir " + d.string(); }

// Returns the train+eval wall time (candidate sampling through eval).
double run_pipeline(const Layout& l, const std::string& cli, uint64_t seed, size_t cal_sample) {
  fs::remove_all(l.root);
  fs::create_directories(l.root);
  const Runner run(cli, l.root / "pipeline.log");
  const std::string s = " --seed " + std::to_string(seed) + " ";
  std::vector<fs::path> all = l.train;
  all.insert(all.end(), l.cal.begin(), l.cal.end());
  for (const auto& d : {l.fusion, l.test, l.holdout}) all.push_back(d);
  for (size_t i = 0; i < all.size(); ++i) {
    run("gen --seed " + std::to_string(seed * 1000 + i) + " " + dir_arg(all[i]));
    run("adjacency" + s + dir_arg(all[i]));
  }
  // CNN: 2000 balanced candidates over three volumes.
  const auto t_learn = std::chrono::steady_clock::now();
  std::string train_dirs;
  for (size_t i = 0; i < l.train.size(); ++i) {
    run("candidates" + s + dir_arg(l.train[i]) + " --balanced " + std::to_string(i == 0 ? 666 : 667));
    run("features" + s + dir_arg(l.train[i]));
    train_dirs += " " + dir_arg(l.train[i]);
  }
  run("train-cnn" + s + train_dirs + " --out " + l.cnn().string());
  // Fusion on its own volume so the SVM sees held-out CNN scores.
  run("candidates" + s + dir_arg(l.fusion) + " --balanced 800");
  run("features" + s + dir_arg(l.fusion));
  run("train-fusion" + s + dir_arg(l.fusion) + " --model " + l.cnn().string() + " --out " + l.model().string());
  // Test: 1000 candidates at the natural merge rate.
  run("candidates" + s + dir_arg(l.test) + " --sample 1000");
  run("features" + s + dir_arg(l.test));
  run("score" + s + dir_arg(l.test) + " --model " + l.model().string());
  run("triage" + s + dir_arg(l.test) + " --budget 0.2");
  run("eval" + s + dir_arg(l.test) + " --budget 0.2");
  const double learn_secs = seconds_since(t_learn);
  // Orphan-link calibration sample.
  std::string cal_dirs;
  for (const auto& d : l.cal) {
    run("candidates" + s + dir_arg(d) + " --workflow orphan --out orphan_candidates.jsonl");
    run("features" + s + dir_arg(d) + " --candidates orphan_candidates.jsonl");
    run("score" + s + dir_arg(d) + " --model " + l.model().string() + " --candidates orphan_candidates.jsonl");
    cal_dirs += " " + dir_arg(d);
  }
  run("calibrate" + s + cal_dirs + " --model " + l.model().string() + " --out " + l.calibrated().string() +
      " --target-error 0.03 --sample " + std::to_string(cal_sample));
  run("orphan-link" + s + dir_arg(l.holdout) + " --model " + l.calibrated().string());
  return learn_secs;
}

// The time budget is stated for 4 cores; fewer cores scale it linearly.
double learning_budget_seconds() {
  const unsigned cores = std::clamp(std::thread::hardware_concurrency(), 1u, 4u);
  return 1800.0 * 4.0 / cores;
}

void learning_criteria(const Layout& l, double learn_secs) {
  const json ev = read_json(l.test / "eval_summary.json");
  const double base = ev["auprc"]["baseline"], cnn = ev["auprc"]["cnn"], fusion = ev["auprc"]["fusion"];
  const double budget = learning_budget_seconds();
  report(4, "learning: CNN beats baseline, fusion >= CNN",
         cnn >= base + 0.05 && fusion >= cnn && learn_secs < budget,
         "AUPRC baseline " + fmt(base) + ", cnn " + fmt(cnn) + ", fusion " + fmt(fusion) + " on " +
             std::to_string(ev["candidates"].get<int>()) + " test candidates (" +
             std::to_string(ev["positives"].get<int>()) + " merges); train+eval " + fmt(learn_secs) + " s (budget " +
             fmt(budget) + " s on " + std::to_string(std::thread::hardware_concurrency()) + " cores)");
  const json tr = read_json(l.test / "triage_summary.json");
  const double value = tr["value"].is_null() ? 0.0 : tr["value"].get<double>();
  report(5, "triage at budget 0.2", value >= 0.9,
         "selected " + std::to_string(tr["selected"].get<int>()) + " of " + std::to_string(tr["candidates"].get<int>()) +
             ", captured " + fmt(value) + " of true merges (>= 0.9)");
}

// Completeness recount straight from truth.json and the accepted merges,
// without the union-find used by the pipeline.
struct Recount {
  int64_t conn = 0, ident_before = 0, ident_after = 0, tbars = 0, psds = 0;
};

Recount recount(const GroundTruth& gt, const std::vector<std::pair<uint64_t, uint64_t>>& merges) {
  std::map<uint64_t, uint64_t> body;
  for (const auto& [f, n] : gt.fragment_to_neuron) body[f] = f;
  for (const auto& [a, b] : merges) {
    const uint64_t from = body.at(b), to = body.at(a);
    for (auto& [f, r] : body)
      if (r == from) r = to;
  }
  std::set<uint64_t> ident_bodies;
  for (uint64_t f : gt.identified) ident_bodies.insert(body.at(f));
  auto before = [&](uint64_t f) { return gt.identified.count(f) != 0; };
  auto after = [&](uint64_t f) { return ident_bodies.count(body.at(f)) != 0; };
  Recount r;
  for (const auto& s : gt.synapses) {
    r.tbars += !before(s.pre_fragment) && after(s.pre_fragment);
    for (uint64_t p : s.post_fragments) {
      ++r.conn;
      r.ident_before += before(s.pre_fragment) && before(p);
      r.ident_after += after(s.pre_fragment) && after(p);
      r.psds += !before(p) && after(p);
    }
  }
  return r;
}

void orphan_criterion(const Layout& l) {
  const json cal = read_json(l.root / "calibration.json");
  const json rep = read_json(l.holdout / "completeness_report.json");
  GroundTruth gt = read_truth(l.holdout / pl::files::truth);
  gt.synapses = read_synapses(l.holdout / pl::files::synapses);
  // Accepted proposals: candidate id -> (a, b).
  std::map<std::string, std::pair<uint64_t, uint64_t>> accepted;
  std::ifstream in(l.holdout / "orphan_proposals.csv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    if (f.size() == 7 && f[6] == "1") accepted[f[2]] = {std::stoull(f[3]), std::stoull(f[4])};
  }
  const auto decisions = read_decisions(l.holdout / pl::files::decisions);
  bool log_ok = decisions.size() == accepted.size();
  std::vector<std::pair<uint64_t, uint64_t>> merges;
  int64_t errors = 0;
  for (const auto& d : decisions) {
    auto it = accepted.find(d.candidate_id);
    if (it == accepted.end() || d.verdict != Verdict::merge) {
      log_ok = false;
      continue;
    }
    merges.push_back(it->second);
    errors += !same_neuron(gt, it->second.first, it->second.second);
  }
  const Recount rc = recount(gt, merges);
  const bool counts_match = log_ok && rep["before"]["connections"] == rc.conn && rep["after"]["connections"] == rc.conn &&
                            rep["before"]["identified_connections"] == rc.ident_before &&
                            rep["after"]["identified_connections"] == rc.ident_after &&
                            rep["accepted_merges"] == static_cast<int64_t>(merges.size()) &&
                            rep["tbars_added"] == rc.tbars && rep["psds_added"] == rc.psds;
  const double err = merges.empty() ? 0.0 : static_cast<double>(errors) / static_cast<double>(merges.size());
  const bool calibrated = !cal["threshold"].is_null();
  const bool increases = rc.ident_after > rc.ident_before;
  std::string detail = "calibration sample " + std::to_string(cal["sample_size"].get<int>()) + " " +
                       cal["unit"].get<std::string>() + " proposals, tau " +
                       (calibrated ? fmt(cal["threshold"].get<double>()) : std::string("none")) + "; held-out accepted " +
                       std::to_string(merges.size()) + " with " + std::to_string(errors) + " wrong (" + fmt(err) +
                       " <= 0.05); completeness " + fmt(rep["before"]["fraction"].get<double>()) + " -> " +
                       fmt(rep["after"]["fraction"].get<double>()) + "; report " +
                       (counts_match ? "matches" : "DOES NOT match") + " recount";
  report(6, "orphan-link calibration", calibrated && !merges.empty() && err <= 0.05 && increases && counts_match, detail);
}

// Files compared between two pipeline runs. train_log.csv carries wall-clock
// seconds, so only its loss columns are compared.
std::vector<fs::path> artifacts(const Layout& l) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(l.root)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), l.root);
    const std::string name = rel.filename().string();
    if (name == "pipeline.log" || name == "last_stage.txt") continue;
    out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string strip_seconds(const std::string& csv) {
  std::stringstream in(csv), out;
  for (std::string line; std::getline(in, line);) out << line.substr(0, line.rfind(',')) << '\n';
  return out.str();
}

void determinism_criterion(const Layout& a, const Layout& b) {
  const auto fa = artifacts(a), fb = artifacts(b);
  std::vector<std::string> diff;
  if (fa != fb) diff.push_back("file sets differ");
  for (const auto& rel : fa) {
    if (!fs::exists(b.root / rel)) continue;
    std::string x = slurp(a.root / rel), y = slurp(b.root / rel);
    if (rel.filename() == "train_log.csv") x = strip_seconds(x), y = strip_seconds(y);
    if (x != y) diff.push_back(rel.string());
  }
  std::string key;
  for (const char* k : {"cnn.aprf", "model.aprf", "model_calibrated.aprf", "holdout/decisions.jsonl",
                        "holdout/completeness_report.json", "test/eval_summary.json"})
    key += std::string(fs::exists(a.root / k) ? "" : "missing ") + k + " ";
  report(7, "determinism", diff.empty() && key.find("missing") == std::string::npos,
         std::to_string(fa.size()) + " artifacts compared byte for byte (models, decisions, reports)" +
             (diff.empty() ? std::string() : "; differing: " + diff.front()));
}

void taskserve_criterion(const Layout& l) {
  const fs::path dir = l.test;
  const auto files = pl::candidate_files(dir, pl::files::candidates);
  const auto cands = read_candidates(files.scored);
  const pl::Dataset data = pl::load_dataset(dir);
  const fs::path log_path = l.root / "soak_decisions.jsonl";
  fs::remove(log_path);
  const BodyState initial = data.current_bodies(cands);
  EvidenceReader reader(files.evidence_dir);
  BodyState live;
  int64_t submitted = 0;
  {
    DecisionLog log(log_path);
    TaskService svc(cands, log, initial, [&](const MergeCandidate& c) { return reader.read(c.id); });
    TaskServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    std::thread th([&] { server.listen(); });
    std::atomic<int64_t> ok{0};
    std::vector<std::thread> reviewers;
    for (int r = 0; r < 4; ++r)
      reviewers.emplace_back([&, r] {
        httplib::Client cli("127.0.0.1", port);
        const std::string who = "R" + std::to_string(r);
        Rng rng(static_cast<uint64_t>(r) + 11);
        for (int guard = 0; guard < 100000; ++guard) {
          auto res = cli.Get("/api/tasks/next?reviewer=" + who);
          if (!res || res->status != 200) continue;
          const json t = json::parse(res->body);
          if (t["task"].is_null()) break;
          const std::string id = t["task"]["id"];
          // Exercise the evidence endpoint on a few tasks.
          if (rng.below(50) == 0) cli.Get("/api/candidates/" + id + "/slices?axis=z");
          const std::string v = rng.uniform() < 0.25 ? "merge" : "no_merge";
          auto post = cli.Post("/api/tasks/" + id + "/decision", json{{"verdict", v}, {"reviewer", who}}.dump(),
                               "application/json");
          if (post && post->status == 200) ++ok;
        }
      });
    for (auto& t : reviewers) t.join();
    server.stop();
    th.join();
    submitted = ok.load();
    live = svc.bodies();
  }
  const auto entries = read_decisions(log_path);
  bool gap_free = true;
  for (size_t i = 0; i < entries.size(); ++i) gap_free = gap_free && entries[i].sequence == i + 1;
  const bool replay_ok = replay(entries, index_candidates(cands), initial) == live;
  report(8, "interleaved submissions", submitted == 1000 && entries.size() == 1000 && gap_free && replay_ok,
         std::to_string(submitted) + " HTTP submissions from 4 reviewers, log " + std::to_string(entries.size()) +
             " entries " + (gap_free ? "gap-free" : "WITH GAPS") + ", replay " + (replay_ok ? "equals" : "DIFFERS FROM") +
             " live body state");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run for the proofreading toolkit"};
  std::string work = (fs::temp_directory_path() / "proofkit-acceptance").string();
  std::string cli = PROOFKIT_CLI;
  uint64_t seed = 1;
  int n_cal = 4;
  size_t cal_sample = 500;
  bool keep = false;
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--cli", cli, "proofkit executable")->capture_default_str();
  app.add_option("--seed", seed, "Pipeline seed")->capture_default_str();
  app.add_option("--calibration-volumes", n_cal, "Volumes pooled for the calibration sample")->capture_default_str();
  app.add_option("--calibration-sample", cal_sample)->capture_default_str();
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  adjacency_criterion();
  grad_criterion();
  pr_criterion();

  const Layout a = layout(fs::path(work) / "run1", n_cal), b = layout(fs::path(work) / "run2", n_cal);
  bool ran = false;
  double learn_secs = 0;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    learn_secs = run_pipeline(a, cli, seed, cal_sample);
    std::cerr << "pipeline run 1: " << seconds_since(t0) << " s\n";
    ran = true;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
  }
  if (ran) {
    learning_criteria(a, learn_secs);
    orphan_criterion(a);
    try {
      run_pipeline(b, cli, seed, cal_sample);
      determinism_criterion(a, b);
    } catch (const std::exception& e) {
      std::cerr << e.what() << '\n';
      report(7, "determinism", false, "second run failed");
    }
    taskserve_criterion(a);
  } else {
    for (int n : {4, 5, 6, 7, 8}) report(n, "pipeline criterion", false, "pipeline run failed");
  }
  if (!keep) fs::remove_all(work);
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
