// proofkit command-line driver: one subcommand per pipeline stage.
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "proofkit/common.hpp"
#include "proofkit/pipeline.hpp"
#include "proofkit/taskserve.hpp"

namespace fs = std::filesystem;
using namespace proofkit;
namespace pl = proofkit::pipeline;

namespace {

// JSON config: top-level keys are global options, objects are subcommand
// sections. Key underscores map to option dashes (data_dir -> --data-dir).
class ConfigJson : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json j;
    try {
      input >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError("config", std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config", "config root must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    walk(j, {}, items);
    return items;
  }

 private:
  static std::string key(std::string k) {
    for (auto& c : k)
      if (c == '_') c = '-';
    return k;
  }
  static std::string scalar(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void walk(const nlohmann::json& j, const std::vector<std::string>& parents,
                   std::vector<CLI::ConfigItem>& items) {
    for (const auto& [k, v] : j.items()) {
      if (v.is_object()) {
        auto p = parents;
        p.push_back(k);
        walk(v, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key(k);
      if (v.is_array())
        for (const auto& e : v) item.inputs.push_back(scalar(e));
      else
        item.inputs.push_back(scalar(v));
      items.push_back(std::move(item));
    }
  }
};

struct Global {
  std::optional<uint64_t> seed;
  unsigned threads = 0;
  std::vector<std::string> data_dirs;
};

[[noreturn]] void fail(const std::string& code, const std::string& message) { throw Error(code, message); }

fs::path one_dir(const Global& g) {
  if (g.data_dirs.size() != 1) fail("invalid_argument", "this subcommand takes exactly one --data-dir");
  return g.data_dirs.front();
}

std::vector<fs::path> all_dirs(const Global& g) {
  if (g.data_dirs.empty()) fail("invalid_argument", "--data-dir is required");
  return {g.data_dirs.begin(), g.data_dirs.end()};
}

uint64_t seed_of(const Global& g) {
  if (!g.seed) fail("missing_seed", "--seed is required (flag or config)");
  return *g.seed;
}

void add_feature_options(CLI::App* sub, pl::FeatureParams& f) {
  sub->add_option("--edge", f.edge, "Evidence cube edge (odd)")->capture_default_str();
  sub->add_option("--prox-radius-nm", f.prox_radius_nm, "Synapse proximity radius")->capture_default_str();
  sub->add_option("--context-edge", f.context_edge, "Point-sampling context cube edge (voxels)")->capture_default_str();
  sub->add_option("--point-factor", f.point_factor, "Point-sampling downsample factor")->capture_default_str();
  sub->add_option("--points", f.n_points, "Points per candidate (even)")->capture_default_str();
}

std::string error_line(const std::string& code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  return j.dump();
}

TaskServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Proofreading automation toolkit: synthetic corpora, merge scoring, triage and orphan linking"};
  app.config_formatter(std::make_shared<ConfigJson>());
  app.set_config("--config", "", "JSON run config; flags override its values");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--seed", g.seed, "Run seed; every stage derives its seed from it");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--data-dir", g.data_dirs, "Data directory (repeatable for training stages)");

  // gen
  SynthConfig synth;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic volume with ground truth");
  std::vector<int64_t> dims{synth.dims[0], synth.dims[1], synth.dims[2]};
  gen->add_option("--dims", dims, "Volume size x y z")->expected(3)->capture_default_str();
  gen->add_option("--neurons", synth.neuron_count)->capture_default_str();
  gen->add_option("--radius-min", synth.tube_radius_min)->capture_default_str();
  gen->add_option("--radius-max", synth.tube_radius_max)->capture_default_str();
  gen->add_option("--tube-length", synth.tube_length_vox)->capture_default_str();
  gen->add_option("--splits", synth.split_count)->capture_default_str();
  gen->add_option("--twigs", synth.twig_count)->capture_default_str();
  gen->add_option("--twig-length", synth.twig_length_vox)->capture_default_str();
  gen->add_option("--synapse-density", synth.synapse_density, "Per 1000 contact voxel pairs")->capture_default_str();
  gen->add_option("--noise-sigma", synth.noise_sigma)->capture_default_str();
  gen->add_option("--p-false-membrane", synth.p_false_membrane)->capture_default_str();
  gen->add_option("--types", synth.type_count, "Cell-type buckets")->capture_default_str();
  gen->add_option("--chunk", synth.chunk)->capture_default_str();
  gen->add_option("--voxel-size", synth.voxel_size_nm, "nm per voxel edge")->capture_default_str();

  // adjacency
  int64_t factor = 1, block_edge = 64;
  auto* adj = app.add_subcommand("adjacency", "Compute the segment adjacency table (adjacency.tsv)");
  adj->add_option("--factor", factor, "Downsample factor (1,2,4,8,16)")->capture_default_str();
  adj->add_option("--block-edge", block_edge, "Parallel block edge (>= 16)")->capture_default_str();

  // candidates
  pl::CandidatesParams cp;
  std::string cand_workflow = "focused";
  auto* cand = app.add_subcommand("candidates", "Select merge candidates from the adjacency table");
  cand->add_option("--workflow", cand_workflow, "focused | orphan")->capture_default_str();
  cand->add_option("--min-contact", cp.min_contact)->capture_default_str();
  cand->add_option("--weight-min", cp.weight_min, "Orphan synapse weight lower bound")->capture_default_str();
  cand->add_option("--weight-max", cp.weight_max, "Orphan synapse weight upper bound")->capture_default_str();
  cand->add_option("--sample", cp.sample, "Uniform random subset size (0 = all)")->capture_default_str();
  cand->add_option("--balanced", cp.balanced, "Balanced merge/non-merge subset size (needs truth)")
      ->capture_default_str();
  cand->add_option("--out", cp.out, "Output file name in the data dir")->capture_default_str();

  // features
  pl::FeatureParams fp;
  std::string feat_cands = pl::files::candidates;
  auto* feat = app.add_subcommand("features", "Extract evidence tensors, shape and connectivity features");
  feat->add_option("--candidates", feat_cands)->capture_default_str();
  add_feature_options(feat, fp);

  // train-cnn
  pl::TrainCnnParams tc;
  std::string tc_labels = "truth";
  std::string tc_out;
  auto* tcnn = app.add_subcommand("train-cnn", "Train the 3D CNN on labeled evidence tensors");
  tcnn->add_option("--candidates", tc.candidates_name)->capture_default_str();
  tcnn->add_option("--labels", tc_labels, "truth | decisions")->capture_default_str();
  tcnn->add_option("--epochs", tc.hyper.epochs)->capture_default_str();
  tcnn->add_option("--lr", tc.hyper.lr)->capture_default_str();
  tcnn->add_option("--momentum", tc.hyper.momentum)->capture_default_str();
  tcnn->add_option("--batch", tc.hyper.batch)->capture_default_str();
  tcnn->add_option("--flips", tc.config.flips, "Random axis-flip augmentation")->capture_default_str();
  std::vector<std::string> tc_blocks;
  tcnn->add_option("--conv-blocks", tc_blocks, "Conv blocks as filters:kernel:pool (default 8:3:3)");
  tcnn->add_option("--fc-widths", tc.config.fc_widths, "Hidden FC widths")->capture_default_str();
  tcnn->add_option("--out", tc_out, "Model path (default <first data dir>/cnn.aprf)");

  // train-fusion
  pl::TrainFusionParams tf;
  std::string tf_labels = "truth", tf_model, tf_out;
  auto* tfus = app.add_subcommand("train-fusion", "Fit the SVM fusion layer and Platt calibration");
  tfus->add_option("--candidates", tf.candidates_name)->capture_default_str();
  tfus->add_option("--labels", tf_labels, "truth | decisions")->capture_default_str();
  tfus->add_option("--model", tf_model, "Input model (from train-cnn)")->required();
  tfus->add_option("--out", tf_out, "Output model (default model.aprf beside the input)");
  tfus->add_option("--lambda", tf.svm.lambda)->capture_default_str();
  tfus->add_option("--iterations-per-example", tf.svm.iterations_per_example)->capture_default_str();

  // score
  std::string sc_model, sc_cands = pl::files::candidates;
  auto* scr = app.add_subcommand("score", "Score candidates with a model bundle");
  scr->add_option("--model", sc_model)->required();
  scr->add_option("--candidates", sc_cands)->capture_default_str();

  // triage
  pl::TriageParams tp;
  auto* tri = app.add_subcommand("triage", "Rank scored candidates and select a review budget");
  tri->add_option("--budget", tp.budget, "Fraction of candidates to review")->capture_default_str();
  tri->add_option("--source", tp.source, "Score used for ranking")->capture_default_str();
  tri->add_option("--candidates", tp.candidates_name)->capture_default_str();

  // calibrate
  pl::CalibrateParams cal;
  std::string cal_model, cal_out;
  auto* calc = app.add_subcommand("calibrate", "Choose the auto-accept threshold on a labeled sample");
  calc->add_option("--model", cal_model)->required();
  calc->add_option("--out", cal_out, "Output model (default model_calibrated.aprf beside the input)");
  calc->add_option("--target-error", cal.target_error)->capture_default_str();
  calc->add_option("--confidence", cal.confidence)->capture_default_str();
  calc->add_option("--candidates", cal.candidates_name, "Scored sample (candidate file name)")->capture_default_str();
  calc->add_option("--sample", cal.sample, "Cap on labeled items (0 = all)")->capture_default_str();
  std::string cal_unit = "orphan";
  calc->add_option("--unit", cal_unit, "Label unit: best edge per orphan, or every candidate")
      ->check(CLI::IsMember({"orphan", "candidate"}))
      ->capture_default_str();

  // orphan-link
  pl::OrphanLinkParams ol;
  std::string ol_model;
  std::optional<double> ol_tau;
  auto* orph = app.add_subcommand("orphan-link", "Auto-merge orphan fragments into identified bodies");
  orph->add_option("--model", ol_model, "Calibrated model")->required();
  orph->add_option("--tau", ol_tau, "Override the calibrated threshold");
  orph->add_option("--weight-min", ol.policy.weight_min)->capture_default_str();
  orph->add_option("--weight-max", ol.policy.weight_max)->capture_default_str();
  orph->add_option("--passes", ol.policy.passes)->capture_default_str();
  orph->add_option("--timestamp", ol.timestamp, "Decision timestamp, or 'now'")->capture_default_str();
  add_feature_options(orph, ol.features);

  // eval
  pl::EvalParams ev;
  std::string ev_assess;
  auto* evl = app.add_subcommand("eval", "PR curves, effort-value and review precision reports");
  evl->add_option("--candidates", ev.candidates_name)->capture_default_str();
  evl->add_option("--assessments", ev_assess, "Review assessments (JSONL)");
  evl->add_option("--budget", ev.budget)->capture_default_str();

  // serve
  int port = 7700;
  std::string host = "127.0.0.1", srv_model, srv_cands = pl::files::candidates, static_dir;
  auto* srv = app.add_subcommand("serve", "Serve review tasks over HTTP");
  srv->add_option("--port", port)->capture_default_str();
  srv->add_option("--host", host)->capture_default_str();
  srv->add_option("--model", srv_model, "Score candidates at startup with this model");
  srv->add_option("--candidates", srv_cands)->capture_default_str();
  srv->add_option("--static-dir", static_dir, "Console files to serve at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << error_line("usage", e.what()) << '\n';
    return 1;
  }

  try {
    set_thread_count(g.threads);
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen") {
      synth.dims = {dims.at(0), dims.at(1), dims.at(2)};
      synth.seed = derive_seed(seed_of(g), "gen");
      pl::gen(one_dir(g), synth);
    } else if (name == "adjacency") {
      pl::adjacency(one_dir(g), factor, block_edge);
    } else if (name == "candidates") {
      cp.workflow = parse_workflow(cand_workflow);
      cp.seed = derive_seed(seed_of(g), "candidates");
      const size_t n = pl::candidates(one_dir(g), cp);
      log_info("candidates: " + std::to_string(n));
    } else if (name == "features") {
      fp.seed = derive_seed(seed_of(g), "features");
      pl::features(one_dir(g), feat_cands, fp);
    } else if (name == "train-cnn") {
      tc.labels = pl::parse_label_source(tc_labels);
      tc.config.seed = derive_seed(seed_of(g), "cnn");
      if (!tc_blocks.empty()) {
        tc.config.conv_blocks.clear();
        for (const auto& spec : tc_blocks) {
          ConvBlock b;
          char c1 = 0, c2 = 0;
          std::istringstream in(spec);
          if (!(in >> b.filters >> c1 >> b.kernel >> c2 >> b.pool) || c1 != ':' || c2 != ':' || !in.eof())
            fail("usage", "--conv-blocks entries look like filters:kernel:pool, got '" + spec + "'");
          tc.config.conv_blocks.push_back(b);
        }
      }
      const auto dirs = all_dirs(g);
      pl::train_cnn(dirs, tc, tc_out.empty() ? dirs.front() / "cnn.aprf" : fs::path(tc_out));
    } else if (name == "train-fusion") {
      tf.labels = pl::parse_label_source(tf_labels);
      tf.svm.seed = derive_seed(seed_of(g), "fusion");
      const fs::path in = tf_model;
      const fs::path out = tf_out.empty() ? in.parent_path() / "model.aprf" : fs::path(tf_out);
      if (fs::exists(out) && fs::exists(in) && fs::equivalent(in, out)) fail("invalid_argument", "--out must differ from --model");
      pl::train_fusion(all_dirs(g), in, tf, out);
    } else if (name == "score") {
      pl::score(one_dir(g), sc_model, sc_cands);
    } else if (name == "triage") {
      const auto r = pl::triage(one_dir(g), tp);
      if (r.value) log_info("triage: captured value " + std::to_string(*r.value));
    } else if (name == "calibrate") {
      const fs::path in = cal_model;
      const fs::path out = cal_out.empty() ? in.parent_path() / "model_calibrated.aprf" : fs::path(cal_out);
      if (fs::exists(out) && fs::exists(in) && fs::equivalent(in, out)) fail("invalid_argument", "--out must differ from --model");
      cal.per_orphan = cal_unit == "orphan";
      cal.seed = derive_seed(seed_of(g), "calibrate");
      const auto r = pl::calibrate(all_dirs(g), in, cal, out);
      log_info("calibrate: threshold " + (r.threshold ? std::to_string(*r.threshold) : std::string("none")));
    } else if (name == "orphan-link") {
      ol.threshold_override = ol_tau;
      ol.features.seed = derive_seed(seed_of(g), "features");
      const auto r = pl::orphan_link(one_dir(g), ol_model, ol);
      log_info("orphan-link: accepted " + std::to_string(r.run.accepted.size()) + " merges, completeness " +
               std::to_string(r.report.before.fraction()) + " -> " + std::to_string(r.report.after.fraction()));
    } else if (name == "eval") {
      if (!ev_assess.empty()) ev.assessments = ev_assess;
      pl::eval(one_dir(g), ev);
    } else if (name == "serve") {
      const fs::path dir = one_dir(g);
      if (!srv_model.empty()) pl::score(dir, srv_model, srv_cands);
      const auto files = pl::candidate_files(dir, srv_cands);
      auto cands = read_candidates(fs::exists(files.scored) ? files.scored : files.candidates);
      const pl::Dataset data = pl::load_dataset(dir);
      DecisionLog log(dir / pl::files::decisions);
      pl::FeatureParams sfp;
      sfp.seed = derive_seed(g.seed.value_or(0), "features");
      auto fx = std::make_shared<pl::FeatureExtractor>(data, sfp);
      std::shared_ptr<EvidenceReader> reader;
      if (fs::exists(files.evidence_dir / "evidence.idx")) reader = std::make_shared<EvidenceReader>(files.evidence_dir);
      TaskService::EvidenceFn evidence = [fx, reader](const MergeCandidate& c) {
        return reader && reader->contains(c.id) ? reader->read(c.id) : fx->evidence(c);
      };
      std::map<std::string, int> labels;
      for (const auto& c : cands) labels[c.id] = data.label(c);
      TaskService service(cands, log, data.current_bodies(cands), evidence);
      service.set_labels(std::move(labels));
      TaskServer server(service, static_dir);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      log_info("serving " + std::to_string(cands.size()) + " candidates on http://" + host + ":" + std::to_string(bound));
      server.listen();
      g_server = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << error_line(e.code(), e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << error_line("internal", e.what()) << '\n';
    return 1;
  }
  return 0;
}
