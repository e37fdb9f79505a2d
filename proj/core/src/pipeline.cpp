#include "planeloc/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "planeloc/agent/episode.hpp"
#include "planeloc/agent/q_network.hpp"
#include "planeloc/agent/trainer.hpp"
#include "planeloc/alignment.hpp"
#include "planeloc/error.hpp"
#include "planeloc/nn/checkpoint.hpp"
#include "planeloc/termination.hpp"

namespace planeloc::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Offsets separating the random streams of the stages.
constexpr std::uint64_t kDetectorSeed = 101;
constexpr std::uint64_t kAgentSeed = 202;
constexpr std::uint64_t kTraceSeed = 303;
constexpr std::uint64_t kAdtSeed = 404;
constexpr std::uint64_t kAtSeed = 505;
constexpr std::uint64_t kEvalSeed = 606;

void say(const Options& opt, const std::string& msg) {
  if (opt.progress) opt.progress(msg);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + p.string());
  out << text;
  if (!out) fail(ErrorKind::IoError, "write failed: " + p.string());
}

/// Appends lines to a file, flushing each so an interrupted run keeps them.
class LineLog {
 public:
  LineLog(const fs::path& p, bool append)
      : out_(p, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary) {
    if (!out_) fail(ErrorKind::IoError, "cannot open log " + p.string());
  }
  void operator()(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
  }
  std::uintmax_t offset() { return static_cast<std::uintmax_t>(out_.tellp()); }

 private:
  std::ofstream out_;
};

void write_config_snapshot(const RunPaths& paths, const RunConfig& cfg) {
  fs::create_directories(paths.root);
  write_text(paths.root / "config.json", to_json(cfg) + "\n");
}

std::vector<std::string> landmark_labels(const RunConfig& cfg) {
  return canonical_landmarks(cfg.phantom.dims, cfg.phantom.n_landmarks).labels;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct PlaneArtifacts {
  fs::path atlas;
  fs::path agent;
  fs::path adt;
  fs::path at;
  fs::path state;
};

PlaneArtifacts artifacts(const RunPaths& paths, const std::string& plane) {
  return {paths.train / ("atlas_" + plane + ".json"), paths.train / ("agent_" + plane + ".ckpt"),
          paths.train / ("termination_adt_" + plane + ".ckpt"), paths.train / ("termination_at_" + plane + ".ckpt"),
          paths.train / ("agent_" + plane + "_state")};
}

/// Agent-side view of a case: atlas frame via the given landmarks.
/// Collinear or coincident detections leave the rotation undetermined; the
/// case is then taken as already in atlas pose.
Alignment align_or_identity(const LandmarkSet& landmarks, const Atlas& atlas) {
  try {
    return align_to_atlas(landmarks, atlas);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateConfiguration) throw;
    Alignment al;
    al.case_to_atlas = RigidTransform::identity();
    al.atlas_to_case = RigidTransform::identity();
    al.init_plane = atlas.plane;
    return al;
  }
}

agent::EpisodeSetup aligned_setup(const PhantomCase& c, const std::string& plane, const LandmarkSet& landmarks,
                                  const Atlas& atlas, const RunConfig& cfg, PlaneParams* start = nullptr) {
  const Alignment al = align_or_identity(landmarks, atlas);
  agent::EpisodeSetup s;
  s.case_id = c.id;
  s.state_size = cfg.agent.state_size;
  s.steps = cfg.agent.steps;
  if (cfg.resample_aligned) {
    s.volume = std::make_shared<const Volume>(resample(c.volume, al.atlas_to_case));
    s.gt = transform_plane(c.plane(plane), al.case_to_atlas);
    s.frame_to_volume = RigidTransform::identity();
  } else {
    s.volume = std::shared_ptr<const Volume>(std::shared_ptr<const Volume>{}, &c.volume);
    s.gt = c.plane(plane);
    s.frame_to_volume = al.atlas_to_case;
  }
  if (start) *start = al.init_plane;
  return s;
}

agent::EpisodeSetup native_setup(const PhantomCase& c, const std::string& plane, const RunConfig& cfg) {
  agent::EpisodeSetup s;
  s.case_id = c.id;
  s.volume = std::shared_ptr<const Volume>(std::shared_ptr<const Volume>{}, &c.volume);
  s.gt = c.plane(plane);
  s.state_size = cfg.agent.state_size;
  s.steps = cfg.agent.steps;
  return s;
}

json trace_json(const EpisodeTrace& t) {
  json planes = json::array();
  for (const auto& p : t.planes) planes.push_back(p.as_array());
  return {{"case_id", t.case_id}, {"plane", t.plane_name}, {"init_mode", t.init_mode}, {"planes", planes},
          {"q", t.q},             {"ang", t.ang},          {"dis", t.dis}};
}

termination::TerminationPolicy make_policy(const std::string& name, const RunConfig& cfg,
                                           termination::TerminationModel* adt, termination::TerminationModel* at) {
  termination::TerminationPolicy p;
  p.kind = termination::policy_kind_from_string(name);
  p.max_len = cfg.agent.max_steps;
  p.delta = cfg.termination.delta;
  if (p.kind == termination::PolicyKind::Adt) {
    p.model = [adt](const nn::Tensor& x) { return adt->predict(x); };
  } else if (p.kind == termination::PolicyKind::AtFull) {
    p.model = [at](const nn::Tensor& x) { return at->predict(x); };
  }
  return p;
}

}  // namespace

RunPaths run_paths(const RunConfig& cfg) {
  fs::path root = cfg.output_dir;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env && root.is_relative()) root = fs::path(env) / root;
  return {root, root / "dataset", root / "train", root / "eval"};
}

std::vector<std::string> plane_names(const RunConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& p : canonical_planes(cfg.phantom.dims, cfg.phantom.n_planes)) out.push_back(p.name);
  return out;
}

void run_phantom(const RunConfig& cfg, const Options& opt) {
  cfg.validate();
  const RunPaths paths = run_paths(cfg);
  if (fs::exists(paths.dataset / "manifest.json")) {
    if (!opt.force) fail(ErrorKind::IoError, "dataset exists at " + paths.dataset.string() + "; pass --force to regenerate");
    fs::remove_all(paths.dataset);
  }
  fs::create_directories(paths.dataset);
  write_config_snapshot(paths, cfg);
  PhantomSpec spec = cfg.phantom;
  spec.seed = cfg.seed;
  say(opt, "generating " + std::to_string(cfg.split.total()) + " phantom cases");
  const Dataset ds = generate_dataset(spec, cfg.split.total(), cfg.split);
  json split;
  std::string digest_input;
  auto add = [&](const char* key, const std::vector<PhantomCase>& cases) {
    split[key] = json::array();
    for (const auto& c : cases) {
      write_case(paths.dataset, c);
      split[key].push_back(c.name());
      digest_input += read_text(paths.dataset / (c.name() + ".vol"));
      digest_input += read_text(paths.dataset / (c.name() + ".json"));
    }
  };
  add("train", ds.train);
  add("val", ds.val);
  add("test", ds.test);
  const json manifest{{"version", 1},
                      {"seed", cfg.seed},
                      {"dims", cfg.phantom.dims},
                      {"counts", {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}}},
                      {"split", split},
                      {"digest", hex(nn::fnv1a64(digest_input))}};
  write_text(paths.dataset / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) fail(ErrorKind::MissingDataset, "no dataset at " + dir.string());
  json m;
  try {
    m = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    fail(ErrorKind::MissingDataset, std::string("unreadable manifest: ") + e.what());
  }
  Dataset ds;
  auto load = [&](const char* key, std::vector<PhantomCase>& out) {
    for (const auto& name : m.at("split").at(key)) out.push_back(read_case(dir, name.get<std::string>()));
  };
  load("train", ds.train);
  load("val", ds.val);
  load("test", ds.test);
  return ds;
}

void run_train(const RunConfig& cfg, const Options& opt) {
  cfg.validate();
  const RunPaths paths = run_paths(cfg);
  const Dataset ds = load_dataset(paths.dataset);
  if (fs::exists(paths.train / "complete.json")) {
    if (!opt.force) fail(ErrorKind::IoError, "training output exists at " + paths.train.string() + "; pass --force");
    fs::remove_all(paths.train);
  } else if (opt.force) {
    fs::remove_all(paths.train);
  }
  fs::create_directories(paths.train);
  write_config_snapshot(paths, cfg);

  // Landmark detector.
  LandmarkDetector detector(cfg.detector, cfg.phantom.dims, landmark_labels(cfg), cfg.seed + kDetectorSeed);
  if (cfg.detector.oracle) {
    say(opt, "landmarks: oracle mode, detector training skipped");
    write_text(paths.train / "detector_log.jsonl", json{{"mode", "oracle"}}.dump() + "\n");
  } else if (fs::exists(paths.train / "detector.ckpt")) {
    say(opt, "landmarks: reusing trained detector");
    detector.load(paths.train / "detector.ckpt");
  } else {
    say(opt, "landmarks: training detector");
    LineLog log(paths.train / "detector_log.jsonl", false);
    detector.train(ds.train, [&](int epoch, double loss) { log(json{{"epoch", epoch}, {"loss", loss}}.dump()); });
    detector.save(paths.train / "detector.ckpt");
  }

  const auto names = plane_names(cfg);
  for (std::size_t pi = 0; pi < names.size(); ++pi) {
    const std::string& plane = names[pi];
    const PlaneArtifacts art = artifacts(paths, plane);
    const Atlas atlas = select_atlas(ds.train, plane);
    write_text(art.atlas, atlas_to_json(atlas) + "\n");
    say(opt, "plane " + plane + ": atlas is case " + std::to_string(atlas.case_id));

    // The agent learns in atlas space as aligned by the detector, so its
    // training frames carry the same alignment error it meets at inference.
    std::vector<agent::EpisodeSetup> train_setups, val_setups;
    for (const auto& c : ds.train) train_setups.push_back(aligned_setup(c, plane, detector.detect(c), atlas, cfg));
    for (const auto& c : ds.val) val_setups.push_back(aligned_setup(c, plane, detector.detect(c), atlas, cfg));

    agent::Trainer trainer(cfg.agent, train_setups, val_setups, cfg.seed + kAgentSeed + pi);
    const fs::path log_path = paths.train / ("agent_" + plane + "_log.jsonl");
    const bool resume = fs::exists(art.state / "trainer.json");
    if (resume) {
      trainer.load(art.state);
      const auto offset = json::parse(read_text(art.state / "log_offset.json")).at("bytes").get<std::uintmax_t>();
      fs::resize_file(log_path, offset);
      say(opt, "plane " + plane + ": resuming agent training at epoch " + std::to_string(trainer.epoch()));
    }
    LineLog log(log_path, resume);
    trainer.set_log([&](const std::string& line) { log(line); });
    trainer.train([&](agent::Trainer& t) {
      t.save(art.state);
      write_text(art.state / "log_offset.json", json{{"bytes", log.offset()}}.dump() + "\n");
      say(opt, "plane " + plane + ": epoch " + std::to_string(t.epoch()) + "/" + std::to_string(cfg.agent.epochs) +
                   " iter " + std::to_string(t.iteration()));
    });
    nn::save_checkpoint(art.agent, trainer.online().describe_json(), trainer.online().state_tensors());

    // Termination traces come from greedy rollouts on the training volumes.
    say(opt, "plane " + plane + ": collecting termination traces");
    agent::QNetwork& q = trainer.online();
    const agent::QFunction qf = [&q](const AgentState& s) { return q.q_values(s); };
    std::vector<EpisodeTrace> traces;
    std::mt19937_64 rng(cfg.seed + kTraceSeed + pi);
    for (const auto& c : ds.train) {
      PlaneParams warm;
      const LandmarkSet detected = detector.detect(c);
      agent::Environment warm_env(aligned_setup(c, plane, detected, atlas, cfg, &warm));
      traces.push_back(agent::run_episode(warm_env, warm, qf, cfg.agent.max_steps));
      for (int k = 1; k < cfg.termination_data.traces_per_case; ++k) {
        const PlaneParams start = agent::perturb_plane(warm_env.gt_frame(), cfg.agent.init_max_angle_deg,
                                                       cfg.agent.init_max_distance_mm,
                                                       warm_env.setup().volume->half_extent(), rng);
        traces.push_back(agent::run_episode(warm_env, start, qf, cfg.agent.max_steps));
      }
    }
    const auto adt_samples = termination::build_training_set(traces, cfg.agent.max_steps, cfg.termination.delta,
                                                             cfg.termination.samples_per_trace, rng);
    const auto at_samples =
        termination::build_training_set(traces, cfg.agent.max_steps, cfg.termination.delta, 1, rng, true);
    LineLog tlog(paths.train / ("termination_" + plane + "_log.jsonl"), false);
    say(opt, "plane " + plane + ": training termination models on " + std::to_string(adt_samples.size()) + " + " +
                 std::to_string(at_samples.size()) + " samples");
    termination::TerminationModel adt(cfg.termination, cfg.seed + kAdtSeed + pi);
    adt.train(adt_samples, [&](int e, double l) { tlog(json{{"model", "adt"}, {"epoch", e}, {"loss", l}}.dump()); });
    adt.save(art.adt);
    termination::TerminationModel at(cfg.termination, cfg.seed + kAtSeed + pi);
    at.train(at_samples, [&](int e, double l) { tlog(json{{"model", "at_full"}, {"epoch", e}, {"loss", l}}.dump()); });
    at.save(art.at);
  }
  write_text(paths.train / "complete.json", json{{"planes", names}}.dump() + "\n");
}

namespace {

struct CaseResult {
  std::vector<eval::EpisodeRecord> records;
  std::vector<EpisodeTrace> traces;
};

struct PlaneModels {
  Atlas atlas;
  agent::QNetwork q;
  termination::TerminationModel adt;
  termination::TerminationModel at;
};

/// Per-worker copies; networks are not shared across threads.
struct Worker {
  LandmarkDetector detector;
  std::vector<PlaneModels> planes;
};

double slice_ssim(const PhantomCase& c, const PlaneParams& p, const PlaneParams& gt, int size,
                  const eval::SsimConfig& cfg) {
  const SliceImage a = extract_slice(c.volume, oriented_like(p, gt), size);
  const SliceImage b = extract_slice(c.volume, gt, size);
  return eval::ssim(a, b, cfg);
}

CaseResult evaluate_case(const PhantomCase& c, std::size_t index, Worker& w, const RunConfig& cfg,
                         const std::vector<std::string>& names, const RunPaths& paths) {
  CaseResult out;
  const int S = cfg.agent.state_size;
  const LandmarkSet detected = w.detector.detect(c);
  for (std::size_t pi = 0; pi < names.size(); ++pi) {
    const std::string& plane = names[pi];
    PlaneModels& m = w.planes[pi];
    const PlaneParams gt = c.plane(plane);
    const agent::QFunction qf = [&m](const AgentState& s) { return m.q.q_values(s); };
    std::vector<termination::TerminationPolicy> policies;
    for (const auto& name : cfg.eval.policies) policies.push_back(make_policy(name, cfg, &m.adt, &m.at));

    auto record = [&](const std::string& method, int stop, int g, const EpisodeTrace& tr) {
      out.records.push_back({c.id, plane, method, stop, g, tr.ang[g], tr.dis[g],
                             slice_ssim(c, tr.planes[g], gt, S, cfg.eval.ssim)});
    };
    for (const auto& mode : cfg.eval.init_modes) {
      EpisodeTrace tr;
      if (mode == "random") {
        agent::Environment env(native_setup(c, plane, cfg));
        std::mt19937_64 rng(cfg.seed + kEvalSeed + 7919 * static_cast<std::uint64_t>(c.id) + pi);
        const PlaneParams start = agent::random_plane(c.volume.half_extent(), rng);
        tr = agent::run_episode(env, start, qf, cfg.agent.max_steps);
      } else {
        PlaneParams warm;
        agent::Environment env(aligned_setup(c, plane, detected, m.atlas, cfg, &warm));
        tr = agent::run_episode(env, warm, qf, mode == "regist" ? 0 : cfg.agent.max_steps);
      }
      tr.plane_name = plane;
      tr.init_mode = mode;
      if (mode == "regist") {
        record("regist", 0, 0, tr);
        out.traces.push_back(std::move(tr));
        continue;
      }
      std::vector<eval::PlotMarker> markers;
      std::vector<std::pair<int, int>> adt_predictions;
      for (const auto& p : policies) {
        const auto o = termination::apply_policy(p, tr);
        record(mode + "/" + o.policy, o.stop_iteration, o.chosen_step, tr);
        markers.push_back({o.policy, o.chosen_step, o.stop_iteration});
        if (p.kind == termination::PolicyKind::Adt) adt_predictions = o.predictions;
      }
      if (mode == "post" && index < static_cast<std::size_t>(cfg.eval.plot_cases)) {
        const fs::path dir = paths.eval / "plots";
        const std::string stem = c.name() + "_" + plane;
        eval::emit_plot(dir / (stem + ".svg"), tr, markers, adt_predictions);
        eval::write_pgm(dir / (stem + "_gt.pgm"), extract_slice(c.volume, gt, S));
        const int g = markers.empty() ? tr.steps() : markers.back().step;
        eval::write_pgm(dir / (stem + "_pred.pgm"), extract_slice(c.volume, oriented_like(tr.planes[g], gt), S));
      }
      out.traces.push_back(std::move(tr));
    }
  }
  return out;
}

}  // namespace

eval::RunReport run_eval(const RunConfig& cfg, const Options& opt) {
  cfg.validate();
  const RunPaths paths = run_paths(cfg);
  const Dataset ds = load_dataset(paths.dataset);
  const auto names = plane_names(cfg);
  auto require = [](const fs::path& p) {
    if (!fs::exists(p)) fail(ErrorKind::MissingArtifacts, "missing training artifact " + p.string());
  };
  require(paths.train / "complete.json");
  if (!cfg.detector.oracle) require(paths.train / "detector.ckpt");
  for (const auto& plane : names) {
    const PlaneArtifacts art = artifacts(paths, plane);
    require(art.atlas);
    require(art.agent);
    require(art.adt);
    require(art.at);
  }
  fs::create_directories(paths.eval / "plots");
  write_config_snapshot(paths, cfg);

  const int jobs = std::max(1, opt.jobs);
  std::vector<Worker> workers(static_cast<std::size_t>(jobs));
  for (std::size_t k = 0; k < workers.size(); ++k) {
    Worker& w = workers[k];
    w.detector = LandmarkDetector(cfg.detector, cfg.phantom.dims, landmark_labels(cfg), cfg.seed + kDetectorSeed);
    if (!cfg.detector.oracle) w.detector.load(paths.train / "detector.ckpt");
    for (std::size_t pi = 0; pi < names.size(); ++pi) {
      const PlaneArtifacts art = artifacts(paths, names[pi]);
      PlaneModels m{atlas_from_json(read_text(art.atlas)),
                    agent::QNetwork(cfg.agent.network, cfg.agent.state_size, cfg.seed + kAgentSeed + pi),
                    termination::TerminationModel(cfg.termination, cfg.seed + kAdtSeed + pi),
                    termination::TerminationModel(cfg.termination, cfg.seed + kAtSeed + pi)};
      nn::load_checkpoint(art.agent, m.q.describe_json(), m.q.state_tensors());
      m.adt.load(art.adt);
      m.at.load(art.at);
      w.planes.push_back(std::move(m));
    }
  }

  say(opt, "evaluating " + std::to_string(ds.test.size()) + " test cases with " + std::to_string(jobs) + " job(s)");
  std::vector<CaseResult> results(ds.test.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers.size());
  auto work = [&](std::size_t k) {
    try {
      for (std::size_t i = next++; i < ds.test.size(); i = next++) {
        results[i] = evaluate_case(ds.test[i], i, workers[k], cfg, names, paths);
      }
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < workers.size(); ++k) threads.emplace_back(work, k);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  LineLog records(paths.eval / "records.jsonl", false);
  LineLog traces(paths.eval / "traces.jsonl", false);
  for (const auto& r : results) {
    for (const auto& rec : r.records) records(eval::to_json_line(rec));
    for (const auto& tr : r.traces) traces(trace_json(tr).dump());
  }
  return run_report(cfg, opt);
}

eval::RunReport run_report(const RunConfig& cfg, const Options& opt) {
  const RunPaths paths = run_paths(cfg);
  const fs::path src = paths.eval / "records.jsonl";
  if (!fs::exists(src)) fail(ErrorKind::MissingArtifacts, "no evaluation records at " + src.string());
  std::vector<eval::EpisodeRecord> recs;
  std::istringstream in(read_text(src));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) recs.push_back(eval::record_from_json(line));
  }
  const eval::RunReport report = eval::summarize(recs);
  eval::write_report(paths.eval / "report", report);
  say(opt, "report written to " + (paths.eval / "report").string());
  return report;
}

}  // namespace planeloc::pipeline
