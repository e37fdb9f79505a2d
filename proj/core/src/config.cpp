#include "planeloc/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "planeloc/error.hpp"

namespace planeloc {

using nlohmann::json;

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidConfig, what);
  };
  try {
    phantom.validate();
  } catch (const Error& e) {
    fail(ErrorKind::InvalidConfig, std::string("phantom: ") + e.what());
  }
  require(split.train >= 2, "split.train must be at least 2 (atlas selection)");
  require(split.val >= 0 && split.test >= 1, "split.val must be >= 0 and split.test >= 1");
  require(!output_dir.empty(), "output_dir must not be empty");
  agent.validate();
  detector.validate();
  termination.validate();
  require(termination.max_len == agent.max_steps, "termination.max_len must equal agent.max_steps");
  require(termination_data.traces_per_case >= 1, "termination_data.traces_per_case must be positive");
  require(eval.plot_cases >= 0, "eval.plot_cases must be non-negative");
  require(eval.ssim.window >= 1 && eval.ssim.sigma > 0.0, "eval.ssim window and sigma");
  for (const auto& m : eval.init_modes) {
    require(m == "random" || m == "regist" || m == "post", "unknown init mode '" + m + "'");
  }
  for (const auto& p : eval.policies) termination::policy_kind_from_string(p);
}

RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.output_dir = "runs/paper";
  c.phantom.dims = {64, 64, 64};
  c.phantom.n_planes = 2;
  c.agent = agent::AgentConfig{};
  c.agent.network = agent::QNetworkSpec::wide();
  c.agent.state_size = 64;
  c.detector = DetectorConfig{};
  c.detector.downsample = 2;
  c.termination = termination::TerminationConfig{};
  return c;
}

RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.output_dir = "runs/desk";
  c.phantom.dims = {64, 64, 64};
  c.phantom.n_planes = 1;
  c.split = {30, 5, 10};

  auto& a = c.agent;
  a.network = agent::QNetworkSpec::desk();
  a.state_size = 32;
  a.learning_rate = 1e-4;
  a.target_sync_interval = 500;
  a.epsilon.interval = 1000;
  a.epochs = 30;
  a.buffer_capacity = 15000;

  c.detector.downsample = 4;
  c.detector.epochs = 60;
  c.detector.learning_rate = 3e-3;

  auto& t = c.termination;
  t.backbone = termination::Backbone::Lstm;
  t.hidden = 16;
  t.layers = 1;
  t.optimizer = nn::OptimizerKind::Adam;
  t.learning_rate = 1e-3;
  t.batch_size = 32;
  t.epochs = 60;
  c.termination_data.traces_per_case = 4;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "paper") return paper_preset();
  if (name == "desk") return desk_preset();
  fail(ErrorKind::InvalidConfig, "unknown preset '" + name + "'");
}

namespace {

const char* optimizer_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::Sgd ? "sgd" : "adam"; }

nn::OptimizerKind optimizer_from(const std::string& s) {
  if (s == "sgd") return nn::OptimizerKind::Sgd;
  if (s == "adam") return nn::OptimizerKind::Adam;
  fail(ErrorKind::InvalidConfig, "unknown optimizer '" + s + "'");
}

/// Reads known keys of one JSON object and rejects everything else.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorKind::InvalidConfig, where() + " must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::InvalidConfig, where(key) + " has the wrong type");
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    return key ? p + "." + key : p;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(ErrorKind::InvalidConfig, "unknown key " + where(k.c_str()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json agent_json(const agent::AgentConfig& a) {
  return {{"network", json::parse(agent::to_json(a.network))},
          {"state_size", a.state_size},
          {"gamma", a.gamma},
          {"target_sync_interval", a.target_sync_interval},
          {"max_steps", a.max_steps},
          {"batch_size", a.batch_size},
          {"learning_rate", a.learning_rate},
          {"init_max_angle_deg", a.init_max_angle_deg},
          {"init_max_distance_mm", a.init_max_distance_mm},
          {"angle_step_deg", a.steps.angle_deg},
          {"distance_step_vox", a.steps.distance_vox},
          {"buffer_capacity", a.buffer_capacity},
          {"priority_alpha", a.priority_alpha},
          {"beta_start", a.beta_start},
          {"beta_end", a.beta_end},
          {"epsilon",
           {{"start", a.epsilon.start},
            {"growth", a.epsilon.growth},
            {"interval", a.epsilon.interval},
            {"cap", a.epsilon.cap}}},
          {"warmup_batches", a.warmup_batches},
          {"epochs", a.epochs},
          {"episodes_per_case", a.episodes_per_case}};
}

void read_agent(const json& j, agent::AgentConfig& a) {
  Section s(j, "agent");
  if (const json* n = s.child("network")) {
    try {
      a.network = agent::q_network_spec_from_json(n->dump());
    } catch (const Error& e) {
      fail(ErrorKind::InvalidConfig, std::string("agent.network: ") + e.what());
    }
  }
  s.read("state_size", a.state_size);
  s.read("gamma", a.gamma);
  s.read("target_sync_interval", a.target_sync_interval);
  s.read("max_steps", a.max_steps);
  s.read("batch_size", a.batch_size);
  s.read("learning_rate", a.learning_rate);
  s.read("init_max_angle_deg", a.init_max_angle_deg);
  s.read("init_max_distance_mm", a.init_max_distance_mm);
  s.read("angle_step_deg", a.steps.angle_deg);
  s.read("distance_step_vox", a.steps.distance_vox);
  s.read("buffer_capacity", a.buffer_capacity);
  s.read("priority_alpha", a.priority_alpha);
  s.read("beta_start", a.beta_start);
  s.read("beta_end", a.beta_end);
  if (const json* e = s.child("epsilon")) {
    Section es(*e, "agent.epsilon");
    es.read("start", a.epsilon.start);
    es.read("growth", a.epsilon.growth);
    es.read("interval", a.epsilon.interval);
    es.read("cap", a.epsilon.cap);
    es.finish();
  }
  s.read("warmup_batches", a.warmup_batches);
  s.read("epochs", a.epochs);
  s.read("episodes_per_case", a.episodes_per_case);
  s.finish();
}

json termination_json(const termination::TerminationConfig& t, const TerminationData& d) {
  return {{"backbone", termination::to_string(t.backbone)},
          {"hidden", t.hidden},
          {"layers", t.layers},
          {"epochs", t.epochs},
          {"optimizer", optimizer_name(t.optimizer)},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"batch_size", t.batch_size},
          {"loss", termination::to_string(t.loss)},
          {"delta", t.delta},
          {"samples_per_trace", t.samples_per_trace},
          {"traces_per_case", d.traces_per_case}};
}

void read_termination(const json& j, termination::TerminationConfig& t, TerminationData& d) {
  Section s(j, "termination");
  std::string backbone = termination::to_string(t.backbone);
  std::string optimizer = optimizer_name(t.optimizer);
  std::string loss = termination::to_string(t.loss);
  s.read("backbone", backbone);
  s.read("hidden", t.hidden);
  s.read("layers", t.layers);
  s.read("epochs", t.epochs);
  s.read("optimizer", optimizer);
  s.read("learning_rate", t.learning_rate);
  s.read("momentum", t.momentum);
  s.read("batch_size", t.batch_size);
  s.read("loss", loss);
  s.read("delta", t.delta);
  s.read("samples_per_trace", t.samples_per_trace);
  s.read("traces_per_case", d.traces_per_case);
  s.finish();
  t.backbone = termination::backbone_from_string(backbone);
  t.optimizer = optimizer_from(optimizer);
  t.loss = termination::loss_kind_from_string(loss);
}

}  // namespace

std::string to_json(const RunConfig& c) {
  json j;
  j["version"] = kConfigVersion;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["phantom"] = {{"dims", c.phantom.dims},
                  {"max_rotation_deg", c.phantom.max_rotation_deg},
                  {"max_translation_vox", c.phantom.max_translation_vox},
                  {"noise_sigma", c.phantom.noise_sigma},
                  {"speckle_strength", c.phantom.speckle_strength},
                  {"n_landmarks", c.phantom.n_landmarks},
                  {"n_planes", c.phantom.n_planes}};
  j["split"] = {{"train", c.split.train}, {"val", c.split.val}, {"test", c.split.test}};
  j["agent"] = agent_json(c.agent);
  j["detector"] = {{"oracle", c.detector.oracle},
                   {"downsample", c.detector.downsample},
                   {"sigma", c.detector.sigma},
                   {"channels", c.detector.channels},
                   {"epochs", c.detector.epochs},
                   {"learning_rate", c.detector.learning_rate}};
  j["alignment"] = {{"resample", c.resample_aligned}};
  j["termination"] = termination_json(c.termination, c.termination_data);
  j["eval"] = {{"init_modes", c.eval.init_modes},
               {"policies", c.eval.policies},
               {"plot_cases", c.eval.plot_cases},
               {"ssim",
                {{"window", c.eval.ssim.window},
                 {"sigma", c.eval.ssim.sigma},
                 {"k1", c.eval.ssim.k1},
                 {"k2", c.eval.ssim.k2},
                 {"dynamic_range", c.eval.ssim.dynamic_range}}}};
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text, const RunConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = base;
  Section s(j, "");
  int version = kConfigVersion;
  s.read("version", version);
  if (version != kConfigVersion) {
    fail(ErrorKind::InvalidConfig, "unsupported config version " + std::to_string(version));
  }
  s.read("preset", c.preset);
  s.read("seed", c.seed);
  s.read("output_dir", c.output_dir);
  if (const json* p = s.child("phantom")) {
    Section ps(*p, "phantom");
    ps.read("dims", c.phantom.dims);
    ps.read("max_rotation_deg", c.phantom.max_rotation_deg);
    ps.read("max_translation_vox", c.phantom.max_translation_vox);
    ps.read("noise_sigma", c.phantom.noise_sigma);
    ps.read("speckle_strength", c.phantom.speckle_strength);
    ps.read("n_landmarks", c.phantom.n_landmarks);
    ps.read("n_planes", c.phantom.n_planes);
    ps.finish();
  }
  if (const json* p = s.child("split")) {
    Section ps(*p, "split");
    ps.read("train", c.split.train);
    ps.read("val", c.split.val);
    ps.read("test", c.split.test);
    ps.finish();
  }
  if (const json* p = s.child("agent")) read_agent(*p, c.agent);
  if (const json* p = s.child("detector")) {
    Section ps(*p, "detector");
    ps.read("oracle", c.detector.oracle);
    ps.read("downsample", c.detector.downsample);
    ps.read("sigma", c.detector.sigma);
    ps.read("channels", c.detector.channels);
    ps.read("epochs", c.detector.epochs);
    ps.read("learning_rate", c.detector.learning_rate);
    ps.finish();
  }
  if (const json* p = s.child("alignment")) {
    Section ps(*p, "alignment");
    ps.read("resample", c.resample_aligned);
    ps.finish();
  }
  if (const json* p = s.child("termination")) read_termination(*p, c.termination, c.termination_data);
  if (const json* p = s.child("eval")) {
    Section ps(*p, "eval");
    ps.read("init_modes", c.eval.init_modes);
    ps.read("policies", c.eval.policies);
    ps.read("plot_cases", c.eval.plot_cases);
    if (const json* q = ps.child("ssim")) {
      Section qs(*q, "eval.ssim");
      qs.read("window", c.eval.ssim.window);
      qs.read("sigma", c.eval.ssim.sigma);
      qs.read("k1", c.eval.ssim.k1);
      qs.read("k2", c.eval.ssim.k2);
      qs.read("dynamic_range", c.eval.ssim.dynamic_range);
      qs.finish();
    }
    ps.finish();
  }
  s.finish();
  c.termination.max_len = c.agent.max_steps;
  c.validate();
  return c;
}

RunConfig config_from_json(const std::string& text) {
  std::string name = "desk";
  try {
    const json j = json::parse(text);
    if (j.is_object() && j.contains("preset") && j.at("preset").is_string()) name = j.at("preset").get<std::string>();
  } catch (const json::exception&) {
    // reported by the full parse below
  }
  return config_from_json(text, preset(name));
}

}  // namespace planeloc
