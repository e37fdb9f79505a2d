#include "planeloc/agent/trainer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "../binary_io.hpp"
#include "planeloc/agent/td.hpp"
#include "planeloc/error.hpp"
#include "planeloc/nn/checkpoint.hpp"

namespace planeloc::agent {

using nlohmann::json;

void AgentConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::InvalidConfig, std::string("agent config: ") + what);
  };
  require(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
  require(target_sync_interval > 0, "target_sync_interval must be positive");
  require(max_steps > 0, "max_steps must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(state_size >= 8, "state_size must be at least 8");
  require(buffer_capacity >= batch_size, "buffer_capacity must hold a batch");
  require(init_max_angle_deg >= 0.0 && init_max_distance_mm >= 0.0, "init bounds must be non-negative");
  require(priority_alpha >= 0.0, "priority_alpha must be non-negative");
  require(beta_start >= 0.0 && beta_end >= beta_start && beta_end <= 1.0, "beta must ramp up inside [0, 1]");
  require(epsilon.start >= 0.0 && epsilon.cap <= 1.0 && epsilon.start <= epsilon.cap, "epsilon range");
  require(epsilon.growth >= 1.0 && epsilon.interval > 0, "epsilon schedule must be non-decreasing");
  require(warmup_batches >= 1, "warmup_batches must be positive");
  require(epochs >= 0 && episodes_per_case > 0, "epochs and episodes_per_case");
  require(steps.angle_deg > 0.0 && steps.distance_vox > 0.0, "step sizes must be positive");
}

std::int64_t AgentConfig::planned_iterations(int n_train) const {
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(epochs) * n_train * episodes_per_case * max_steps);
}

namespace {

nn::OptimizerConfig adam(double lr) {
  nn::OptimizerConfig c;
  c.kind = nn::OptimizerKind::Adam;
  c.learning_rate = lr;
  return c;
}

}  // namespace

Trainer::Trainer(AgentConfig cfg, std::vector<EpisodeSetup> train, std::vector<EpisodeSetup> val, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      train_(std::move(train)),
      val_(std::move(val)),
      seed_(seed),
      online_(cfg_.network, cfg_.state_size, seed),
      target_(online_),
      optimizer_(adam(cfg_.learning_rate), online_.parameters()),
      buffer_(static_cast<std::size_t>(cfg_.buffer_capacity), cfg_.priority_alpha),
      rng_(seed ^ 0x5851f42d4c957f2dULL) {
  cfg_.validate();
  if (train_.empty()) fail(ErrorKind::InsufficientCases, "agent training needs at least one case");
  for (auto& s : train_) s.state_size = cfg_.state_size, s.steps = cfg_.steps;
  for (auto& s : val_) s.state_size = cfg_.state_size, s.steps = cfg_.steps;
  planned_ = cfg_.planned_iterations(static_cast<int>(train_.size()));
}

double Trainer::beta() const {
  const double frac = std::min(1.0, static_cast<double>(iteration_) / static_cast<double>(planned_));
  return cfg_.beta_start + (cfg_.beta_end - cfg_.beta_start) * frac;
}

void Trainer::emit(const std::string& line) {
  if (log_) log_(line);
}

void Trainer::run_episode(std::size_t case_index) {
  Environment env(train_[case_index]);
  const double h = env.setup().volume->half_extent();
  const PlaneParams start = perturb_plane(env.gt_frame(), cfg_.init_max_angle_deg, cfg_.init_max_distance_mm, h, rng_);
  env.reset(start);
  const auto warm = static_cast<std::size_t>(cfg_.warmup_batches) * static_cast<std::size_t>(cfg_.batch_size);
  for (int t = 0; t < cfg_.max_steps; ++t) {
    const double greedy_p = cfg_.epsilon.greedy_probability(iteration_);
    const AgentState s = env.state();
    const PlaneAction a = select_action(online_.q_values(s), greedy_p, rng_);
    const int r = env.step(a);
    buffer_.add(Transition{s, a, r, env.state(), static_cast<int>(case_index)});
    ++iteration_;

    json rec{{"iter", iteration_}, {"loss", nullptr}, {"epsilon", greedy_p}, {"buffer_size", buffer_.size()}};
    if (buffer_.size() >= warm) {
      const SampledBatch batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), beta(), rng_);
      online_.zero_grad();
      const TdResult res = td_loss(batch.transitions, batch.weights, online_, target_, cfg_.gamma);
      optimizer_.step();
      buffer_.update_priorities(batch.indices, res.td_errors);
      rec["loss"] = res.loss;
    }
    if (iteration_ % cfg_.target_sync_interval == 0) sync_target(online_, target_);
    emit(rec.dump());
  }
}

void Trainer::run_epoch() {
  std::vector<std::size_t> order;
  for (int e = 0; e < cfg_.episodes_per_case; ++e) {
    for (std::size_t i = 0; i < train_.size(); ++i) order.push_back(i);
  }
  std::shuffle(order.begin(), order.end(), rng_);
  for (std::size_t i : order) run_episode(i);
  ++epoch_;
  const ValidationResult v = validate();
  emit(json{{"epoch", epoch_}, {"val_ang", v.ang}, {"val_dis", v.dis}}.dump());
}

void Trainer::train(const std::function<void(Trainer&)>& after_epoch) {
  while (epoch_ < cfg_.epochs) {
    run_epoch();
    if (after_epoch) after_epoch(*this);
  }
}

ValidationResult Trainer::validate() {
  ValidationResult out;
  if (val_.empty()) return out;
  const QFunction q = [this](const AgentState& s) { return online_.q_values(s); };
  for (std::size_t j = 0; j < val_.size(); ++j) {
    Environment env(val_[j]);
    std::mt19937_64 rng(seed_ + 7919 * (j + 1));
    const PlaneParams start = perturb_plane(env.gt_frame(), cfg_.init_max_angle_deg, cfg_.init_max_distance_mm,
                                            env.setup().volume->half_extent(), rng);
    const EpisodeTrace tr = agent::run_episode(env, start, q, cfg_.max_steps);
    out.ang += tr.ang.back();
    out.dis += tr.dis.back();
  }
  out.ang /= static_cast<double>(val_.size());
  out.dis /= static_cast<double>(val_.size());
  return out;
}

namespace {

void write_plane(std::ostream& out, const PlaneParams& p) {
  for (double x : p.as_array()) detail::write_le<double>(out, x);
}

PlaneParams read_plane(std::istream& in) {
  const double a = detail::read_le<double>(in);
  const double b = detail::read_le<double>(in);
  const double c = detail::read_le<double>(in);
  const double d = detail::read_le<double>(in);
  return {a, b, c, d};
}

constexpr char kReplayMagic[9] = "PLRPLY\0\0";

}  // namespace

void Trainer::save(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir / "online.ckpt", online_.describe_json(), online_.state_tensors());
  nn::save_checkpoint(dir / "target.ckpt", target_.describe_json(), target_.state_tensors());
  {
    std::ofstream out(dir / "optimizer.bin", std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write optimizer state in " + dir.string());
    optimizer_.save_state(out);
  }
  {
    // Slices are rebuilt on load from their planes; extraction is deterministic.
    std::ofstream out(dir / "replay.bin", std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoError, "cannot write replay buffer in " + dir.string());
    detail::write_magic(out, kReplayMagic);
    detail::write_le<std::uint64_t>(out, buffer_.size());
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
      const Transition& t = buffer_.at(i);
      detail::write_le<std::int32_t>(out, t.source);
      detail::write_le<std::int32_t>(out, t.action.index());
      detail::write_le<std::int32_t>(out, t.reward);
      detail::write_le<double>(out, buffer_.priority(i));
      for (const auto& ch : t.state.channels) write_plane(out, ch->plane);
      for (const auto& ch : t.next_state.channels) write_plane(out, ch->plane);
    }
    if (!out) fail(ErrorKind::IoError, "replay buffer write failed");
  }
  std::ostringstream rng_text;
  rng_text << rng_;
  json j{{"iteration", iteration_},
         {"epoch", epoch_},
         {"rng", rng_text.str()},
         {"buffer_size", buffer_.size()},
         {"buffer_next", buffer_.next_slot()},
         {"max_priority", buffer_.max_priority()},
         {"network", json::parse(online_.describe_json())}};
  std::ofstream out(dir / "trainer.json");
  if (!out) fail(ErrorKind::IoError, "cannot write trainer state in " + dir.string());
  out << j.dump(2) << '\n';
}

void Trainer::load(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "trainer.json");
  if (!meta) fail(ErrorKind::IoError, "no trainer state in " + dir.string());
  json j;
  try {
    j = json::parse(meta);
  } catch (const json::exception& e) {
    fail(ErrorKind::IoError, std::string("malformed trainer state: ") + e.what());
  }
  nn::load_checkpoint(dir / "online.ckpt", online_.describe_json(), online_.state_tensors());
  nn::load_checkpoint(dir / "target.ckpt", target_.describe_json(), target_.state_tensors());
  {
    std::ifstream in(dir / "optimizer.bin", std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "no optimizer state in " + dir.string());
    optimizer_.load_state(in);
  }
  std::ifstream in(dir / "replay.bin", std::ios::binary);
  if (!in || !detail::read_magic(in, kReplayMagic)) fail(ErrorKind::IoError, "no replay buffer in " + dir.string());
  const auto n = detail::read_le<std::uint64_t>(in);
  std::map<std::pair<int, std::array<double, 4>>, std::shared_ptr<const SliceImage>> cache;
  std::vector<Environment> envs;
  for (const auto& s : train_) envs.emplace_back(s);
  auto slice = [&](int source, const PlaneParams& p) {
    if (source < 0 || static_cast<std::size_t>(source) >= envs.size()) {
      fail(ErrorKind::IoError, "replay buffer refers to an unknown case");
    }
    auto& slot = cache[{source, p.as_array()}];
    if (!slot) slot = envs[static_cast<std::size_t>(source)].render(p);
    return slot;
  };
  for (std::size_t i = 0; i < n; ++i) {
    Transition t;
    t.source = detail::read_le<std::int32_t>(in);
    t.action = PlaneAction(detail::read_le<std::int32_t>(in));
    t.reward = detail::read_le<std::int32_t>(in);
    const double priority = detail::read_le<double>(in);
    for (auto& ch : t.state.channels) ch = slice(t.source, read_plane(in));
    for (auto& ch : t.next_state.channels) ch = slice(t.source, read_plane(in));
    buffer_.restore(i, std::move(t), priority);
  }
  buffer_.restore_ring(j.at("buffer_size").get<std::size_t>(), j.at("buffer_next").get<std::size_t>(),
                       j.at("max_priority").get<double>());
  std::istringstream rng_text(j.at("rng").get<std::string>());
  rng_text >> rng_;
  iteration_ = j.at("iteration").get<std::int64_t>();
  epoch_ = j.at("epoch").get<int>();
}

}  // namespace planeloc::agent
