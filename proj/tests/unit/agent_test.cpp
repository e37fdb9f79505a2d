#include <cmath>
#include <map>
#include <random>

#include <doctest.h>

#include "planeloc/agent/episode.hpp"
#include "planeloc/agent/q_network.hpp"
#include "planeloc/agent/replay.hpp"
#include "planeloc/agent/td.hpp"
#include "planeloc/agent/trainer.hpp"
#include "planeloc/error.hpp"
#include "planeloc/phantom.hpp"
#include "support.hpp"

using namespace planeloc;
using namespace planeloc::agent;

namespace {

QNetworkSpec tiny_spec() { return QNetworkSpec::make(std::vector<int>{4, 8}, std::vector<int>{8}); }

AgentState random_state(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<std::shared_ptr<const SliceImage>, 3> ch;
  for (auto& c : ch) {
    SliceImage s;
    s.size = size;
    s.pixels.resize(static_cast<std::size_t>(size) * size);
    for (double& x : s.pixels) x = u(rng);
    c = std::make_shared<const SliceImage>(std::move(s));
  }
  return compose_state(ch[0], ch[1], ch[2]);
}

Transition random_transition(int size, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> a(0, 7), r(-1, 1);
  return {random_state(size, rng), PlaneAction(a(rng)), r(rng), random_state(size, rng), 0};
}

struct CaseFixture {
  PhantomCase c = generate(testing::small_spec(5), 0);
  EpisodeSetup setup() const {
    EpisodeSetup s;
    s.case_id = c.id;
    s.volume = std::shared_ptr<const Volume>(std::shared_ptr<const Volume>{}, &c.volume);
    s.gt = c.plane("spheres");
    s.state_size = 16;
    return s;
  }
};

}  // namespace

TEST_CASE("dueling combination subtracts the mean advantage") {
  QNetwork net(tiny_spec(), 16, 1);
  std::mt19937_64 rng(2);
  std::vector<AgentState> states;
  for (int i = 0; i < 5; ++i) states.push_back(random_state(16, rng));
  std::vector<const AgentState*> ptrs;
  for (auto& s : states) ptrs.push_back(&s);
  const auto out = net.forward(stack_states(ptrs), nn::Mode::Infer);
  for (int b = 0; b < 5; ++b) {
    double mean_a = 0.0, mean_q = 0.0;
    for (int a = 0; a < 8; ++a) {
      mean_a += out.advantage[b * 8 + a] / 8.0;
      mean_q += out.q[b * 8 + a] / 8.0;
    }
    CHECK(std::abs(mean_q - out.value[b]) < 1e-12);
    for (int a = 0; a < 8; ++a) {
      CHECK(std::abs(out.q[b * 8 + a] - (out.value[b] + out.advantage[b * 8 + a] - mean_a)) < 1e-12);
    }
  }
}

TEST_CASE("q-network gradients flow through both heads") {
  QNetwork net(tiny_spec(), 16, 3);
  std::mt19937_64 rng(4);
  std::vector<AgentState> states{random_state(16, rng), random_state(16, rng)};
  std::vector<const AgentState*> ptrs{&states[0], &states[1]};
  const nn::Tensor x = stack_states(ptrs);
  const nn::Tensor w = testing::random_tensor({2, 8}, rng);
  auto loss = [&] {
    const auto out = net.forward(x, nn::Mode::Train);
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * out.q[i];
    return s;
  };
  net.zero_grad();
  loss();
  net.backward(w);
  for (nn::Parameter* p : net.parameters()) {
    const std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
    const auto numeric = testing::numeric_grad(p->value.values(), loss);
    INFO(p->name);
    CHECK(testing::rel_error(analytic, numeric) <= 1e-4);
  }
}

TEST_CASE("greedy choice, exploration schedule and target sync") {
  CHECK(greedy_action({0, 3, 3, 1, 0, 0, 0, 0}) == 1);
  CHECK(greedy_action({-1, -1, -1, -1, -1, -1, -1, -1}) == 0);
  EpsilonSchedule e;
  CHECK(e.greedy_probability(0) == doctest::Approx(0.6));
  CHECK(e.greedy_probability(10000) == doctest::Approx(0.606));
  CHECK(e.greedy_probability(20000) == doctest::Approx(0.6 * 1.01 * 1.01));
  CHECK(e.greedy_probability(100000000) == doctest::Approx(0.95));
  std::mt19937_64 rng(5);
  const QVector q{0, 0, 0, 0, 0, 9, 0, 0};
  for (int i = 0; i < 100; ++i) CHECK(select_action(q, 1.0, rng).index() == 5);
  std::map<int, int> counts;
  for (int i = 0; i < 8000; ++i) ++counts[select_action(q, 0.0, rng).index()];
  for (int a = 0; a < 8; ++a) CHECK(std::abs(counts[a] - 1000) < 150);

  QNetwork online(tiny_spec(), 16, 1);
  QNetwork target(tiny_spec(), 16, 2);
  sync_target(online, target);
  const AgentState s = random_state(16, rng);
  CHECK(online.q_values(s) == target.q_values(s));
  QNetwork other(QNetworkSpec::make(std::vector<int>{4}, std::vector<int>{8}), 16, 1);
  CHECK_THROWS_AS(sync_target(online, other), Error);
}

TEST_CASE("sum tree sums and searches") {
  SumTree t(5);
  const double v[] = {1.0, 0.0, 2.0, 0.5, 1.5};
  for (int i = 0; i < 5; ++i) t.set(i, v[i]);
  CHECK(t.total() == doctest::Approx(5.0));
  CHECK(t.consistent());
  CHECK(t.find(0.5) == 0);
  CHECK(t.find(1.0) == 2);  // leaf 1 is empty
  CHECK(t.find(2.9) == 2);
  CHECK(t.find(3.2) == 3);
  CHECK(t.find(4.99) == 4);
  CHECK(t.find(100.0) == 4);
}

TEST_CASE("prioritized sampling follows p^alpha") {
  std::mt19937_64 rng(6);
  PrioritizedBuffer buf(4, 0.6);
  CHECK_THROWS_AS(buf.sample(2, 0.4, rng), Error);
  const double td[] = {0.1, 1.0, 2.0, 0.5};
  for (double d : td) buf.add(random_transition(8, rng), d);
  double z = 0.0;
  for (double d : td) z += std::pow(d + PrioritizedBuffer::kPriorityFloor, 0.6);
  std::vector<int> hits(4, 0);
  const int draws = 20000;
  for (int i = 0; i < draws / 4; ++i) {
    const SampledBatch b = buf.sample(4, 0.4, rng);
    double wmax = 0.0;
    for (double w : b.weights) wmax = std::max(wmax, w);
    CHECK(wmax == 1.0);
    for (std::size_t k : b.indices) ++hits[k];
  }
  for (int k = 0; k < 4; ++k) {
    const double p = std::pow(td[k] + PrioritizedBuffer::kPriorityFloor, 0.6) / z;
    CHECK(buf.sampling_probability(k) == doctest::Approx(p));
    CHECK(std::abs(hits[k] / static_cast<double>(draws) - p) < 0.02);
  }
}

TEST_CASE("importance weights are (N P)^-beta over the batch maximum") {
  std::mt19937_64 rng(7);
  PrioritizedBuffer buf(3, 1.0);
  buf.add(random_transition(8, rng), 1.0);
  buf.add(random_transition(8, rng), 3.0);
  buf.add(random_transition(8, rng), 0.0);
  const SampledBatch b = buf.sample(16, 0.5, rng);
  double wmax = 0.0;
  std::vector<double> raw;
  for (std::size_t k : b.indices) {
    raw.push_back(std::pow(3.0 * buf.sampling_probability(k), -0.5));
    wmax = std::max(wmax, raw.back());
  }
  for (std::size_t i = 0; i < raw.size(); ++i) CHECK(b.weights[i] == doctest::Approx(raw[i] / wmax));
}

TEST_CASE("new transitions get the running maximum and the ring evicts oldest") {
  std::mt19937_64 rng(8);
  PrioritizedBuffer buf(3, 0.6);
  CHECK(buf.add(random_transition(8, rng)) == 0);
  CHECK(buf.priority(0) == 1.0);
  buf.add(random_transition(8, rng), 4.0);
  const std::size_t slot = buf.add(random_transition(8, rng));
  CHECK(buf.priority(slot) == doctest::Approx(4.0 + PrioritizedBuffer::kPriorityFloor));
  CHECK(buf.add(random_transition(8, rng), 0.0) == 0);
  CHECK(buf.size() == 3);
  CHECK(buf.priority(0) == PrioritizedBuffer::kPriorityFloor);
  const std::size_t idx[] = {1};
  const double err[] = {-0.25};
  buf.update_priorities(idx, err);
  CHECK(buf.priority(1) == doctest::Approx(0.25 + PrioritizedBuffer::kPriorityFloor));
  CHECK(buf.tree().consistent());
  const std::size_t bad[] = {7};
  CHECK_THROWS_AS(buf.update_priorities(bad, err), Error);
}

TEST_CASE("td loss matches the double-DQN target computed independently") {
  std::mt19937_64 rng(9);
  QNetwork online(tiny_spec(), 16, 10);
  QNetwork target(tiny_spec(), 16, 11);
  std::vector<Transition> ts;
  for (int i = 0; i < 4; ++i) ts.push_back(random_transition(16, rng));
  std::vector<const Transition*> batch;
  for (auto& t : ts) batch.push_back(&t);
  const std::vector<double> w{1.0, 0.5, 0.25, 1.0};

  std::vector<const AgentState*> next, cur;
  for (auto& t : ts) next.push_back(&t.next_state), cur.push_back(&t.state);
  QNetwork o2 = online, t2 = target;
  const auto qn = o2.forward(stack_states(next), nn::Mode::Batch).q;
  const auto qt = t2.forward(stack_states(next), nn::Mode::Batch).q;
  const auto qs = o2.forward(stack_states(cur), nn::Mode::Batch).q;
  double expect = 0.0;
  std::vector<double> deltas;
  for (int i = 0; i < 4; ++i) {
    int best = 0;
    for (int a = 1; a < 8; ++a)
      if (qn[i * 8 + a] > qn[i * 8 + best]) best = a;
    const double y = ts[i].reward + 0.9 * qt[i * 8 + best];
    const double d = y - qs[i * 8 + ts[i].action.index()];
    deltas.push_back(d);
    expect += w[i] * d * d / 4.0;
  }
  online.zero_grad();
  const TdResult r = td_loss(batch, w, online, target, 0.9);
  CHECK(r.loss == doctest::Approx(expect).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) CHECK(r.td_errors[i] == doctest::Approx(deltas[i]).epsilon(1e-12));
  CHECK_THROWS_AS(td_loss({}, {}, online, target, 0.9), Error);
  const std::vector<double> short_w{1.0};
  CHECK_THROWS_AS(td_loss(batch, short_w, online, target, 0.9), Error);
}

TEST_CASE("td loss gradient matches central differences") {
  std::mt19937_64 rng(12);
  QNetwork online(tiny_spec(), 16, 13);
  QNetwork target(tiny_spec(), 16, 14);
  std::vector<Transition> ts;
  for (int i = 0; i < 3; ++i) ts.push_back(random_transition(16, rng));
  std::vector<const Transition*> batch;
  for (auto& t : ts) batch.push_back(&t);
  const std::vector<double> w{1.0, 0.7, 0.4};
  online.zero_grad();
  const TdResult r = td_loss(batch, w, online, target, 0.9);
  // The target, including the action chosen at s', is held constant.
  std::vector<const AgentState*> cur, next;
  for (auto& t : ts) cur.push_back(&t.state), next.push_back(&t.next_state);
  const nn::Tensor qt = target.forward(stack_states(next), nn::Mode::Batch).q;
  auto loss = [&] {
    QNetwork scratch = online;
    const nn::Tensor q = scratch.forward(stack_states(cur), nn::Mode::Train).q;
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double y = ts[i].reward + 0.9 * qt[i * 8 + r.target_actions[i]];
      s += w[i] * std::pow(y - q[i * 8 + ts[i].action.index()], 2) / 3.0;
    }
    return s;
  };
  CHECK(loss() == doctest::Approx(r.loss).epsilon(1e-12));
  for (nn::Parameter* p : online.parameters()) {
    const std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
    INFO(p->name);
    CHECK(testing::rel_error(analytic, testing::numeric_grad(p->value.values(), loss)) <= 1e-4);
  }
}

TEST_CASE("environment steps, rewards and clamping") {
  CaseFixture f;
  Environment env(f.setup());
  const PlaneParams gt = f.c.plane("spheres");
  std::mt19937_64 rng(15);
  const PlaneParams start = perturb_plane(gt, 10.0, 5.0, f.c.volume.half_extent(), rng);
  env.reset(start);
  for (int a = 0; a < 8; ++a) {
    const PlaneParams before = env.plane();
    const int r = env.step(PlaneAction(a));
    CHECK(r == reward(before, env.plane(), env.gt_frame()));
  }
  // Push d past the edge: it stays clamped.
  env.reset(gt.with_d(f.c.volume.half_extent()));
  env.step(PlaneAction(PlaneAction::kDPlus));
  CHECK(env.plane().d() == f.c.volume.half_extent());
  CHECK(env.state().size() == 16);
}

TEST_CASE("a transformed frame sees the ground truth through the transform") {
  CaseFixture f;
  EpisodeSetup s = f.setup();
  s.frame_to_volume = RigidTransform::checked(axis_angle_rotation(Vec3(0, 1, 0), 30.0), Vec3(1, 0, 0));
  Environment env(s);
  CHECK(angle_between(transform_plane(env.gt_frame(), s.frame_to_volume), s.gt) < 1e-5);
  env.reset(env.gt_frame());
  CHECK(env.error().ang < 1e-5);
  CHECK(env.error().dis < 1e-9);
  // What the agent sees equals a direct cut through the volume.
  const SliceImage direct = extract_slice(f.c.volume, env.gt_frame(), 16, s.frame_to_volume);
  CHECK(env.state().channels[2]->pixels == direct.pixels);
}

TEST_CASE("perturbed and random starts respect their bounds") {
  CaseFixture f;
  const PlaneParams gt = f.c.plane("spheres");
  std::mt19937_64 rng(16);
  const double h = f.c.volume.half_extent();
  for (int i = 0; i < 300; ++i) {
    const PlaneParams p = perturb_plane(gt, 25.0, 10.0, h, rng);
    CHECK(angle_between(p, gt) <= 25.0 + 1e-9);
    CHECK(distance_between(p, gt) <= 10.0 + 1e-9);
    const PlaneParams r = random_plane(h, rng);
    CHECK(std::abs(r.d()) <= h);
    CHECK(canonicalize(r) == r);
  }
}

TEST_CASE("greedy rollouts record every step") {
  CaseFixture f;
  Environment env(f.setup());
  QNetwork net(tiny_spec(), 16, 17);
  const QFunction q = [&](const AgentState& s) { return net.q_values(s); };
  const EpisodeTrace t = run_episode(env, f.c.plane("spheres"), q, 6);
  CHECK(t.steps() == 6);
  CHECK(t.consistent());
  CHECK(t.ang[0] < 1e-6);
  CHECK(t.q.size() == 7);
  int calls = 0;
  const EpisodeTrace stopped = run_episode(env, f.c.plane("spheres"), q, 6, [&](const EpisodeTrace&) {
    return ++calls == 3;
  });
  CHECK(stopped.steps() == 3);
  // Greedy rollouts are deterministic.
  const EpisodeTrace again = run_episode(env, f.c.plane("spheres"), q, 6);
  CHECK(again.ang == t.ang);
}

TEST_CASE("interrupted training resumes with an identical continuation") {
  const auto dir = testing::scratch_dir("trainer_resume");
  std::vector<PhantomCase> cases;
  for (int i = 0; i < 3; ++i) cases.push_back(generate(testing::small_spec(30 + i), i));
  std::vector<EpisodeSetup> train, val;
  for (int i = 0; i < 3; ++i) {
    EpisodeSetup s;
    s.case_id = i;
    s.volume = std::shared_ptr<const Volume>(std::shared_ptr<const Volume>{}, &cases[i].volume);
    s.gt = cases[i].plane("spheres");
    s.state_size = 16;
    (i < 2 ? train : val).push_back(s);
  }
  AgentConfig cfg;
  cfg.network = tiny_spec();
  cfg.state_size = 16;
  cfg.max_steps = 8;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.target_sync_interval = 5;
  cfg.buffer_capacity = 20;  // small enough to wrap during the run
  cfg.warmup_batches = 2;
  cfg.epsilon.interval = 4;

  std::vector<std::string> straight;
  Trainer a(cfg, train, val, 21);
  a.set_log([&](const std::string& l) { straight.push_back(l); });
  a.train();

  std::vector<std::string> resumed;
  {
    Trainer b(cfg, train, val, 21);
    b.set_log([&](const std::string& l) { resumed.push_back(l); });
    b.run_epoch();
    b.save(dir);
  }
  Trainer c(cfg, train, val, 21);
  c.load(dir);
  CHECK(c.epoch() == 1);
  c.set_log([&](const std::string& l) { resumed.push_back(l); });
  c.train();
  CHECK(resumed == straight);
  const auto sa = a.online().state_tensors();
  const auto sc = c.online().state_tensors();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(std::equal(sa[i].second->values().begin(), sa[i].second->values().end(),
                     sc[i].second->values().begin()));
  }
}

TEST_CASE("agent config validation") {
  AgentConfig c;
  CHECK_NOTHROW(c.validate());
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = AgentConfig{};
  c.beta_start = 0.9;
  c.beta_end = 0.5;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(AgentConfig{}.planned_iterations(30) == 100LL * 30 * 75);
}
