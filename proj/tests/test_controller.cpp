#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "trlhpo/controller/ddpg.hpp"
#include "trlhpo/controller/replay_buffer.hpp"
#include "trlhpo/controller/transformer.hpp"

using namespace trlhpo;
using namespace trlhpo::controller;
using core::Tensor;
namespace tk = trlhpo::testkit;

namespace {

EnvState random_state(core::Rng& rng, std::size_t layers) {
  EnvState s;
  s.layer_count = layers;
  for (std::size_t i = 0; i < layers * kImrWidth; ++i) s.slots[i] = 2.0 * core::uniform01(rng) - 1.0;
  s.last_accuracy = core::uniform01(rng);
  return s;
}

ActionVector random_action(core::Rng& rng) {
  ActionVector a;
  for (auto& v : a.a) v = core::uniform01(rng);
  return a;
}

Transition random_transition(core::Rng& rng, bool done) {
  const auto k = tk::pick(rng, 0, kMaxLayers - 1);
  Transition t;
  t.state = random_state(rng, k);
  t.action = random_action(rng);
  t.reward = 2.0 * core::uniform01(rng) - 1.0;
  t.next_state = random_state(rng, k + 1);
  t.done = done;
  return t;
}

MhsaWeights random_mhsa(core::Rng& rng, std::size_t embed, std::size_t heads) {
  auto lin = [&] { return Linear{tk::random_tensor({embed, embed}, rng, 0.5), tk::random_tensor({embed}, rng, 0.1)}; };
  MhsaWeights w;
  w.query = lin();
  w.key = lin();
  w.value = lin();
  w.output = lin();
  w.heads = heads;
  return w;
}

/// Small network for finite-difference checks; every dimension is at most 8.
TransformerConfig small_config(bool critic) {
  TransformerConfig c;
  c.input_dim = 8;
  c.embed_dim = 8;
  c.heads = 2;
  c.blocks = 2;
  c.expansion = 1;
  c.seq_len = 6;
  c.output_dim = critic ? 1 : 4;
  c.extra_token_dim = critic ? 4 : 0;
  c.output_activation = critic ? OutputActivation::Tanh : OutputActivation::Sigmoid;
  c.head_init_std = 0.5;
  return c;
}

double param_distance(const core::ParamList& a, const core::ParamList& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].value.numel(); ++k) d += std::pow(a[i].value[k] - b[i].value[k], 2);
  return std::sqrt(d);
}

}  // namespace

TEST(PositionalEncoding, Examples) {
  const auto pe = positional_encoding(6, 64);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(pe[i], i % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(pe[64], 0.841471, 1e-6);
  EXPECT_NEAR(positional_encoding(3, 8)[8], std::sin(1.0), 1e-15);
  for (double v : pe.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  // Deeper columns use slower frequencies: column 2 at pos 5 is sin(5 / 10000^(2/64)).
  EXPECT_NEAR(pe[5 * 64 + 2], std::sin(5.0 / std::pow(10000.0, 2.0 / 64.0)), 1e-15);
  EXPECT_THROW(positional_encoding(6, 7), std::invalid_argument);
}

TEST(Mhsa, IdenticalRowsGiveUniformAttention) {
  core::Rng rng(1);
  const auto w = random_mhsa(rng, 16, 4);
  const Tensor row = tk::random_tensor({1, 16}, rng);
  std::vector<double> rows;
  for (int r = 0; r < 5; ++r) rows.insert(rows.end(), row.data().begin(), row.data().end());
  const auto out = mhsa_forward(w, Tensor({5, 16}, rows), false);
  ASSERT_EQ(out.attention.size(), 4u);
  for (const auto& a : out.attention)
    for (double v : a.data()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(Mhsa, CausalRowsAndNormalization) {
  core::Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto w = random_mhsa(rng, 16, 4);
    const auto out = mhsa_forward(w, tk::random_tensor({6, 16}, rng, 2.0), true);
    for (const auto& a : out.attention) {
      EXPECT_EQ(a[0], 1.0);
      for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
          EXPECT_GE(a[i * 6 + j], 0.0);
          if (j > i) EXPECT_EQ(a[i * 6 + j], 0.0);
          sum += a[i * 6 + j];
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
    }
  }
}

TEST(Mhsa, IndivisibleEmbedThrows) {
  core::Rng rng(3);
  auto w = random_mhsa(rng, 6, 4);
  EXPECT_THROW(mhsa_forward(w, tk::random_tensor({2, 6}, rng), true), core::ShapeError);
}

TEST(Networks, OutputRangesOverRandomStates) {
  DdpgAgent agent(DdpgConfig{}, 5);
  core::Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const auto s = random_state(rng, tk::pick(rng, 0, kMaxLayers));
    const auto out = agent.act(s);
    EXPECT_TRUE(out.action.valid());
    ASSERT_EQ(out.attention.size(), 4u);
    for (const auto& a : out.attention) {
      ASSERT_EQ(a.shape(), (core::Shape{6, 6}));
      for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 6; ++j) sum += a[i * 6 + j];
        EXPECT_NEAR(sum, 1.0, 1e-9);
      }
    }
    const double q = critic_forward(agent.critic(), s, random_action(rng));
    EXPECT_GE(q, -1.0);
    EXPECT_LE(q, 1.0);
  }
}

TEST(Networks, CriticAttendsOverStateAndActionToken) {
  DdpgAgent agent(DdpgConfig{}, 5);
  core::Rng rng(7);
  const auto s = random_state(rng, 3);
  const auto out = agent.critic().forward(state_tokens(s), action_tensor(random_action(rng)), kMaxLayers);
  ASSERT_EQ(out.attention.front().shape(), (core::Shape{7, 7}));
}

TEST(Networks, PrefixDeterminism) {
  DdpgAgent agent(DdpgConfig{}, 9);
  core::Rng rng(10);
  for (int t = 0; t < 50; ++t) {
    const auto k = tk::pick(rng, 0, kMaxLayers - 2);
    const auto s = random_state(rng, k);
    auto junk = s;
    for (std::size_t i = (k + 1) * kImrWidth; i < junk.slots.size(); ++i) junk.slots[i] = 2.0 * core::uniform01(rng) - 1.0;
    EXPECT_EQ(agent.act(s).action, agent.act(junk).action) << "k=" << k;
  }
}

TEST(Networks, ActionDependsOnOccupiedSlots) {
  core::Rng rng(11);
  int differing = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    DdpgAgent agent(DdpgConfig{}, seed);
    const auto s = random_state(rng, 3);
    auto other = s;
    other.slots[kImrWidth + 7] = -other.slots[kImrWidth + 7] + 0.5;
    differing += agent.act(s).action == agent.act(other).action ? 0 : 1;
  }
  EXPECT_EQ(differing, 10);
}

TEST(Networks, DeterministicForward) {
  DdpgAgent a(DdpgConfig{}, 3), b(DdpgConfig{}, 3);
  core::Rng rng(12);
  const auto s = random_state(rng, 2);
  const auto act = random_action(rng);
  EXPECT_EQ(a.act(s).action, b.act(s).action);
  EXPECT_EQ(critic_forward(a.critic(), s, act), critic_forward(b.critic(), s, act));
}

TEST(Networks, ReturnedAttentionIsTheForwardGraph) {
  DdpgAgent agent(DdpgConfig{}, 4);
  core::Rng rng(13);
  const auto s = random_state(rng, 4);
  core::GradTape tape;
  core::TapeScope scope(tape);
  const auto out = actor_graph(agent.actor(), s);
  const auto grads = tape.backward(core::ops::sum(out.value), out.attention);
  for (const auto& g : grads) {
    double norm = 0.0;
    for (double v : g.data()) norm += std::abs(v);
    EXPECT_GT(norm, 0.0);
  }
  // A separate forward yields equal values held in different tensors.
  const auto again = actor_forward(agent.actor(), s);
  for (std::size_t h = 0; h < 4; ++h) {
    EXPECT_NE(again.attention[h].id(), out.attention[h].id());
    for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(again.attention[h][i], out.attention[h][i]);
  }
}

TEST(Gradients, SmallActorMatchesFiniteDifferences) {
  core::Rng rng(100);
  for (int c = 0; c < 100; ++c) {
    const TransformerNet net(small_config(false), 1000 + static_cast<std::uint64_t>(c));
    const Tensor tokens = tk::random_tensor({6, 8}, rng);
    const std::size_t read = tk::pick(rng, 0, 5);
    const auto params = net.tensors();
    const auto pr = tk::check_param_gradients([&] { return net.forward(tokens, Tensor{}, read).value; }, params, rng, 40);
    EXPECT_EQ(pr.mismatched, 0u) << "case " << c << ": " << pr.first_mismatch;
    const auto ir = tk::check_gradients([&](const std::vector<Tensor>& x) { return net.forward(x[0], Tensor{}, read).value; },
                                        {tokens}, rng);
    EXPECT_EQ(ir.mismatched, 0u) << "case " << c << ": " << ir.first_mismatch;
  }
}

TEST(Gradients, SmallCriticMatchesFiniteDifferences) {
  core::Rng rng(200);
  for (int c = 0; c < 100; ++c) {
    const TransformerNet net(small_config(true), 2000 + static_cast<std::uint64_t>(c));
    const Tensor tokens = tk::random_tensor({6, 8}, rng);
    const Tensor action = tk::random_tensor({1, 4}, rng, 0.5);
    const auto pr =
        tk::check_param_gradients([&] { return net.forward(tokens, action, 6).value; }, net.tensors(), rng, 40);
    EXPECT_EQ(pr.mismatched, 0u) << "case " << c << ": " << pr.first_mismatch;
    const auto ir = tk::check_gradients(
        [&](const std::vector<Tensor>& x) { return net.forward(x[0], x[1], 6).value; }, {tokens, action}, rng);
    EXPECT_EQ(ir.mismatched, 0u) << "case " << c << ": " << ir.first_mismatch;
  }
}

TEST(Gradients, FullCriticActionGradient) {
  DdpgAgent agent(DdpgConfig{}, 21);
  core::Rng rng(22);
  for (int c = 0; c < 10; ++c) {
    const auto s = random_state(rng, tk::pick(rng, 0, kMaxLayers));
    const auto r = tk::check_gradients(
        [&](const std::vector<Tensor>& x) { return critic_graph(agent.critic(), s, x[0]); },
        {action_tensor(random_action(rng))}, rng);
    EXPECT_EQ(r.mismatched, 0u) << r.first_mismatch;
  }
}

TEST(Noise, ZeroSigmaIsIdentityAndClipping) {
  DdpgAgent agent(DdpgConfig{}, 1);
  core::Rng rng(30);
  const auto s = random_state(rng, 2);
  EXPECT_EQ(agent.select_action(s, 0.0, rng), agent.act(s).action);
  for (double sigma : {0.05, 0.5, 5.0}) {
    for (int i = 0; i < 200; ++i) EXPECT_TRUE(agent.select_action(s, sigma, rng).valid());
  }
  EXPECT_THROW(agent.select_action(s, -0.1, rng), std::invalid_argument);
}

TEST(Noise, EmpiricalStd) {
  core::Rng rng(31);
  const ActionVector clean{{0.5, 0.5, 0.5, 0.5}};
  const int n = 10000;
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0.0, s2 = 0.0;
    core::Rng local(core::derive_seed({31, c}));
    for (int i = 0; i < n; ++i) {
      const double d = add_exploration_noise(clean, 0.1, local)[c] - 0.5;
      s += d;
      s2 += d * d;
    }
    const double mean = s / n;
    const double sd = std::sqrt((s2 - n * mean * mean) / (n - 1));
    EXPECT_NEAR(sd, 0.1, 0.004);
    EXPECT_NEAR(mean, 0.0, 0.004);
  }
}

TEST(Ddpg, TargetsEqualOnlineAtInit) {
  DdpgAgent agent(DdpgConfig{}, 40);
  EXPECT_EQ(param_distance(agent.actor().params(), agent.actor_target().params()), 0.0);
  EXPECT_EQ(param_distance(agent.critic().params(), agent.critic_target().params()), 0.0);
  EXPECT_GT(param_distance(agent.actor().params(), DdpgAgent(DdpgConfig{}, 41).actor().params()), 0.0);
}

TEST(Ddpg, TdTargets) {
  core::Rng rng(41);
  DdpgAgent agent(DdpgConfig{}, 41);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_transition(rng, true);
    EXPECT_EQ(agent.td_target(t), t.reward);
  }
  DdpgConfig myopic;
  myopic.gamma = 0.0;
  DdpgAgent zero(myopic, 41);
  for (int i = 0; i < 20; ++i) {
    const auto t = random_transition(rng, false);
    EXPECT_EQ(zero.td_target(t), t.reward);
  }
  const auto t = random_transition(rng, false);
  const auto next_action = actor_forward(agent.actor_target(), t.next_state).action;
  const double q_next = critic_forward(agent.critic_target(), t.next_state, next_action);
  EXPECT_NEAR(agent.td_target(t), t.reward + 0.99 * q_next, 1e-15);
}

TEST(Ddpg, CriticStepDescends) {
  core::Rng rng(50);
  DdpgConfig cfg;
  cfg.critic_lr = 1e-5;
  DdpgAgent agent(cfg, 50);
  std::vector<Transition> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_transition(rng, i % 3 == 0));
  const double before = agent.critic_loss(batch);
  bool finite = false;
  EXPECT_NEAR(agent.critic_step(batch, &finite), before, 1e-12);
  EXPECT_TRUE(finite);
  EXPECT_LT(agent.critic_loss(batch), before);
}

TEST(Ddpg, ActorStepRaisesQ) {
  core::Rng rng(51);
  DdpgConfig cfg;
  cfg.actor_lr = 1e-4;
  DdpgAgent agent(cfg, 51);
  std::vector<Transition> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_transition(rng, false));
  auto mean_q = [&] {
    double q = 0.0;
    for (const auto& t : batch) q += critic_forward(agent.critic(), t.state, agent.act(t.state).action);
    return q / static_cast<double>(batch.size());
  };
  const double before = mean_q();
  const auto critic_before = agent.critic().tensors()[0][0];
  EXPECT_NEAR(agent.actor_step(batch), -before, 1e-12);
  EXPECT_GT(mean_q(), before);
  EXPECT_EQ(agent.critic().tensors()[0][0], critic_before);
}

TEST(Ddpg, UpdatesStayFinite) {
  core::Rng rng(52);
  DdpgConfig cfg;
  cfg.actor_lr = 1e-3;
  cfg.critic_lr = 1e-3;
  DdpgAgent agent(cfg, 52);
  for (int round = 0; round < 5; ++round) {
    std::vector<Transition> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(random_transition(rng, i % 4 == 0));
    const auto stats = agent.update(batch);
    EXPECT_TRUE(stats.grads_finite);
    EXPECT_TRUE(std::isfinite(stats.critic_loss));
    EXPECT_TRUE(std::isfinite(stats.actor_loss));
  }
  EXPECT_GT(param_distance(agent.actor().params(), agent.actor_target().params()), 0.0);
  EXPECT_THROW(agent.update({}), std::invalid_argument);
}

TEST(SoftUpdate, Examples) {
  auto make = [](double v) { return core::ParamList{{"w", Tensor::full({2, 3}, v)}, {"b", Tensor::full({3}, v)}}; };
  const auto online = make(1.0);
  auto target = make(0.0);
  soft_update(online, target, 0.005);
  for (const auto& p : target)
    for (double v : p.value.data()) EXPECT_DOUBLE_EQ(v, 0.005);
  soft_update(online, target, 0.0);
  for (const auto& p : target)
    for (double v : p.value.data()) EXPECT_DOUBLE_EQ(v, 0.005);
  soft_update(online, target, 1.0);
  for (const auto& p : target)
    for (double v : p.value.data()) EXPECT_EQ(v, 1.0);

  core::ParamList wrong{{"w", Tensor::full({3, 2}, 0.0)}, {"b", Tensor::full({3}, 0.0)}};
  EXPECT_THROW(soft_update(online, wrong, 0.5), core::ShapeError);
  EXPECT_THROW(soft_update(online, target, 1.5), std::invalid_argument);
}

TEST(SoftUpdate, TargetsConvergeMonotonically) {
  core::Rng rng(60);
  DdpgConfig cfg;
  cfg.tau = 0.05;
  DdpgAgent agent(cfg, 60);
  for (auto& p : agent.actor().params())
    for (auto& v : p.value.mutable_data()) v += 0.1 * core::normal(rng, 0.0, 1.0);
  double prev = param_distance(agent.actor().params(), agent.actor_target().params());
  for (int i = 0; i < 30; ++i) {
    agent.update_targets();
    const double d = param_distance(agent.actor().params(), agent.actor_target().params());
    EXPECT_LT(d, prev);
    EXPECT_NEAR(d, prev * 0.95, 1e-9 * prev);
    prev = d;
  }
}

TEST(ReplayBuffer, FifoAndSampling) {
  core::Rng rng(70);
  ReplayBuffer buf(5);
  EXPECT_THROW(ReplayBuffer(0), std::invalid_argument);
  for (int i = 0; i < 8; ++i) {
    Transition t;
    t.reward = i;
    buf.push(t);
    EXPECT_LE(buf.size(), 5u);
  }
  EXPECT_TRUE(buf.full());
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(buf.at(i).reward, static_cast<double>(i + 3));
  for (int trial = 0; trial < 100; ++trial) {
    const auto batch = buf.sample(5, rng);
    std::set<double> seen;
    for (const auto& t : batch) seen.insert(t.reward);
    EXPECT_EQ(seen.size(), 5u);
  }
  EXPECT_THROW(buf.sample(6, rng), std::logic_error);

  const auto back = ReplayBuffer::from_json(nlohmann::json::parse(buf.to_json().dump()));
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back.at(i).reward, buf.at(i).reward);
}

TEST(ReplayBuffer, SamplingIsUniform) {
  core::Rng rng(71);
  ReplayBuffer buf(10);
  for (int i = 0; i < 10; ++i) {
    Transition t;
    t.reward = i;
    buf.push(t);
  }
  std::vector<int> counts(10, 0);
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) ++counts[static_cast<std::size_t>(buf.sample(3, rng)[0].reward)];
  for (int c : counts) EXPECT_NEAR(c, trials / 10, 5 * std::sqrt(trials * 0.1 * 0.9));
}

TEST(Ddpg, CheckpointRoundTrip) {
  core::Rng rng(80);
  DdpgConfig cfg;
  cfg.actor_lr = 1e-3;
  DdpgAgent agent(cfg, 80);
  std::vector<Transition> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_transition(rng, false));
  agent.update(batch);

  DdpgAgent restored(cfg, 999);
  restored.load_json(nlohmann::json::parse(agent.to_json().dump()));
  const auto s = random_state(rng, 3);
  EXPECT_EQ(restored.act(s).action, agent.act(s).action);
  EXPECT_EQ(param_distance(restored.critic_target().params(), agent.critic_target().params()), 0.0);
  // Optimizer moments survive: the next update moves both agents identically.
  agent.update(batch);
  restored.update(batch);
  EXPECT_EQ(restored.act(s).action, agent.act(s).action);
}
