#include "dlab/grpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "dlab/parallel.hpp"

namespace dlab {

void GRPOConfig::validate() const {
  if (group_size < 2) {
    throw std::invalid_argument("group_size must be at least 2");
  }
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) {
    throw std::invalid_argument("clip_eps must lie in (0, 1)");
  }
  if (!(kl_beta >= 0.0)) {
    throw std::invalid_argument("kl_beta must be nonnegative");
  }
  if (!(entropy_top_fraction > 0.0 && entropy_top_fraction <= 1.0)) {
    throw std::invalid_argument("entropy_top_fraction must lie in (0, 1]");
  }
  if (batch_size < 1 || update_steps < 1 || updates < 0 || gen_budget < 1 || !(temperature >= 0.0) ||
      !(lr >= 0.0)) {
    throw std::invalid_argument("invalid GRPO schedule parameters");
  }
}

std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("advantages need a group of at least two rewards");
  }
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) {
    var += (r - mean) * (r - mean);
  }
  const double stddev = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (stddev < 1e-8) {
    return out;
  }
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i] = (rewards[i] - mean) / stddev;
  }
  return out;
}

double clipped_term(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

double clipped_term_grad(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  if (ratio * advantage <= clipped * advantage) {
    return advantage;
  }
  return 0.0;
}

double kl_token(double logp_new, double logp_ref) {
  const double d = logp_ref - logp_new;
  return std::max(0.0, std::expm1(d) - d);
}

double kl_token_grad(double logp_new, double logp_ref) {
  return 1.0 - std::exp(logp_ref - logp_new);
}

RolloutGroup make_group(int query_id, Prompt prompt, std::vector<Rollout> rollouts, std::vector<double> rewards) {
  if (rollouts.size() != rewards.size()) {
    throw std::invalid_argument("one reward per rollout is required");
  }
  RolloutGroup g;
  g.query_id = query_id;
  g.prompt = std::move(prompt);
  g.rollouts = std::move(rollouts);
  g.rewards = std::move(rewards);
  const double n = static_cast<double>(g.rewards.size());
  g.mean = std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : g.rewards) {
    var += (r - g.mean) * (r - g.mean);
  }
  g.stddev = std::sqrt(var / n);
  g.advantages = compute_advantages(g.rewards);
  return g;
}

std::vector<int> objective_tokens(const Rollout& rollout, double entropy_top_fraction) {
  const int len = rollout.completion.effective_len();
  std::vector<int> tokens(static_cast<std::size_t>(len));
  std::iota(tokens.begin(), tokens.end(), 0);
  if (entropy_top_fraction >= 1.0) {
    return tokens;
  }
  const auto keep = static_cast<std::size_t>(std::ceil(entropy_top_fraction * len - 1e-9));
  std::stable_sort(tokens.begin(), tokens.end(), [&](int a, int b) {
    return rollout.entropies[static_cast<std::size_t>(a)] > rollout.entropies[static_cast<std::size_t>(b)];
  });
  tokens.resize(std::max<std::size_t>(1, keep));
  std::sort(tokens.begin(), tokens.end());
  return tokens;
}

template <typename T>
GRPOLoss<T> grpo_loss(const ParameterSet<T>& params, std::span<const RolloutGroup> groups, const GRPOConfig& config,
                      const Vocabulary& vocab) {
  struct Item {
    const RolloutGroup* group;
    std::size_t index;
  };
  std::vector<Item> items;
  for (const auto& g : groups) {
    if (g.rollouts.size() != g.advantages.size()) {
      throw std::invalid_argument("rollout group is missing advantages");
    }
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      if (g.rollouts[i].logprobs.per_token.size() != static_cast<std::size_t>(g.rollouts[i].completion.size())) {
        throw std::invalid_argument("rollout is missing old-policy log-probs");
      }
      items.push_back(Item{&g, i});
    }
  }

  struct Partial {
    double objective = 0.0;
    int tokens = 0;
    int clipped = 0;
    std::optional<ParameterSet<T>> grad;
  };
  std::vector<Partial> partials(items.size());
  const double n_groups = static_cast<double>(groups.size());

  parallel_for(items.size(), config.threads, [&](std::size_t idx) {
    const auto& g = *items[idx].group;
    const auto& rollout = g.rollouts[items[idx].index];
    const double advantage = g.advantages[items[idx].index];
    auto& part = partials[idx];
    // A zero advantage with no KL term contributes nothing to value or gradient.
    if (advantage == 0.0 && config.kl_beta == 0.0) {
      return;
    }
    const auto tokens = objective_tokens(rollout, config.entropy_top_fraction);
    ARLikelihood<T> likelihood(params, g.prompt, rollout.completion.tokens(), tokens, vocab.mask_id());
    const double weight =
        1.0 / (n_groups * static_cast<double>(g.rollouts.size()) * rollout.completion.effective_len());
    std::vector<double> coeffs(tokens.size());
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      const double l_new = likelihood.logprobs()[j];
      const double l_old = rollout.logprobs.per_token[static_cast<std::size_t>(tokens[j])];
      const double ratio = std::exp(l_new - l_old);
      double term = clipped_term(ratio, advantage, config.clip_eps);
      double dterm = clipped_term_grad(ratio, advantage, config.clip_eps) * ratio;
      if (config.kl_beta > 0.0) {
        term -= config.kl_beta * kl_token(l_new, l_old);
        dterm -= config.kl_beta * kl_token_grad(l_new, l_old);
      }
      part.objective += weight * term;
      coeffs[j] = weight * dterm;
      if (ratio < 1.0 - config.clip_eps || ratio > 1.0 + config.clip_eps) {
        ++part.clipped;
      }
    }
    part.tokens = static_cast<int>(tokens.size());
    part.grad.emplace(params.config());
    likelihood.backward(coeffs, *part.grad);
  });

  GRPOLoss<T> out{0.0, 0.0, 0, ParameterSet<T>(params.config())};
  int clipped = 0;
  auto dst = out.grad.values();
  for (const auto& part : partials) {
    out.objective += part.objective;
    out.tokens += part.tokens;
    clipped += part.clipped;
    if (part.grad) {
      const auto src = part.grad->values();
      for (std::size_t j = 0; j < dst.size(); ++j) {
        dst[j] += src[j];
      }
    }
  }
  out.clip_fraction = out.tokens > 0 ? static_cast<double>(clipped) / out.tokens : 0.0;
  if (!std::isfinite(out.objective)) {
    throw NumericError("GRPO objective is not finite");
  }
  return out;
}

template GRPOLoss<float> grpo_loss<float>(const ParameterSet<float>&, std::span<const RolloutGroup>,
                                          const GRPOConfig&, const Vocabulary&);
template GRPOLoss<double> grpo_loss<double>(const ParameterSet<double>&, std::span<const RolloutGroup>,
                                            const GRPOConfig&, const Vocabulary&);

RLState start_rl(DenoiserParams base, const GRPOConfig& config) {
  AdamW optimizer(AdamWConfig{config.lr, config.adam_beta1, config.adam_beta2, 1e-8, config.weight_decay},
                  base.size());
  return RLState{std::move(base), std::move(optimizer), 0};
}

RolloutGroup sample_group(const DenoiserParams& params, const Instance& instance, const Vocabulary& vocab,
                          const GRPOConfig& config, std::uint64_t seed, int update, int slot) {
  std::vector<Rollout> rollouts(static_cast<std::size_t>(config.group_size));
  std::vector<double> rewards(rollouts.size());
  parallel_for(rollouts.size(), config.threads, [&](std::size_t i) {
    auto rng = derive_stream(seed, {"rollout", static_cast<std::uint64_t>(slot), i, static_cast<std::uint64_t>(update)});
    rollouts[i] = ar_rollout(params, instance.prompt, config.gen_budget, config.temperature, vocab, rng);
    rewards[i] = verify(instance, rollouts[i].completion).total;
  });
  return make_group(instance.id, instance.prompt, std::move(rollouts), std::move(rewards));
}

RLState train_rl(RLState state, std::span<const Instance> train, const Vocabulary& vocab, const GRPOConfig& config,
                 std::uint64_t seed, const RLHooks& hooks) {
  config.validate();
  if (train.empty()) {
    throw std::invalid_argument("RL needs at least one training instance");
  }
  using Clock = std::chrono::steady_clock;
  std::vector<double> grad(state.params.size());

  for (int update = state.next_update; update < config.updates; ++update) {
    const auto t0 = Clock::now();
    std::vector<RolloutGroup> groups;
    std::vector<double> accuracy;
    for (int slot = 0; slot < config.batch_size; ++slot) {
      auto pick = derive_stream(seed, {"rl-query", static_cast<std::uint64_t>(update), static_cast<std::uint64_t>(slot)});
      const auto& instance = train[pick.below(train.size())];
      groups.push_back(sample_group(state.params, instance, vocab, config, seed, update, slot));
      for (const auto& r : groups.back().rollouts) {
        accuracy.push_back(verify(instance, r.completion).accuracy);
      }
    }
    const auto t1 = Clock::now();

    RLMetricsRow row;
    row.update = update;
    double reward_sum = 0.0;
    double entropy_sum = 0.0;
    std::size_t entropy_count = 0;
    for (const auto& g : groups) {
      reward_sum += std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0);
      for (const auto& r : g.rollouts) {
        for (int k = 0; k < r.completion.effective_len(); ++k) {
          entropy_sum += r.entropies[static_cast<std::size_t>(k)];
          ++entropy_count;
        }
      }
    }
    row.mean_reward = reward_sum / static_cast<double>(accuracy.size());
    row.mean_accuracy = std::accumulate(accuracy.begin(), accuracy.end(), 0.0) / static_cast<double>(accuracy.size());
    row.mean_entropy = entropy_count ? entropy_sum / static_cast<double>(entropy_count) : 0.0;

    for (int inner = 0; inner < config.update_steps; ++inner) {
      auto loss = grpo_loss(state.params, groups, config, vocab);
      if (inner == 0) {
        row.objective = loss.objective;
        row.clip_frac = loss.clip_fraction;
      }
      const auto g = loss.grad.values();
      bool any = false;
      for (std::size_t j = 0; j < grad.size(); ++j) {
        grad[j] = -static_cast<double>(g[j]);
        any = any || g[j] != 0.0f;
      }
      // An all-zero gradient (every group has constant reward) leaves theta untouched.
      if (any) {
        state.optimizer.step(state.params.values(), grad);
      }
      if (!state.params.all_finite()) {
        throw NumericError("parameters became non-finite at update " + std::to_string(update));
      }
    }
    const auto t2 = Clock::now();
    row.rollout_secs = std::chrono::duration<double>(t1 - t0).count();
    row.update_secs = std::chrono::duration<double>(t2 - t1).count();
    state.next_update = update + 1;

    if (hooks.on_rollout) {
      for (const auto& g : groups) {
        for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
          const auto& r = g.rollouts[i];
          hooks.on_rollout(RolloutLogRow{update, g.query_id, static_cast<int>(i),
                                         std::vector<TokenId>(r.completion.tokens().begin(), r.completion.tokens().end()),
                                         g.rewards[i], r.logprobs.per_token, r.entropies});
        }
      }
    }
    if (hooks.on_metrics) {
      hooks.on_metrics(row);
    }
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && state.next_update % hooks.checkpoint_every == 0) {
      hooks.on_checkpoint(state);
    }
  }
  return state;
}

}  // namespace dlab
