#include "dlab/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "dlab/parallel.hpp"

namespace dlab {

double pass_at_k(int n, int c, int k) {
  if (n < 0 || c < 0 || c > n) {
    throw std::invalid_argument("pass_at_k requires 0 <= c <= n");
  }
  if (k < 1 || k > n) {
    throw std::invalid_argument("pass_at_k requires 1 <= k <= n");
  }
  if (c == 0) {
    return 0.0;
  }
  if (n - c < k) {
    return 1.0;
  }
  double miss = 1.0;
  for (int i = 0; i < k; ++i) {
    miss *= 1.0 - static_cast<double>(c) / static_cast<double>(n - i);
  }
  return 1.0 - miss;
}

std::vector<double> PassAtKTable::mean() const {
  std::vector<double> out(k_grid.size(), 0.0);
  if (rows.empty()) {
    return out;
  }
  for (const auto& row : rows) {
    for (std::size_t j = 0; j < out.size(); ++j) {
      out[j] += row.estimates[j];
    }
  }
  for (double& v : out) {
    v /= static_cast<double>(rows.size());
  }
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::string PassAtKTable::to_csv() const {
  std::ostringstream out;
  out << "problem_id,n,c";
  for (int k : k_grid) {
    out << ",pass@" << k;
  }
  out << '\n';
  for (const auto& row : rows) {
    out << row.problem_id << ',' << row.n << ',' << row.c;
    for (double e : row.estimates) {
      out << ',' << fmt(e);
    }
    out << '\n';
  }
  return out.str();
}

PassAtKTable make_passk_table(std::span<const int> problem_ids, const std::vector<std::vector<bool>>& correct,
                              std::span<const int> k_grid) {
  if (problem_ids.size() != correct.size()) {
    throw std::invalid_argument("one correctness row per problem is required");
  }
  PassAtKTable table;
  table.k_grid.assign(k_grid.begin(), k_grid.end());
  for (std::size_t p = 0; p < correct.size(); ++p) {
    PassAtKRow row;
    row.problem_id = problem_ids[p];
    row.n = static_cast<int>(correct[p].size());
    row.c = static_cast<int>(std::count(correct[p].begin(), correct[p].end(), true));
    for (int k : k_grid) {
      row.estimates.push_back(pass_at_k(row.n, row.c, k));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

PassAtKExperiment passk_experiment(const DenoiserParams& params, std::span<const Instance> instances,
                                   const DecodeConfig& config, const Vocabulary& vocab, int n,
                                   std::span<const int> k_grid, std::uint64_t seed, int threads) {
  if (n < 1) {
    throw std::invalid_argument("passk_experiment needs n >= 1");
  }
  for (int k : k_grid) {
    if (k < 1 || k > n) {
      throw std::invalid_argument("every k must lie in [1, n]");
    }
  }
  PassAtKExperiment out;
  out.config = config;
  const std::size_t problems = instances.size();
  const auto per = static_cast<std::size_t>(n);
  out.samples.assign(problems, std::vector<DecodeResult>(per));
  out.correct.assign(problems, std::vector<bool>(per, false));
  std::vector<char> flags(problems * per, 0);
  parallel_for(problems * per, threads, [&](std::size_t job) {
    const std::size_t p = job / per;
    const std::size_t j = job % per;
    const auto& inst = instances[p];
    auto rng = derive_stream(seed, {"eval-decode", static_cast<std::uint64_t>(inst.id), j});
    auto result = decode(params, inst.prompt, config, vocab, rng);
    flags[job] = verify(inst, result.completion).accuracy > 0.5 ? 1 : 0;
    out.samples[p][j] = std::move(result);
  });
  for (std::size_t p = 0; p < problems; ++p) {
    out.problem_ids.push_back(instances[p].id);
    for (std::size_t j = 0; j < per; ++j) {
      out.correct[p][j] = flags[p * per + j] != 0;
    }
  }
  out.table = make_passk_table(out.problem_ids, out.correct, k_grid);
  return out;
}

std::string CoverageReport::to_csv() const {
  std::ostringstream out;
  out << "mode_a,mode_b,k,exclusive_a,exclusive_b,both,neither,total\n";
  out << mode_a << ',' << mode_b << ',' << k << ',' << exclusive_a << ',' << exclusive_b << ',' << both << ','
      << neither << ',' << problem_ids.size() << '\n';
  return out.str();
}

CoverageReport coverage(std::string mode_a, std::span<const int> ids_a, const std::vector<std::vector<bool>>& correct_a,
                        std::string mode_b, std::span<const int> ids_b, const std::vector<std::vector<bool>>& correct_b,
                        int k) {
  if (!std::equal(ids_a.begin(), ids_a.end(), ids_b.begin(), ids_b.end())) {
    throw std::invalid_argument("coverage requires identical instance sets");
  }
  if (correct_a.size() != ids_a.size() || correct_b.size() != ids_b.size()) {
    throw std::invalid_argument("one correctness row per problem is required");
  }
  if (k < 1) {
    throw std::invalid_argument("coverage needs k >= 1");
  }
  auto solved = [k](const std::vector<bool>& row) {
    if (static_cast<int>(row.size()) < k) {
      throw std::invalid_argument("fewer than k samples recorded");
    }
    return std::any_of(row.begin(), row.begin() + k, [](bool b) { return b; });
  };
  CoverageReport r;
  r.mode_a = std::move(mode_a);
  r.mode_b = std::move(mode_b);
  r.k = k;
  r.problem_ids.assign(ids_a.begin(), ids_a.end());
  for (std::size_t p = 0; p < ids_a.size(); ++p) {
    const bool a = solved(correct_a[p]);
    const bool b = solved(correct_b[p]);
    r.solved_a.push_back(a);
    r.solved_b.push_back(b);
    if (a && b) {
      ++r.both;
    } else if (a) {
      ++r.exclusive_a;
    } else if (b) {
      ++r.exclusive_b;
    } else {
      ++r.neither;
    }
  }
  return r;
}

double ModeEntropy::fork_bypass_rate() const {
  return fork_records ? static_cast<double>(bypassed_fork) / static_cast<double>(fork_records) : 0.0;
}

double ModeEntropy::nonfork_bypass_rate() const {
  const long nonfork = total_records - fork_records;
  return nonfork ? static_cast<double>(bypassed_nonfork) / static_cast<double>(nonfork) : 0.0;
}

std::string EntropyReport::to_csv() const {
  std::ostringstream out;
  out << "mode,fork_mean_entropy,global_mean_entropy,fork_records,total_records,fork_bypass_rate,"
         "nonfork_bypass_rate\n";
  for (const auto& m : modes) {
    out << m.mode << ',' << fmt(m.fork_mean_entropy) << ',' << fmt(m.global_mean_entropy) << ',' << m.fork_records
        << ',' << m.total_records << ',' << fmt(m.fork_bypass_rate()) << ',' << fmt(m.nonfork_bypass_rate()) << '\n';
  }
  return out.str();
}

EntropyReport entropy_degradation(std::span<const TraceSet> trace_sets, std::span<const Instance> instances) {
  std::unordered_map<int, std::set<int>> forks;
  for (const auto& inst : instances) {
    forks[inst.id] = std::set<int>(inst.fork_positions.begin(), inst.fork_positions.end());
  }
  EntropyReport report;
  for (const auto& set : trace_sets) {
    if (set.problem_ids.size() != set.traces.size()) {
      throw std::invalid_argument("one problem id per trace is required");
    }
    ModeEntropy m;
    m.mode = set.mode;
    double fork_sum = 0.0;
    double total_sum = 0.0;
    for (std::size_t i = 0; i < set.traces.size(); ++i) {
      auto it = forks.find(set.problem_ids[i]);
      if (it == forks.end()) {
        throw std::invalid_argument("trace refers to an unknown problem id");
      }
      const auto& trace = set.traces[i];
      const auto bypassed = trace.bypassed();
      for (std::size_t j = 0; j < trace.records.size(); ++j) {
        const auto& rec = trace.records[j];
        const bool is_fork = it->second.contains(rec.position);
        total_sum += rec.entropy;
        ++m.total_records;
        auto& tok = m.per_token[rec.token];
        ++tok.second;
        if (bypassed[j]) {
          ++tok.first;
        }
        if (is_fork) {
          fork_sum += rec.entropy;
          ++m.fork_records;
          m.bypassed_fork += bypassed[j] ? 1 : 0;
        } else {
          m.bypassed_nonfork += bypassed[j] ? 1 : 0;
        }
      }
    }
    m.fork_mean_entropy = m.fork_records ? fork_sum / static_cast<double>(m.fork_records) : 0.0;
    m.global_mean_entropy = m.total_records ? total_sum / static_cast<double>(m.total_records) : 0.0;
    report.modes.push_back(std::move(m));
  }
  return report;
}

std::vector<EbSweepRow> eb_sweep(const DenoiserParams& params, std::span<const Instance> instances,
                                 std::span<const double> gammas, const Vocabulary& vocab, int gen_budget,
                                 int threads) {
  std::vector<EbSweepRow> rows;
  for (double gamma : gammas) {
    DecodeConfig config;
    config.mode = DecodeMode::eb_parallel;
    config.temperature = 0.0;
    config.gen_budget = gen_budget;
    config.block_size = gen_budget;
    config.eb_gamma = gamma;
    std::vector<double> acc(instances.size());
    std::vector<int> steps(instances.size());
    parallel_for(instances.size(), threads, [&](std::size_t i) {
      auto rng = derive_stream(0, {"eb-sweep", static_cast<std::uint64_t>(instances[i].id)});
      const auto result = decode(params, instances[i].prompt, config, vocab, rng);
      acc[i] = verify(instances[i], result.completion).accuracy;
      steps[i] = result.trace.steps;
    });
    const double total_steps = std::accumulate(steps.begin(), steps.end(), 0.0);
    EbSweepRow row;
    row.gamma = gamma;
    row.accuracy = instances.empty() ? 0.0 : std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
    row.tokens_per_step =
        total_steps > 0 ? static_cast<double>(instances.size()) * gen_budget / total_steps : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::string eb_sweep_csv(std::span<const EbSweepRow> rows) {
  std::ostringstream out;
  out << "gamma,accuracy,tokens_per_step\n";
  for (const auto& r : rows) {
    out << fmt(r.gamma) << ',' << fmt(r.accuracy) << ',' << fmt(r.tokens_per_step) << '\n';
  }
  return out.str();
}

double greedy_accuracy(const DenoiserParams& params, std::span<const Instance> instances, const DecodeConfig& config,
                       const Vocabulary& vocab, int threads) {
  if (instances.empty()) {
    return 0.0;
  }
  std::vector<double> acc(instances.size());
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    auto rng = derive_stream(0, {"greedy", static_cast<std::uint64_t>(instances[i].id)});
    acc[i] = verify(instances[i], decode(params, instances[i].prompt, config, vocab, rng).completion).accuracy;
  });
  return std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
}

}  // namespace dlab
