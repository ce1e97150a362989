#pragma once

// JSON-lines encodings for corpora, instances, decode traces and rollout logs.

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dlab/decoding.hpp"
#include "dlab/diffusion.hpp"
#include "dlab/grpo.hpp"
#include "dlab/tasks.hpp"

namespace dlab {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// {"prompt":[...],"response":[...]}
std::string corpus_line(const TrainingExample& example);
std::vector<TrainingExample> read_corpus(std::istream& in);

/// {"id":..,"prompt":[...],"answer_or_graph":{...},"fork_positions":[...]}
std::string instance_line(const Instance& instance);
std::vector<Instance> read_instances(std::istream& in);

/// A trace file holds one header record {"type":"header","config":{...}} followed
/// by one {"type":"token",...} record per finalised token. Samples are told apart
/// by their problem_id and sample fields.
std::string trace_header_line(const DecodeConfig& config);
void write_trace(std::ostream& out, int problem_id, int sample, const DecodeTrace& trace);

struct TraceFile {
  DecodeConfig config;
  std::vector<int> problem_ids;
  std::vector<int> samples;
  std::vector<DecodeTrace> traces;
};

TraceFile read_trace_file(std::istream& in);

/// {"update":..,"query_id":..,"rollout_idx":..,"tokens":[...],"reward":..,"logprobs":[...],"entropies":[...]}
std::string rollout_line(const RolloutLogRow& row);

}  // namespace dlab
