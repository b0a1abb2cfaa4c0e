#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlh/data.hpp"
#include "dlh/engine.hpp"

namespace dlh {

struct TrainConfig {
  double learning_rate = 5e-4;
  double adam_epsilon = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int batch_size = 100;
  int sequence_length = 100;
  int beta_anneal_iters = 10000;
  int total_iters = 100000;
  std::uint64_t seed = 0;
  double grad_clip = 100.0;
  int checkpoint_every = 1000;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, learning_rate, adam_epsilon, adam_beta1,
                                                adam_beta2, batch_size, sequence_length,
                                                beta_anneal_iters, total_iters, seed, grad_clip,
                                                checkpoint_every)

// -sum_t recon + beta * sum_t sum_n (kl_state + kl_indicator)
double assemble_loss(const std::vector<ElboTerms>& terms, double beta);
ad::Var assemble_loss_var(const std::vector<ElboTerms>& terms, double beta);

// Linear ramp from 0 at iteration 0 to 1 at beta_anneal_iters.
double beta_schedule(long iter, const TrainConfig& cfg);

struct AdamState {
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

// Rescales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);
void adam_update(ad::ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state,
                 const TrainConfig& cfg);

// Batch-mean statistics of one iteration.
struct IterationMetrics {
  long iter = 0;
  double loss = 0.0;
  double recon_nats = 0.0;  // -sum_t log p(x_t | .)
  std::vector<double> kl_state;
  std::vector<double> kl_indicator;
  double mean_depth = 0.0;
  double beta = 0.0;
  double wallclock_s = 0.0;
};

std::string metrics_header(int levels);
std::string metrics_row(const IterationMetrics& m);

struct BatchResult {
  IterationMetrics metrics;
  std::vector<Tensor> grads;  // gradient of the batch-mean loss
};

// Forward/backward over one batch. Sequences run in parallel with one graph
// each; the per-sequence gradients are reduced in index order. Sequence b
// draws its noise from (seed, iter, stream_ids[b]), or (seed, iter, b) when
// no ids are given, so with ids the loss does not depend on batch order.
BatchResult compute_batch(const Network& net, const std::vector<Tensor>& sequences, double beta,
                          std::uint64_t seed, long iter,
                          std::span<const std::uint64_t> stream_ids = {});

struct TrainOptions {
  std::filesystem::path out_dir;   // metrics.csv and checkpoints go here
  bool deterministic = false;      // single thread; wallclock column written as 0
  bool resume = false;
  std::function<void(const IterationMetrics&)> on_iteration;  // optional progress hook
};

struct TrainResult {
  long final_iter = 0;
  std::vector<IterationMetrics> history;
};

// Runs Adam from the current parameters (or the latest checkpoint in out_dir
// when resuming). Iteration i draws sequences i*batch .. i*batch+batch-1 from
// the dataset. Aborts with NumericalError on a non-finite loss or gradient,
// leaving the last written checkpoint in place.
TrainResult train(Network& net, const TrainConfig& cfg, const Dataset& data,
                  const TrainOptions& opts);

}  // namespace dlh
