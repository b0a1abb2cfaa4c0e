#include "dlh/elbo.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dlh/checkpoint.hpp"

namespace dlh {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train." + m); };
  if (!(learning_rate > 0)) fail("learning_rate: must be positive");
  if (!(adam_epsilon > 0)) fail("adam_epsilon: must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1: must lie in [0, 1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2: must lie in [0, 1)");
  if (batch_size <= 0) fail("batch_size: must be positive");
  if (sequence_length <= 0) fail("sequence_length: must be positive");
  if (total_iters <= 0) fail("total_iters: must be positive");
  if (beta_anneal_iters <= 0) fail("beta_anneal_iters: must be positive");
  if (beta_anneal_iters > total_iters) fail("beta_anneal_iters: must not exceed total_iters");
  if (!(grad_clip > 0)) fail("grad_clip: must be positive");
  if (checkpoint_every <= 0) fail("checkpoint_every: must be positive");
}

double assemble_loss(const std::vector<ElboTerms>& terms, double beta) {
  require(beta >= 0.0 && beta <= 1.0, "assemble_loss: beta must lie in [0, 1]");
  double recon = 0.0, kl = 0.0;
  for (const auto& t : terms) {
    recon += t.recon_loglik;
    kl += t.total_kl();
  }
  return -recon + beta * kl;
}

ad::Var assemble_loss_var(const std::vector<ElboTerms>& terms, double beta) {
  require(beta >= 0.0 && beta <= 1.0, "assemble_loss: beta must lie in [0, 1]");
  require(!terms.empty(), "assemble_loss: no terms");
  std::vector<ad::Var> recon, kl;
  for (const auto& t : terms) {
    require(t.recon_var.valid(), "assemble_loss: terms were computed without gradients");
    recon.push_back(t.recon_var);
    for (const auto& v : t.kl_state_vars)
      if (v.valid()) kl.push_back(v);
    for (const auto& v : t.kl_indicator_vars)
      if (v.valid()) kl.push_back(v);
  }
  ad::Var loss = ad::scale(ad::sum_all(recon), -1.0);
  if (beta > 0.0 && !kl.empty()) loss = ad::add(loss, ad::scale(ad::sum_all(kl), beta));
  return loss;
}

double beta_schedule(long iter, const TrainConfig& cfg) {
  require(iter >= 0, "beta_schedule: iter must be >= 0");
  if (iter >= cfg.beta_anneal_iters) return 1.0;
  return static_cast<double>(iter) / cfg.beta_anneal_iters;
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

void adam_update(ad::ParameterSet& params, const std::vector<Tensor>& grads, AdamState& st,
                 const TrainConfig& cfg) {
  require(grads.size() == params.size(), "adam_update: gradient count mismatch");
  if (st.m.empty()) {
    st.m = params.zeros_like();
    st.v = params.zeros_like();
  }
  st.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.data;
    auto& m = st.m[i].data;
    auto& v = st.v[i].data;
    const auto& g = grads[i].data;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1 - b1) * g[j];
      v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
      w[j] -= cfg.learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_epsilon);
    }
  }
}

namespace {

std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

void add_into(std::vector<Tensor>& acc, const std::vector<Tensor>& g) {
  for (std::size_t i = 0; i < acc.size(); ++i)
    for (std::size_t j = 0; j < acc[i].data.size(); ++j) acc[i].data[j] += g[i].data[j];
}

}  // namespace

std::string metrics_header(int levels) {
  std::string h = "iter,loss,recon_nats";
  for (int n = 1; n <= levels; ++n) h += ",kl_state_L" + std::to_string(n);
  for (int n = 1; n <= levels; ++n) h += ",kl_ind_L" + std::to_string(n);
  return h + ",mean_depth,beta,wallclock_s";
}

std::string metrics_row(const IterationMetrics& m) {
  std::string r = std::to_string(m.iter) + "," + fmt(m.loss) + "," + fmt(m.recon_nats);
  for (double v : m.kl_state) r += "," + fmt(v);
  for (double v : m.kl_indicator) r += "," + fmt(v);
  return r + "," + fmt(m.mean_depth) + "," + fmt(m.beta) + "," + fmt(m.wallclock_s);
}

BatchResult compute_batch(const Network& net, const std::vector<Tensor>& sequences, double beta,
                          std::uint64_t seed, long iter, std::span<const std::uint64_t> stream_ids) {
  const int B = static_cast<int>(sequences.size());
  const int N = net.levels();
  require(B > 0, "compute_batch: empty batch");
  require(stream_ids.empty() || stream_ids.size() == sequences.size(),
          "compute_batch: one stream id per sequence required");
  struct PerSequence {
    double loss = 0, recon = 0, depth = 0;
    std::vector<double> kl_state, kl_ind;
  };
  std::vector<PerSequence> per(static_cast<std::size_t>(B));
  const int threads = std::min(B, omp_get_max_threads());
  std::vector<std::vector<Tensor>> partial(static_cast<std::size_t>(threads));
  std::string error;

#pragma omp parallel num_threads(threads)
  {
    const int tid = omp_get_thread_num();
    auto& acc = partial[static_cast<std::size_t>(tid)];
    acc = net.params().zeros_like();
#pragma omp for schedule(static)
    for (int b = 0; b < B; ++b) {
      try {
        const std::uint64_t id = stream_ids.empty() ? static_cast<std::uint64_t>(b) : stream_ids[b];
        std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(iter), static_cast<std::uint32_t>(id),
                         static_cast<std::uint32_t>(id >> 32)};
        std::mt19937_64 rng(ss);
        ad::Graph g(true);
        Engine engine(net, g);
        FilterResult fr = engine.filter_sequence(sequences[b], rng);
        ad::Var loss = ad::scale(assemble_loss_var(fr.terms, beta), 1.0 / B);
        g.backward(loss);
        g.accumulate_param_grads(acc);
        PerSequence& p = per[b];
        p.loss = assemble_loss(fr.terms, beta);
        p.kl_state.assign(static_cast<std::size_t>(N), 0.0);
        p.kl_ind.assign(static_cast<std::size_t>(N), 0.0);
        for (const auto& t : fr.terms) {
          p.recon -= t.recon_loglik;
          for (int n = 0; n < N; ++n) {
            p.kl_state[n] += t.kl_state[n];
            p.kl_ind[n] += t.kl_indicator[n];
          }
        }
        for (const auto& e : fr.indicators) p.depth += e.depth();
        p.depth /= static_cast<double>(fr.indicators.size());
      } catch (const std::exception& e) {
#pragma omp critical(dlh_batch_error)
        if (error.empty()) error = e.what();
      }
    }
  }
  if (!error.empty()) throw NumericalError(error);

  BatchResult out;
  out.grads = std::move(partial[0]);
  for (int t = 1; t < threads; ++t) add_into(out.grads, partial[static_cast<std::size_t>(t)]);
  IterationMetrics& m = out.metrics;
  m.kl_state.assign(static_cast<std::size_t>(N), 0.0);
  m.kl_indicator.assign(static_cast<std::size_t>(N), 0.0);
  for (const auto& p : per) {
    m.loss += p.loss / B;
    m.recon_nats += p.recon / B;
    m.mean_depth += p.depth / B;
    for (int n = 0; n < N; ++n) {
      m.kl_state[n] += p.kl_state[n] / B;
      m.kl_indicator[n] += p.kl_ind[n] / B;
    }
  }
  m.beta = beta;
  return out;
}

namespace {

// Keeps the header and rows with iter <= last_iter.
void truncate_metrics(const std::filesystem::path& path, long last_iter) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stol(line.substr(0, line.find(','))) <= last_iter) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

Tensor crop_sequence(const Tensor& seq, int length) {
  require(seq.rank() == 4, "train: sequences must be [T, C, H, W]");
  if (seq.dim(0) == length) return seq;
  if (seq.dim(0) < length)
    throw ConfigError("train.sequence_length: dataset sequences have only " +
                      std::to_string(seq.dim(0)) + " frames");
  const std::size_t per = seq.size() / static_cast<std::size_t>(seq.dim(0));
  Tensor out({length, seq.dim(1), seq.dim(2), seq.dim(3)});
  std::copy_n(seq.data.begin(), per * static_cast<std::size_t>(length), out.data.begin());
  return out;
}

}  // namespace

TrainResult train(Network& net, const TrainConfig& cfg, const Dataset& data,
                  const TrainOptions& opts) {
  cfg.validate();
  net.config().validate();
  std::filesystem::create_directories(opts.out_dir);
  const auto ckpt_path = opts.out_dir / "checkpoint.dlh";
  const auto metrics_path = opts.out_dir / "metrics.csv";
  const auto timing_path = opts.out_dir / "wallclock.csv";
  const int N = net.levels();

  AdamState adam;
  long start = 0;
  if (opts.resume && std::filesystem::exists(ckpt_path)) {
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    if (!(ck.meta.model == net.config()))
      throw ConfigError("model: checkpoint " + ckpt_path.string() +
                        " was trained with a different model config");
    for (std::size_t i = 0; i < net.params().size(); ++i)
      net.params()[i].value = ck.net.params()[i].value;
    adam = std::move(ck.adam);
    start = ck.meta.iteration;
    truncate_metrics(metrics_path, start);
    if (opts.deterministic) truncate_metrics(timing_path, start);
  } else {
    std::ofstream(metrics_path, std::ios::trunc) << metrics_header(N) << "\n";
    if (opts.deterministic) std::ofstream(timing_path, std::ios::trunc) << "iter,wallclock_s\n";
  }

  const int saved_threads = omp_get_max_threads();
  if (opts.deterministic) omp_set_num_threads(1);
  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream timing;
  if (opts.deterministic) timing.open(timing_path, std::ios::app);

  TrainResult result;
  result.final_iter = start;
  const auto t0 = std::chrono::steady_clock::now();
  auto save = [&](long iter) {
    save_checkpoint(ckpt_path, Checkpoint{net.config(), cfg, iter}, net, adam);
  };
  try {
    for (long i = start; i < cfg.total_iters; ++i) {
      std::vector<Tensor> batch;
      std::vector<std::uint64_t> ids;
      for (int b = 0; b < cfg.batch_size; ++b) {
        ids.push_back(static_cast<std::uint64_t>(i) * cfg.batch_size + b);
        batch.push_back(crop_sequence(data.sequence(ids.back()), cfg.sequence_length));
      }
      BatchResult br = compute_batch(net, batch, beta_schedule(i, cfg), cfg.seed, i, ids);
      if (!std::isfinite(br.metrics.loss))
        throw NumericalError("non-finite loss at iteration " + std::to_string(i + 1));
      const double norm = clip_global_norm(br.grads, cfg.grad_clip);
      if (!std::isfinite(norm))
        throw NumericalError("non-finite gradient at iteration " + std::to_string(i + 1));
      adam_update(net.params(), br.grads, adam, cfg);

      IterationMetrics& m = br.metrics;
      m.iter = i + 1;
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      m.wallclock_s = opts.deterministic ? 0.0 : elapsed;
      metrics << metrics_row(m) << "\n" << std::flush;
      if (opts.deterministic) timing << m.iter << "," << fmt(elapsed) << "\n" << std::flush;
      if (opts.on_iteration) opts.on_iteration(m);
      result.history.push_back(m);
      result.final_iter = m.iter;
      if (m.iter % cfg.checkpoint_every == 0 || m.iter == cfg.total_iters) save(m.iter);
    }
  } catch (const NumericalError& e) {
    if (opts.deterministic) omp_set_num_threads(saved_threads);
    throw NumericalError(std::string(e.what()) + "; training aborted, last checkpoint kept at " +
                         ckpt_path.string());
  }
  if (opts.deterministic) omp_set_num_threads(saved_threads);
  if (result.final_iter == start && start == cfg.total_iters && !std::filesystem::exists(ckpt_path))
    save(start);
  return result;
}

}  // namespace dlh
