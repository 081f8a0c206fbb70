#include "augbc/policy.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace augbc {

std::pair<PolicyParams, TrainLog> train(const DemoDataset& dataset, const ArchitectureConfig& arch,
                                        const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();

  PolicyNet net(arch, dataset.schema);
  PolicyParams params = net.init_params(cfg.seed);

  std::vector<const Transition*> all;
  for (const Trajectory& t : dataset.trajectories)
    for (const Transition& tr : t.transitions) all.push_back(&tr);
  const std::size_t n = all.size();

  std::vector<double> grad, m(params.values.size(), 0.0), v(params.values.size(), 0.0);
  double b1t = 1.0, b2t = 1.0;

  RngStream root(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainLog log;
  log.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) {
      RngStream shuffler = root.child(static_cast<std::uint64_t>(epoch));
      shuffler.shuffle(order);
    }

    double epoch_sum = 0.0;
    for (std::size_t at = 0; at < n; at += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end = std::min(at + static_cast<std::size_t>(cfg.batch_size), n);
      std::vector<const Transition*> batch;
      batch.reserve(end - at);
      for (std::size_t i = at; i < end; ++i) batch.push_back(all[order[i]]);

      double loss = net.bc_loss(params, batch, &grad);
      if (!std::isfinite(loss))
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
      epoch_sum += loss * static_cast<double>(batch.size());

      b1t *= cfg.beta1;
      b2t *= cfg.beta2;
      for (std::size_t i = 0; i < params.values.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        double mhat = m[i] / (1.0 - b1t);
        double vhat = v[i] / (1.0 - b2t);
        params.values[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
      }
    }
    double mean = epoch_sum / static_cast<double>(n);
    if (!std::isfinite(mean))
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch));
    log.epoch_loss.push_back(mean);
  }

  for (double x : params.values) {
    if (!std::isfinite(x)) throw std::runtime_error("training produced non-finite parameters");
  }
  return {std::move(params), std::move(log)};
}

}  // namespace augbc
