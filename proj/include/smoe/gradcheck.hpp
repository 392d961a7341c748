#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "smoe/trainer.hpp"
#include "smoe/transformer.hpp"

namespace smoe {

struct GradCheckOptions {
  double fd_step = 1e-4;    // central-difference step
  double tie_gap = 1e-3;    // minimum gap between the k-th and (k+1)-th router logit
  double denom_floor = 1e-5;
  double aux_coeff = 0.0;
};

struct GradCheckParam {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  bool tie_screen_passed = false;  // false: batch has near-ties, resample before trusting errs
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_flat_index = 0;
  std::vector<GradCheckParam> params;

  bool passed(double tol) const { return tie_screen_passed && max_rel_err <= tol; }
};

// True when every router decision in the batch is separated from the first
// excluded logit by more than `gap`. TopK is treated as locally constant in
// backward, so finite differences are only meaningful away from ties.
inline bool router_gaps_ok(const TransformerModel<double>& model,
                           const std::vector<std::vector<int>>& batch, double gap) {
  const int n = static_cast<int>(model.config.num_experts);
  const int k = static_cast<int>(model.config.top_k_experts);
  if (k == n) return true;  // selection cannot change
  for (const auto& doc : batch) {
    ModelCache<double> cache;
    forward(model, doc, &cache);
    for (const auto& lc : cache.layers) {
      const Tensor<double>& logits = lc.moe.router_logits;
      std::vector<double> row(static_cast<std::size_t>(n));
      for (std::size_t t = 0; t < logits.size(0); ++t) {
        for (int e = 0; e < n; ++e) row[static_cast<std::size_t>(e)] = logits(t, static_cast<std::size_t>(e));
        std::sort(row.begin(), row.end(), std::greater<double>());
        if (row[static_cast<std::size_t>(k - 1)] - row[static_cast<std::size_t>(k)] <= gap)
          return false;
      }
    }
  }
  return true;
}

// Central finite differences in double precision against the analytic
// backward pass, for every parameter element. Shipped as a library operation
// so any configuration can be audited, not just the test models.
inline GradCheckReport check_gradients(TransformerModel<double>& model,
                                       const std::vector<std::vector<int>>& batch,
                                       const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tie_screen_passed = router_gaps_ok(model, batch, opt.tie_gap);

  auto [loss, grads] = backward(model, batch, opt.aux_coeff);
  (void)loss;

  auto batch_loss = [&]() {
    double sum = 0.0;
    for (const auto& doc : batch) sum += document_loss(model, doc, opt.aux_coeff);
    return sum / static_cast<double>(batch.size());
  };

  auto params = model.parameters();
  auto gs = grads.entries();
  auto names = model.parameter_names();
  const double h = opt.fd_step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckParam pc;
    pc.name = names[pi];
    Tensor<double>& p = *params[pi];
    const Tensor<double>& g = *gs[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      // Fourth-order central difference: truncation falls as h^4, which keeps
      // the oracle itself well below the tolerance for small gradients.
      p[i] = saved + h;
      const double lp1 = batch_loss();
      p[i] = saved - h;
      const double lm1 = batch_loss();
      p[i] = saved + 2.0 * h;
      const double lp2 = batch_loss();
      p[i] = saved - 2.0 * h;
      const double lm2 = batch_loss();
      p[i] = saved;
      const double fd = (8.0 * (lp1 - lm1) - (lp2 - lm2)) / (12.0 * h);
      const double an = g[i];
      const double denom = std::max({opt.denom_floor, std::abs(an), std::abs(fd)});
      const double rel = std::abs(an - fd) / denom;
      if (rel > pc.max_rel_err) pc.max_rel_err = rel;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pc.name;
        report.worst_flat_index = i;
      }
    }
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace smoe
