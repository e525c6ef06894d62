#include "doge/landscape.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace doge::landscape {

namespace {

// Rescales each row of `dir` (with its bias entry) to the norm of the same row in `ref`.
void normalize_rows(num::RealMatrix& dir, std::span<double> dir_bias, const num::RealMatrix& ref,
                    std::span<const double> ref_bias) {
  for (std::size_t r = 0; r < dir.rows(); ++r) {
    double dn = dir_bias[r] * dir_bias[r];
    double rn = ref_bias[r] * ref_bias[r];
    for (double x : dir.row(r)) dn += x * x;
    for (double x : ref.row(r)) rn += x * x;
    const double s = dn > 0.0 ? std::sqrt(rn) / std::sqrt(dn) : 0.0;
    for (double& x : dir.row(r)) x *= s;
    dir_bias[r] *= s;
  }
}

}  // namespace

model::HeadParams filter_normalized_direction(const model::HeadParams& head, std::uint64_t seed) {
  model::validate(head);
  model::HeadParams d = head.zeros_like();
  num::SeededRng rng(seed, "landscape/direction");
  for (auto t : d.tensors()) {
    for (double& x : t) x = rng.normal();
  }
  normalize_rows(d.weights, d.bias, head.weights, head.bias);
  if (head.has_hidden()) normalize_rows(d.hidden_weights, d.hidden_bias, head.hidden_weights, head.hidden_bias);
  return d;
}

LandscapeGrid slice_loss_surface(const model::HeadParams& head, const objective::PositionBatch& batch,
                                 const objective::AdvConfig& adv, const GridConfig& cfg) {
  if (cfg.grid_size == 0 || cfg.grid_size % 2 == 0) throw InvalidArgument("grid_size must be odd");
  if (!(cfg.radius > 0.0)) throw InvalidArgument("radius must be positive");
  const std::size_t n = cfg.grid_size;
  LandscapeGrid g{n, cfg.radius, cfg.seed_x, cfg.seed_y, std::vector<double>(n), std::vector<double>(n * n)};
  const double half = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    // Exactly zero at the centre index.
    g.coords[i] = n == 1 ? 0.0 : cfg.radius * (2.0 * static_cast<double>(i) - half) / half;
  }

  const model::HeadParams d1 = filter_normalized_direction(head, cfg.seed_x);
  const model::HeadParams d2 = filter_normalized_direction(head, cfg.seed_y);
  model::HeadParams probe = head;
  const auto base = head.tensors();
  const auto t1 = d1.tensors();
  const auto t2 = d2.tensors();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = g.coords[i];
      const double y = g.coords[j];
      auto p = probe.tensors();
      for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t k = 0; k < p[t].size(); ++k) p[t][k] = base[t][k] + (x * t1[t][k] + y * t2[t][k]);
      }
      g.values[i * n + j] = objective::evaluate_loss(probe, batch, adv).total_loss;
    }
  }
  return g;
}

void write_grid_csv(std::ostream& os, const LandscapeGrid& grid) {
  os << "x,y,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < grid.grid_size; ++i) {
    for (std::size_t j = 0; j < grid.grid_size; ++j) {
      os << grid.coords[i] << ',' << grid.coords[j] << ',' << grid.at(i, j) << '\n';
    }
  }
}

void export_training_curves(std::ostream& os, std::span<const trainer::StepMetrics> log) {
  if (log.empty()) throw InvalidArgument("export_training_curves: empty metrics log");
  os << "step,total_loss,sft_loss,adv_loss,masked_kl\n" << std::setprecision(17);
  for (const auto& m : log) {
    os << m.step << ',' << m.total_loss << ',' << m.sft_loss << ',' << m.adv_loss << ',' << m.masked_kl << '\n';
  }
}

}  // namespace doge::landscape
