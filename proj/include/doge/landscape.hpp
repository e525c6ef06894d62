#pragma once

// Two-dimensional loss-surface slices around a head and training-curve export.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "doge/model.hpp"
#include "doge/objective.hpp"
#include "doge/trainer.hpp"

namespace doge::landscape {

struct GridConfig {
  std::size_t grid_size = 41;  // odd
  double radius = 1.0;
  std::uint64_t seed_x = 1;
  std::uint64_t seed_y = 2;
};

struct LandscapeGrid {
  std::size_t grid_size = 0;
  double radius = 0.0;
  std::uint64_t seed_x = 0;
  std::uint64_t seed_y = 0;
  std::vector<double> coords;
  // values[i * grid_size + j] is the total loss at (coords[i], coords[j]).
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * grid_size + j]; }
  double center() const { return at(grid_size / 2, grid_size / 2); }
};

/// Random direction in head-parameter space, drawn from `seed`, with each
/// output row [W_r, b_r] (and each hidden row) rescaled to the norm of the
/// matching row of `head`.
model::HeadParams filter_normalized_direction(const model::HeadParams& head, std::uint64_t seed);

/// Evaluates the total objective at head + (x * d1 + y * d2) on a fixed batch.
/// Throws InvalidArgument for an even grid size or a non-positive radius.
LandscapeGrid slice_loss_surface(const model::HeadParams& head, const objective::PositionBatch& batch,
                                 const objective::AdvConfig& adv, const GridConfig& cfg);

/// CSV with header x,y,loss; one row per cell in index order.
void write_grid_csv(std::ostream& os, const LandscapeGrid& grid);

/// CSV with header step,total_loss,sft_loss,adv_loss,masked_kl. Throws
/// InvalidArgument on an empty log.
void export_training_curves(std::ostream& os, std::span<const trainer::StepMetrics> log);

}  // namespace doge::landscape
