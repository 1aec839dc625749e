#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lmda/dataio.hpp"
#include "lmda/trialset.hpp"

namespace lmda::interpret {

/// Per-channel values and an inverse-distance-weighted (power 2) G x G grid
/// over [-1,1]^2, row 0 anterior, masked to the unit disk.
struct Topography {
  std::vector<double> channel_values;
  std::vector<std::string> channel_names;
  std::vector<ElectrodePos> positions;
  std::string montage;
  std::size_t grid_size = 0;
  std::vector<double> grid;   // row-major; 0 outside the disk
  std::vector<bool> inside;   // row-major disk mask

  double grid_at(std::size_t row, std::size_t col) const { return grid[row * grid_size + col]; }
};

Topography topo_export(std::span<const double> values, const std::vector<std::string>& names,
                       const dataio::Montage& montage, std::size_t grid_size);

/// `channel,value` rows.
std::string topography_csv(const Topography& topo);
/// Heat disc with electrode markers.
std::string topography_svg(const Topography& topo, std::string_view title);

}  // namespace lmda::interpret
