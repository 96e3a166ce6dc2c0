#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedbev/pipeline.hpp"
#include "fedbev/topology.hpp"
#include "fedbev/trip.hpp"

namespace fedbev {

struct DataOptions {
  std::string source = "synthetic";  // synthetic | csv
  std::size_t fleet_size = 10;
  std::uint64_t seed = 7;
  std::size_t duration = 1800;
  std::filesystem::path csv_dir;
  ColumnMap columns;
};

/// Synthetic trips, or every *.csv of csv_dir in natural name order
/// (V2 before V10).
std::vector<TripRecord> acquire_trips(const DataOptions& options);

/// "V7" -> 7; `fallback` when the name carries no trailing number.
int client_id_from_name(std::string_view name, int fallback);

/// Features, windows, chronological split, then standardisation with the
/// statistics of this client's own training part.
ClientData prepare_client(const TripRecord& trip, int id, std::size_t window, const SplitSpec& split);

FleetSpec build_fleet(std::span<const TripRecord> trips, std::size_t window, const SplitSpec& split);

}  // namespace fedbev
