#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace fedbev {

/// One vehicle's per-second trip log. The five role columns drive the
/// pipeline; everything else rides along in `extras` in file order.
struct TripRecord {
  std::string vehicle_id;
  std::vector<double> time;          // s
  std::vector<double> speed;         // m/s
  std::vector<double> acceleration;  // m/s^2
  std::vector<double> distance;      // m, cumulative
  std::vector<double> energy;        // Wh per second
  std::vector<std::pair<std::string, std::vector<double>>> extras;

  std::size_t size() const { return time.size(); }

  /// Checks equal lengths, 1 Hz strictly increasing time, non-decreasing
  /// distance and non-negative speed. Throws ValidationError.
  void validate() const;

  const std::vector<double>* extra(const std::string& name) const;
};

/// Maps the five roles onto header names.
struct ColumnMap {
  std::string time = "time_s";
  std::string speed = "speed_mps";
  std::string acceleration = "accel_mps2";
  std::string distance = "distance_m";
  std::string energy = "energy_wh";
};

/// Reads a per-vehicle CSV with a header row. The vehicle id defaults to
/// the file stem.
TripRecord load_trip_csv(const std::filesystem::path& path, const ColumnMap& columns = {},
                         std::string vehicle_id = {});

/// Writes role columns under the canonical names, then extras. Doubles use
/// the shortest representation that round-trips exactly.
void write_trip_csv(const TripRecord& rec, const std::filesystem::path& path);

/// Column order written by write_trip_csv: roles first, energy last.
std::vector<std::string> trip_csv_header(const TripRecord& rec);

}  // namespace fedbev
