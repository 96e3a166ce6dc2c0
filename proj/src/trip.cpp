#include "fedbev/trip.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "fedbev/error.hpp"

namespace fedbev {

void TripRecord::validate() const {
  const std::size_t n = time.size();
  if (speed.size() != n || acceleration.size() != n || distance.size() != n || energy.size() != n) {
    throw ValidationError(fmt::format("trip {}: role columns differ in length", vehicle_id));
  }
  for (const auto& [name, column] : extras) {
    if (column.size() != n) throw ValidationError(fmt::format("trip {}: column {} differs in length", vehicle_id, name));
  }
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      if (!(time[t] > time[t - 1]) || std::abs(time[t] - time[t - 1] - 1.0) > 1e-9) {
        throw ValidationError(fmt::format("trip {}: time must advance at 1 Hz (row {})", vehicle_id, t));
      }
      if (distance[t] < distance[t - 1]) {
        throw ValidationError(fmt::format("trip {}: distance decreases at row {}", vehicle_id, t));
      }
    }
    if (speed[t] < 0.0) throw ValidationError(fmt::format("trip {}: negative speed at row {}", vehicle_id, t));
  }
}

const std::vector<double>* TripRecord::extra(const std::string& name) const {
  for (const auto& [key, column] : extras) {
    if (key == name) return &column;
  }
  return nullptr;
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::optional<double> parse_double(std::string_view text) {
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace

TripRecord load_trip_csv(const std::filesystem::path& path, const ColumnMap& columns, std::string vehicle_id) {
  std::ifstream in(path);
  if (!in) throw LoadError(fmt::format("{}: cannot open file", path.string()));
  const std::string file = path.filename().string();

  std::string line;
  if (!std::getline(in, line)) throw LoadError(fmt::format("{}: empty file", file));
  const auto header_cells = split_csv_line(line);
  std::vector<std::string> header(header_cells.begin(), header_cells.end());

  auto find_role = [&](const std::string& role, const std::string& name) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    throw LoadError(fmt::format("{}: missing column for role '{}' (expected header '{}')", file, role, name));
  };
  const std::size_t c_time = find_role("time", columns.time);
  const std::size_t c_speed = find_role("speed", columns.speed);
  const std::size_t c_accel = find_role("acceleration", columns.acceleration);
  const std::size_t c_dist = find_role("distance", columns.distance);
  const std::size_t c_energy = find_role("energy", columns.energy);

  std::vector<std::vector<double>> data(header.size());
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw LoadError(fmt::format("{}: row {} has {} cells, header has {}", file, row, cells.size(), header.size()));
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto value = parse_double(cells[c]);
      if (!value) throw LoadError(fmt::format("{}: row {} column '{}': non-numeric cell '{}'", file, row, header[c], cells[c]));
      if (std::isnan(*value)) throw LoadError(fmt::format("{}: row {} column '{}': NaN", file, row, header[c]));
      data[c].push_back(*value);
    }
  }
  if (data[c_time].empty()) throw LoadError(fmt::format("{}: no data rows", file));

  const auto& t = data[c_time];
  for (std::size_t r = 1; r < t.size(); ++r) {
    if (!(t[r] > t[r - 1])) {
      throw LoadError(fmt::format("{}: row {} column '{}': time not strictly increasing", file, r + 1, header[c_time]));
    }
  }

  TripRecord rec;
  rec.vehicle_id = vehicle_id.empty() ? path.stem().string() : std::move(vehicle_id);
  rec.time = data[c_time];
  rec.speed = data[c_speed];
  rec.acceleration = data[c_accel];
  rec.distance = data[c_dist];
  rec.energy = data[c_energy];
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == c_time || c == c_speed || c == c_accel || c == c_dist || c == c_energy) continue;
    rec.extras.emplace_back(header[c], std::move(data[c]));
  }
  try {
    rec.validate();
  } catch (const ValidationError& e) {
    throw LoadError(fmt::format("{}: {}", file, e.what()));
  }
  return rec;
}

std::vector<std::string> trip_csv_header(const TripRecord& rec) {
  const ColumnMap canonical;
  std::vector<std::string> header{canonical.time, canonical.speed, canonical.acceleration, canonical.distance};
  for (const auto& [name, column] : rec.extras) header.push_back(name);
  header.push_back(canonical.energy);
  return header;
}

void write_trip_csv(const TripRecord& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("{}: cannot write file", path.string()));
  const auto header = trip_csv_header(rec);
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  std::string line;
  for (std::size_t t = 0; t < rec.size(); ++t) {
    line = fmt::format("{},{},{},{}", rec.time[t], rec.speed[t], rec.acceleration[t], rec.distance[t]);
    for (const auto& [name, column] : rec.extras) fmt::format_to(std::back_inserter(line), ",{}", column[t]);
    fmt::format_to(std::back_inserter(line), ",{}\n", rec.energy[t]);
    out << line;
  }
  if (!out) throw Error(fmt::format("{}: write failed", path.string()));
}

}  // namespace fedbev
