#include "fedbev/battery.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "fedbev/error.hpp"
#include "fedbev/rng.hpp"
#include "fedbev/trip.hpp"

namespace fedbev {

LinearTable::LinearTable(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  if (x_.size() != y_.size()) throw ValidationError("table: knot and value counts differ");
  if (x_.size() < 2) throw ValidationError("table: need at least two knots");
  for (std::size_t i = 1; i < x_.size(); ++i) {
    if (!(x_[i] > x_[i - 1])) throw ValidationError("table: knots must be strictly increasing");
  }
  for (double v : y_) {
    if (!std::isfinite(v)) throw ValidationError("table: non-finite value");
  }
}

LinearTable LinearTable::constant(double value) { return LinearTable({0.0, 1.0}, {value, value}); }

double LinearTable::operator()(double x) const {
  if (x <= x_.front()) return y_.front();
  if (x >= x_.back()) return y_.back();
  const auto it = std::upper_bound(x_.begin(), x_.end(), x);
  const std::size_t hi = static_cast<std::size_t>(it - x_.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - x_[lo]) / (x_[hi] - x_[lo]);
  return y_[lo] + t * (y_[hi] - y_[lo]);
}

namespace {

void check_soc_table(const LinearTable& table, const char* name, bool allow_zero) {
  const auto& x = table.knots();
  if (x.size() < 2) throw ValidationError(fmt::format("battery: {} table needs at least two knots", name));
  if (x.front() < 0.0 || x.back() > 1.0) {
    throw ValidationError(fmt::format("battery: {} table knots must lie in [0, 1]", name));
  }
  for (double v : table.values()) {
    if (allow_zero ? v < 0.0 : v <= 0.0) {
      throw ValidationError(fmt::format("battery: {} table must be {} over the SoC domain", name,
                                        allow_zero ? "non-negative" : "positive"));
    }
  }
}

}  // namespace

BatteryParams BatteryParams::defaults() {
  BatteryParams p;
  p.voc_table = LinearTable({0.0, 0.1, 0.3, 0.6, 0.9, 1.0}, {3.40, 3.55, 3.68, 3.85, 4.08, 4.20});
  p.r0_table = LinearTable::constant(0.002);
  p.rp1_table = LinearTable::constant(0.0015);
  p.cp1_table = LinearTable::constant(5000.0);
  return p;
}

void BatteryParams::validate() const {
  if (n_bc < 1) throw ValidationError("battery: n_bc must be >= 1");
  if (parallel_cells < 1 || n_bc % parallel_cells != 0) {
    throw ValidationError("battery: parallel_cells must divide n_bc");
  }
  if (!(q_bc > 0.0)) throw ValidationError("battery: Q_bc must be positive");
  if (!(pack_power_limit > 0.0)) throw ValidationError("battery: pack_power_limit must be positive");
  check_soc_table(voc_table, "V_oc", false);
  check_soc_table(r0_table, "R0", true);
  check_soc_table(rp1_table, "R_p1", false);
  check_soc_table(cp1_table, "C_p1", false);
}

BatteryCellState BatteryCellState::initial(double soc0) {
  BatteryCellState s;
  s.soc = soc0;
  return s;
}

VehicleParams VehicleParams::defaults() {
  VehicleParams v;
  // No regeneration below 1 m/s, ramping to 80 % of the available braking
  // power by 10 m/s.
  v.regen_fraction = LinearTable({0.0, 1.0, 5.0, 10.0, 40.0}, {0.0, 0.0, 0.5, 0.8, 0.8});
  return v;
}

void VehicleParams::validate() const {
  if (!(mass > 0.0)) throw ValidationError("vehicle: mass must be positive");
  if (!(driveline_eff > 0.0 && driveline_eff <= 1.0)) throw ValidationError("vehicle: driveline_eff must be in (0, 1]");
  if (drag_area < 0.0 || air_density < 0.0 || c_rr < 0.0) throw ValidationError("vehicle: negative road-load coefficient");
  if (!(motor_power_limit > 0.0)) throw ValidationError("vehicle: motor_power_limit must be positive");
  const auto& x = regen_fraction.knots();
  const auto& y = regen_fraction.values();
  if (x.size() < 2) throw ValidationError("vehicle: regen_fraction table missing");
  if (regen_fraction(0.0) != 0.0) throw ValidationError("vehicle: regen_fraction must be 0 at standstill");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0 || y[i] > 1.0) throw ValidationError("vehicle: regen_fraction must lie in [0, 1]");
    if (i > 0 && y[i] < y[i - 1]) throw ValidationError("vehicle: regen_fraction must be non-decreasing");
  }
}

void DriveCycle::validate() const {
  if (!(dt > 0.0)) throw ValidationError("cycle: dt must be positive");
  if (grade.size() != speed.size()) throw ValidationError("cycle: speed and grade lengths differ");
  for (std::size_t t = 0; t < speed.size(); ++t) {
    if (!(speed[t] >= 0.0)) throw ValidationError(fmt::format("cycle: negative speed at t={}", t));
    if (t > 0 && std::abs(speed[t] - speed[t - 1]) / dt > kMaxCycleAccel + 1e-12) {
      throw ValidationError(fmt::format("cycle: implied acceleration exceeds {} m/s^2 at t={}", kMaxCycleAccel, t));
    }
  }
}

double cell_current(double p_bp, int n_bc, double v_bc) {
  if (n_bc < 1) throw ValidationError("cell_current: n_bc must be >= 1");
  if (!(v_bc > 0.0)) {
    throw DegenerateVoltageError(fmt::format("cell terminal voltage collapsed to {} V", v_bc));
  }
  return p_bp / (static_cast<double>(n_bc) * v_bc);
}

double cell_energy_increment(double soc, const BatteryParams& params, double i_bc, double dt) {
  if (!(dt > 0.0)) throw ValidationError("cell_energy_increment: dt must be positive");
  return params.voc_table(soc) * i_bc * dt;
}

CellStep step_cell(const BatteryCellState& state, const BatteryParams& params, double i_bc, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_cell: dt must be positive");
  const double soc = state.soc;
  const double r0 = params.r0_table(soc);
  const double rp1 = params.rp1_table(soc);
  const double cp1 = params.cp1_table(soc);

  CellStep out;
  out.v_bc = params.voc_table(soc) - state.v_p1 - r0 * i_bc;

  BatteryCellState& next = out.state;
  next.v_p1 = state.v_p1 + dt * (i_bc / cp1 - state.v_p1 / (rp1 * cp1));
  next.soc = soc - dt * i_bc / params.q_bc;
  next.j_cell = state.j_cell + cell_energy_increment(soc, params, i_bc, dt);
  next.soc_clamped = state.soc_clamped;
  if (next.soc < 0.0 || next.soc > 1.0) {
    next.soc = std::clamp(next.soc, 0.0, 1.0);
    next.soc_clamped = true;
  }
  return out;
}

RoadLoad road_load_power(double v, double a, double grade, const VehicleParams& veh, double pack_power_limit) {
  if (v < 0.0) throw ValidationError("road_load_power: negative speed");
  const double m = veh.mass;
  const double force = m * a + m * kGravity * std::sin(grade) + 0.5 * veh.air_density * veh.drag_area * v * v +
                       veh.c_rr * m * kGravity * std::cos(grade);
  RoadLoad out{};
  out.wheel_power = force * v;
  double p = out.wheel_power >= 0.0 ? out.wheel_power / veh.driveline_eff + veh.aux_power
                                    : out.wheel_power * veh.driveline_eff * veh.regen_fraction(v) + veh.aux_power;
  const double upper = std::min(veh.motor_power_limit / veh.driveline_eff + veh.aux_power, pack_power_limit);
  const double lower = -pack_power_limit;
  if (p > upper || p < lower) {
    p = std::clamp(p, lower, upper);
    out.clamped = true;
  }
  out.battery_power = p;
  return out;
}

DriveCycle generate_drive_cycle(std::uint64_t seed, std::size_t duration, const DriveCycleOptions& opt) {
  if (duration < 60) throw ValidationError("generate_drive_cycle: duration must be >= 60 s");
  Rng rng(derive_seed(seed, "drive-cycle"));
  DriveCycle cycle;
  cycle.speed.reserve(duration);
  cycle.grade.reserve(duration);

  // Grade: Ornstein-Uhlenbeck process, then a moving-average smoother.
  {
    const double tau = 120.0;
    const double stationary_sd = 0.005;
    const double sigma = stationary_sd * std::sqrt(2.0 / tau);
    std::vector<double> raw(duration);
    double g = stationary_sd * rng.normal();
    for (auto& value : raw) {
      g += -g / tau + sigma * rng.normal();
      value = g;
    }
    const std::size_t half = 10;
    for (std::size_t t = 0; t < duration; ++t) {
      const std::size_t lo = t >= half ? t - half : 0;
      const std::size_t hi = std::min(duration - 1, t + half);
      double sum = 0.0;
      for (std::size_t k = lo; k <= hi; ++k) sum += raw[k];
      cycle.grade.push_back(std::clamp(sum / static_cast<double>(hi - lo + 1), -opt.max_grade, opt.max_grade));
    }
  }

  auto pick_target = [&] {
    const double r = rng.uniform();
    double target;
    if (r < 0.50) {
      target = rng.uniform(6.0, 15.0);  // urban
    } else if (r < 0.85) {
      target = rng.uniform(13.0, 21.0);  // arterial
    } else {
      target = rng.uniform(18.0, 22.0);  // highway
    }
    return std::min(target, opt.max_speed);
  };

  double v = 0.0;
  auto emit = [&](double next) {
    next = std::clamp(next, 0.0, opt.max_speed);
    cycle.speed.push_back(next);
    v = next;
  };
  auto full = [&] { return cycle.speed.size() >= duration; };

  // Ramp toward a target at a bounded rate.
  auto ramp_to = [&](double target, double rate) {
    while (!full() && v != target) {
      const double step = std::min(std::abs(target - v), rate);
      emit(target > v ? v + step : v - step);
    }
  };

  emit(0.0);
  while (!full()) {
    if (v == 0.0) {
      const auto idle = static_cast<std::size_t>(rng.uniform(3.0, 30.0));
      for (std::size_t k = 0; k < idle && !full(); ++k) emit(0.0);
      if (full()) break;
    }
    const double target = pick_target();
    if (target > v) {
      ramp_to(target, rng.uniform(0.8, opt.max_accel));
    } else {
      ramp_to(target, rng.uniform(0.5, 2.0));
    }
    // Cruise with a small bounded random walk around the target.
    const auto cruise = static_cast<std::size_t>(rng.uniform(15.0, 150.0));
    for (std::size_t k = 0; k < cruise && !full(); ++k) {
      double next = v + std::clamp(0.3 * rng.normal(), -0.6, 0.6);
      next = std::clamp(next, std::max(0.5, target - 2.0), target + 2.0);
      emit(next);
    }
    if (full()) break;
    if (rng.uniform() < 0.5) {
      ramp_to(0.0, rng.uniform(0.6, opt.max_decel));
    }
  }
  cycle.speed.resize(duration);
  cycle.validate();
  return cycle;
}

TripRecord simulate_trip(const DriveCycle& cycle, const VehicleParams& veh, const BatteryParams& bat, double soc0,
                         const std::string& vehicle_id) {
  TripSimulation detail;
  return simulate_trip(cycle, veh, bat, soc0, vehicle_id, detail);
}

TripRecord simulate_trip(const DriveCycle& cycle, const VehicleParams& veh, const BatteryParams& bat, double soc0,
                         const std::string& vehicle_id, TripSimulation& detail) {
  if (!(soc0 > 0.0 && soc0 <= 1.0)) throw ValidationError("simulate_trip: soc0 must be in (0, 1]");
  cycle.validate();
  veh.validate();
  bat.validate();

  const std::size_t n = cycle.duration();
  const double dt = cycle.dt;
  TripRecord rec;
  rec.vehicle_id = vehicle_id;
  rec.time.resize(n);
  rec.speed.resize(n);
  rec.acceleration.resize(n);
  rec.distance.resize(n);
  rec.energy.resize(n);
  std::vector<double> grade(n), altitude(n), power(n), pack_current(n), cell_voltage(n), transient(n), soc(n);

  BatteryCellState state = BatteryCellState::initial(soc0);
  // Terminal voltage from the previous step breaks the current/voltage loop.
  double v_prev = bat.voc_table(soc0);
  double dist = 0.0;
  double alt = 0.0;
  detail = {};

  for (std::size_t t = 0; t < n; ++t) {
    const double v = cycle.speed[t];
    const double a = t == 0 ? 0.0 : (v - cycle.speed[t - 1]) / dt;
    if (t > 0) {
      dist += v * dt;
      alt += v * dt * std::sin(cycle.grade[t]);
    }
    const RoadLoad load = road_load_power(v, a, cycle.grade[t], veh, bat.pack_power_limit);
    if (load.clamped) ++detail.power_clamp_events;

    const double i_bc = cell_current(load.battery_power, bat.n_bc, v_prev);
    const double j_before = state.j_cell;
    const bool clamped_before = state.soc_clamped;
    CellStep step = step_cell(state, bat, i_bc, dt);
    if (step.state.soc_clamped && !clamped_before) ++detail.soc_clamp_events;
    state = step.state;
    v_prev = step.v_bc;

    rec.time[t] = static_cast<double>(t) * dt;
    rec.speed[t] = v;
    rec.acceleration[t] = a;
    rec.distance[t] = dist;
    rec.energy[t] = static_cast<double>(bat.n_bc) * (state.j_cell - j_before) / 3600.0;
    grade[t] = cycle.grade[t];
    altitude[t] = alt;
    power[t] = load.battery_power;
    pack_current[t] = i_bc * bat.parallel_cells;
    cell_voltage[t] = step.v_bc;
    transient[t] = state.v_p1;
    soc[t] = state.soc;
  }
  detail.final_state = state;

  rec.extras = {{"grade_rad", std::move(grade)},
                {"altitude_m", std::move(altitude)},
                {"power_w", std::move(power)},
                {"pack_current_a", std::move(pack_current)},
                {"cell_voltage_v", std::move(cell_voltage)},
                {"transient_voltage_v", std::move(transient)},
                {"soc", std::move(soc)}};
  return rec;
}

std::vector<TripRecord> generate_fleet(const FleetOptions& options) {
  if (options.fleet_size < 1) throw ValidationError("fleet: size must be >= 1");
  std::vector<TripRecord> fleet;
  fleet.reserve(options.fleet_size);
  for (std::size_t i = 1; i <= options.fleet_size; ++i) {
    const DriveCycle cycle = generate_drive_cycle(derive_seed(options.seed, "cycle", i), options.duration);
    Rng soc_rng(derive_seed(options.seed, "soc0", i));
    double soc0 = soc_rng.uniform(0.55, 0.95);
    TripSimulation detail;
    TripRecord rec = simulate_trip(cycle, options.vehicle, options.battery, soc0, fmt::format("V{}", i), detail);
    // A trip that pushed the cell out of range is re-run from a mid SoC.
    if (detail.soc_clamp_events > 0) {
      soc0 = 0.5;
      rec = simulate_trip(cycle, options.vehicle, options.battery, soc0, fmt::format("V{}", i), detail);
    }
    fleet.push_back(std::move(rec));
  }
  return fleet;
}

}  // namespace fedbev
