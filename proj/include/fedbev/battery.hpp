#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedbev {

struct TripRecord;

/// Piecewise-linear lookup y(x) with flat extrapolation outside the knots.
class LinearTable {
 public:
  LinearTable() = default;
  LinearTable(std::vector<double> x, std::vector<double> y);

  /// Convenience for a constant table over [0, 1].
  static LinearTable constant(double value);

  double operator()(double x) const;

  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& values() const { return y_; }

 private:
  std::vector<double> x_;
  std::vector<double> y_;
};

/// Cell-level equivalent-circuit parameters (one RC pair).
/// Tables are functions of state of charge in [0, 1].
struct BatteryParams {
  int n_bc = 600;                  // 120s5p
  int parallel_cells = 5;          // only used to report pack current
  double q_bc = 72000.0;           // ampere-seconds (20 Ah)
  LinearTable voc_table;           // volts
  LinearTable r0_table;            // ohms
  LinearTable rp1_table;           // ohms
  LinearTable cp1_table;           // farads
  double pack_power_limit = 160000.0;

  /// Default table set: V_oc rising 3.4 -> 4.2 V, R0 = 2 mOhm,
  /// R_p1 = 1.5 mOhm, C_p1 = 5 kF.
  static BatteryParams defaults();

  /// Throws ValidationError on any broken invariant.
  void validate() const;
};

struct BatteryCellState {
  double soc = 1.0;
  double v_p1 = 0.0;    // transient (RC) voltage, volts
  double j_cell = 0.0;  // cumulative cell energy, joules
  bool soc_clamped = false;

  static BatteryCellState initial(double soc0);
};

struct VehicleParams {
  double mass = 1600.0;               // kg
  double drag_area = 0.65;            // C_d * A, m^2
  double air_density = 1.2;           // kg/m^3
  double c_rr = 0.010;
  double driveline_eff = 0.90;
  LinearTable regen_fraction;         // speed (m/s) -> [0, 1]
  double aux_power = 0.0;             // W
  double motor_power_limit = 102000.0;

  static VehicleParams defaults();
  void validate() const;
};

struct DriveCycle {
  double dt = 1.0;
  std::vector<double> speed;  // m/s
  std::vector<double> grade;  // rad

  std::size_t duration() const { return speed.size(); }
  void validate() const;
};

inline constexpr double kGravity = 9.81;
inline constexpr double kMaxCycleAccel = 3.5;  // m/s^2, hard bound on implied acceleration

/// Per-cell current for a given pack power (positive = discharge).
double cell_current(double p_bp, int n_bc, double v_bc);

/// Open-circuit energy drawn by one cell over one step (rectangle rule).
double cell_energy_increment(double soc, const BatteryParams& params, double i_bc, double dt);

struct CellStep {
  BatteryCellState state;
  double v_bc;  // terminal voltage at the pre-step state
};

/// One forward-Euler step of the RC cell model.
CellStep step_cell(const BatteryCellState& state, const BatteryParams& params, double i_bc, double dt);

struct RoadLoad {
  double wheel_power;    // W
  double battery_power;  // W, after driveline/regen mapping and clamping
  bool clamped;
};

/// Longitudinal road-load surrogate mapped to battery-side power.
RoadLoad road_load_power(double v, double a, double grade, const VehicleParams& veh,
                         double pack_power_limit = 160000.0);

struct DriveCycleOptions {
  double max_speed = 35.0;
  double max_accel = 2.0;
  double max_decel = 3.0;
  double max_grade = 0.025;
};

/// Synthetic idle/accelerate/cruise/brake speed trace with a smooth grade
/// profile. Deterministic in the seed.
DriveCycle generate_drive_cycle(std::uint64_t seed, std::size_t duration = 1800,
                                const DriveCycleOptions& options = {});

struct TripSimulation {
  BatteryCellState final_state;
  int power_clamp_events = 0;
  int soc_clamp_events = 0;
};

/// Drives the cycle through the vehicle and cell models once per second.
TripRecord simulate_trip(const DriveCycle& cycle, const VehicleParams& veh, const BatteryParams& bat,
                         double soc0, const std::string& vehicle_id);

/// Same as above, also reporting the final cell state and event counters.
TripRecord simulate_trip(const DriveCycle& cycle, const VehicleParams& veh, const BatteryParams& bat,
                         double soc0, const std::string& vehicle_id, TripSimulation& detail);

struct FleetOptions {
  std::size_t fleet_size = 10;
  std::uint64_t seed = 7;
  std::size_t duration = 1800;
  VehicleParams vehicle = VehicleParams::defaults();
  BatteryParams battery = BatteryParams::defaults();
};

/// Vehicle ids are "V1".."VN". Each vehicle gets its own cycle seed and
/// initial state of charge derived from the fleet seed.
std::vector<TripRecord> generate_fleet(const FleetOptions& options);

}  // namespace fedbev
