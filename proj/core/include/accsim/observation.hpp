#pragma once

namespace accsim {

/// What a controller sees at a decision step, in physical units.
struct Observation {
  double host_velocity = 0.0;      // m/s
  double relative_velocity = 0.0;  // v_l - v_h, m/s
  double separation = 0.0;         // m
  int gear = 1;
  double mass = 9000.0;            // kg
  double grade = 0.0;              // rad
  double set_speed = 0.0;          // m/s
  bool in_range = false;           // separation <= sensor range
};

}  // namespace accsim
