#pragma once

/**
 * @file
 * @brief JSON parameter files for vehicle, tire and track configuration.
 *
 * Layout (schema_version 1), every block and every key optional:
 * @code
 * { "schema_version": 1,
 *   "vehicle": { "mass": 2000, "yaw_inertia": 3500, "a": 1.4, "b": 1.5, "wheel_radius": 0.33,
 *                "front_torque_fraction": 0.5, "v_min": 1.0, "steer_max": 0.71, "steer_rate_max": 1.0,
 *                "torque_max": 3000, "torque_rate_max": 5000 },
 *   "tire":    { "mu": 0.9, "cornering_stiffness_front": 160000, "cornering_stiffness_rear": 180000,
 *                "zeta": 0.99, "normal_load_front": 0, "normal_load_rear": 0 },
 *   "track":   { "straight_length": 20, "turn_radius": 12, "half_width": 3 } }
 * @endcode
 */

#include <fstream>
#include <string>

#include <json.hpp>

#include "single_track.hpp"
#include "track.hpp"

namespace pmpsafe {

inline constexpr int kParamsSchemaVersion = 1;

struct VehicleConfig
{
  VehicleParams vehicle;
  TireModel tire;
  TrackGeometry track;
};

namespace detail {
template<class T>
void read_if(const nlohmann::json & j, const char * key, T & out)
{
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

inline VehicleConfig vehicle_config_from_json(const nlohmann::json & j)
{
  const int version = j.value("schema_version", -1);
  if (version != kParamsSchemaVersion) {
    throw VersionError("parameter file: unsupported schema_version " + std::to_string(version));
  }
  VehicleConfig cfg;
  if (j.contains("vehicle")) {
    const auto & v = j.at("vehicle");
    auto & p = cfg.vehicle;
    detail::read_if(v, "mass", p.mass);
    detail::read_if(v, "yaw_inertia", p.yaw_inertia);
    detail::read_if(v, "a", p.a);
    detail::read_if(v, "b", p.b);
    detail::read_if(v, "wheel_radius", p.wheel_radius);
    detail::read_if(v, "front_torque_fraction", p.front_torque_fraction);
    detail::read_if(v, "gravity", p.gravity);
    detail::read_if(v, "v_min", p.v_min);
    detail::read_if(v, "steer_max", p.steer_max);
    detail::read_if(v, "steer_rate_max", p.steer_rate_max);
    detail::read_if(v, "torque_max", p.torque_max);
    detail::read_if(v, "torque_rate_max", p.torque_rate_max);
    p.validate();
  }
  if (j.contains("tire")) {
    const auto & t = j.at("tire");
    auto & p = cfg.tire;
    detail::read_if(t, "mu", p.mu);
    detail::read_if(t, "cornering_stiffness_front", p.cornering_stiffness_front);
    detail::read_if(t, "cornering_stiffness_rear", p.cornering_stiffness_rear);
    detail::read_if(t, "zeta", p.zeta);
    detail::read_if(t, "normal_load_front", p.normal_load_front);
    detail::read_if(t, "normal_load_rear", p.normal_load_rear);
    p.validate();
  }
  if (j.contains("track")) {
    const auto & t = j.at("track");
    double L = 20.0, R = 12.0, w = 3.0;
    detail::read_if(t, "straight_length", L);
    detail::read_if(t, "turn_radius", R);
    detail::read_if(t, "half_width", w);
    cfg.track = TrackGeometry(L, R, w);
  }
  return cfg;
}

inline nlohmann::json to_json(const VehicleConfig & cfg)
{
  const auto & v = cfg.vehicle;
  const auto & t = cfg.tire;
  return {{"schema_version", kParamsSchemaVersion},
          {"vehicle",
           {{"mass", v.mass},
            {"yaw_inertia", v.yaw_inertia},
            {"a", v.a},
            {"b", v.b},
            {"wheel_radius", v.wheel_radius},
            {"front_torque_fraction", v.front_torque_fraction},
            {"gravity", v.gravity},
            {"v_min", v.v_min},
            {"steer_max", v.steer_max},
            {"steer_rate_max", v.steer_rate_max},
            {"torque_max", v.torque_max},
            {"torque_rate_max", v.torque_rate_max}}},
          {"tire",
           {{"mu", t.mu},
            {"cornering_stiffness_front", t.cornering_stiffness_front},
            {"cornering_stiffness_rear", t.cornering_stiffness_rear},
            {"zeta", t.zeta},
            {"normal_load_front", t.normal_load_front},
            {"normal_load_rear", t.normal_load_rear}}},
          {"track",
           {{"straight_length", cfg.track.straight_length()},
            {"turn_radius", cfg.track.turn_radius()},
            {"half_width", cfg.track.half_width()}}}};
}

inline VehicleConfig load_vehicle_config(const std::string & path)
{
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open parameter file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception & ex) {
    throw ConfigError("parameter file " + path + ": " + ex.what());
  }
  return vehicle_config_from_json(j);
}

}  // namespace pmpsafe
