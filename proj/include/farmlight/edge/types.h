#pragma once

#include <cstdint>
#include <string>

#include "farmlight/domain.h"

namespace farmlight::edge {

struct Alert {
  std::string alert_id;
  std::string obs_id;
  std::string sensor_id;
  GeoPoint location;
  int class_id = 0;
  std::string class_name;
  double confidence = 0.0;
  std::string recommendation;
  Urgency urgency = Urgency::low;
  std::int64_t created_ms = 0;
  bool acked = false;
  std::string image_ref;  // API path serving the observation's pixels

  bool operator==(const Alert&) const = default;
};

enum class Action { spray, irrigate, none };
enum class CommandState { pending, approved, rejected, executed };

std::string to_string(Action a);
Action action_from_string(const std::string& s);
std::string to_string(CommandState s);
CommandState command_state_from_string(const std::string& s);

/// pending→approved→executed and pending→rejected are the only transitions.
bool transition_allowed(CommandState from, CommandState to);

struct ActuationCommand {
  std::string command_id;
  std::string alert_id;
  Action action = Action::none;
  std::string target_sensor_id;
  bool requires_approval = true;
  CommandState state = CommandState::pending;

  bool operator==(const ActuationCommand&) const = default;
};

void to_json(Json& j, const Alert& a);
void from_json(const Json& j, Alert& a);
void to_json(Json& j, const ActuationCommand& c);
void from_json(const Json& j, ActuationCommand& c);

}  // namespace farmlight::edge
