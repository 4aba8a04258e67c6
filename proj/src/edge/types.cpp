#include "farmlight/edge/types.h"

#include "farmlight/errors.h"

namespace farmlight::edge {

std::string to_string(Action a) {
  switch (a) {
    case Action::spray: return "spray";
    case Action::irrigate: return "irrigate";
    case Action::none: return "none";
  }
  return "none";
}

Action action_from_string(const std::string& s) {
  if (s == "spray") return Action::spray;
  if (s == "irrigate") return Action::irrigate;
  if (s == "none") return Action::none;
  throw ContractViolation("unknown action '" + s + "'");
}

std::string to_string(CommandState s) {
  switch (s) {
    case CommandState::pending: return "pending";
    case CommandState::approved: return "approved";
    case CommandState::rejected: return "rejected";
    case CommandState::executed: return "executed";
  }
  return "pending";
}

CommandState command_state_from_string(const std::string& s) {
  if (s == "pending") return CommandState::pending;
  if (s == "approved") return CommandState::approved;
  if (s == "rejected") return CommandState::rejected;
  if (s == "executed") return CommandState::executed;
  throw ContractViolation("unknown command state '" + s + "'");
}

bool transition_allowed(CommandState from, CommandState to) {
  return (from == CommandState::pending &&
          (to == CommandState::approved || to == CommandState::rejected)) ||
         (from == CommandState::approved && to == CommandState::executed);
}

void to_json(Json& j, const Alert& a) {
  j = Json{{"alert_id", a.alert_id},
           {"obs_id", a.obs_id},
           {"sensor_id", a.sensor_id},
           {"location", a.location},
           {"class_id", a.class_id},
           {"class_name", a.class_name},
           {"confidence", a.confidence},
           {"recommendation", a.recommendation},
           {"urgency", to_string(a.urgency)},
           {"created_ms", a.created_ms},
           {"acked", a.acked},
           {"image_ref", a.image_ref}};
}

void from_json(const Json& j, Alert& a) {
  j.at("alert_id").get_to(a.alert_id);
  j.at("obs_id").get_to(a.obs_id);
  j.at("sensor_id").get_to(a.sensor_id);
  a.location = j.at("location").get<GeoPoint>();
  j.at("class_id").get_to(a.class_id);
  j.at("class_name").get_to(a.class_name);
  j.at("confidence").get_to(a.confidence);
  j.at("recommendation").get_to(a.recommendation);
  a.urgency = urgency_from_string(j.at("urgency").get<std::string>());
  j.at("created_ms").get_to(a.created_ms);
  j.at("acked").get_to(a.acked);
  j.at("image_ref").get_to(a.image_ref);
}

void to_json(Json& j, const ActuationCommand& c) {
  j = Json{{"command_id", c.command_id},
           {"alert_id", c.alert_id},
           {"action", to_string(c.action)},
           {"target_sensor_id", c.target_sensor_id},
           {"requires_approval", c.requires_approval},
           {"state", to_string(c.state)}};
}

void from_json(const Json& j, ActuationCommand& c) {
  j.at("command_id").get_to(c.command_id);
  j.at("alert_id").get_to(c.alert_id);
  c.action = action_from_string(j.at("action").get<std::string>());
  j.at("target_sensor_id").get_to(c.target_sensor_id);
  j.at("requires_approval").get_to(c.requires_approval);
  c.state = command_state_from_string(j.at("state").get<std::string>());
}

}  // namespace farmlight::edge
