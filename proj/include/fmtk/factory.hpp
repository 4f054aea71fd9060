#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fmtk/core.hpp"

namespace fmtk {

class Backbone;

struct ComponentType {
  ComponentKind kind;
  std::string type;
  std::string summary;
};

// Every component type the toolkit can build from config.
const std::vector<ComponentType>& component_types();

// Builds a component from its type id and config object. Adapters are not
// built here: they need a backbone (see LoraAdapter::attach/from_config).
std::shared_ptr<Component> make_component(ComponentKind kind, const std::string& type,
                                          const json& cfg, const std::string& name);

}  // namespace fmtk
