#pragma once

#include <memory>

#include "grail/envs.hpp"

namespace grail::detail {

std::unique_ptr<Env> make_ladderworld(const EnvSpec& spec);
std::unique_ptr<Env> make_diverworld(const EnvSpec& spec);
std::unique_ptr<Env> make_slalomworld(const EnvSpec& spec);

const StatusRegistry& ladderworld_status();
const StatusRegistry& diverworld_status();
const StatusRegistry& slalomworld_status();

double distance(const Object& a, const Object& b);

}  // namespace grail::detail
