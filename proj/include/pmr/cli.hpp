#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace pmr::cli {

/// Every configuration key with its default value. Keys holding null must be
/// given by the user when the command needs them (sim.seed, train.seed).
nlohmann::json default_config();

/// Overlays `user` on the defaults. Unknown keys and type mismatches raise
/// ConfigError naming the dotted key path.
nlohmann::json merge_config(const nlohmann::json& user);

/// Dotted-path override ("train.lr_init=1e-3"). The value is parsed as JSON
/// when possible and taken as a string otherwise.
void set_key(nlohmann::json& config, const std::string& assignment);

/// Loads a config file and resolves its relative paths against the file's
/// directory.
nlohmann::json load_config(const std::filesystem::path& file);

/// Entry point shared by the executable and the tests. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pmr::cli
