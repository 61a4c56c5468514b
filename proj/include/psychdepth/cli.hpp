#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace psychdepth {

// Entry point of the psychdepth command line; args exclude the program name.
// Returns the process exit code. Module errors print a JSON error record on
// `err` (and to <out>/error.json when --out is known) and return 2.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Run metadata written next to every command's outputs: input hashes, seed,
// tool and prompt-asset versions.
nlohmann::json make_run_record(const std::string& command, const std::vector<std::filesystem::path>& inputs,
                               const nlohmann::json& seed, const nlohmann::json& extra = nlohmann::json::object());

std::string version();

}  // namespace psychdepth
