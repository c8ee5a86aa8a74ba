#pragma once

// Sectioned text formats: system files (model + flat output +
// parameterization + domain) and controller records (system + gains +
// Brunovsky form + control law).

#include <filesystem>
#include <iosfwd>

#include "flatforge/simkit.hpp"

namespace flatforge {

struct LoadedSystem {
    ControlSystem sys;
    FlatSpec spec;
};

// Parses and validates a system file.  Parse errors carry the line number;
// validation failures name the violated invariant.
LoadedSystem load_system(const std::filesystem::path& path, std::mt19937_64& rng);
LoadedSystem load_system(const std::filesystem::path& path);  // fixed validation seed

// Parses from text (same format); `origin` is used in error messages.
LoadedSystem parse_system_text(const std::string& text, const std::string& origin,
                               std::mt19937_64& rng);

void save_system(const LoadedSystem& ls, std::ostream& os);
std::string system_to_string(const LoadedSystem& ls);

struct ControllerFile {
    LoadedSystem model;
    Controller ctrl;
};

void save_controller(const ControllerFile& cf, std::ostream& os);
ControllerFile load_controller(const std::filesystem::path& path, std::mt19937_64& rng);

}  // namespace flatforge
