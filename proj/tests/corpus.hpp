#pragma once

// Loads the shipped example systems for the test suites.

#include <string>

#include "flatforge/systemfile.hpp"

namespace flatforge::testing {

inline LoadedSystem load_corpus(const std::string& name) {
    return load_system(std::string(FLATFORGE_SYSTEMS_DIR) + "/" + name + ".fsys");
}

inline LoadedSystem vehicle() { return load_corpus("vehicle"); }
inline LoadedSystem academic() { return load_corpus("academic"); }
inline LoadedSystem vtol() { return load_corpus("vtol"); }

}  // namespace flatforge::testing
