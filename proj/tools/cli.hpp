#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "irpatch/config.hpp"
#include "irpatch/detect.hpp"

namespace irpatch::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "IRPATCH_CONFIG";

std::unique_ptr<Detector> make_detector(const DetectorSpec& spec);

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace irpatch::cli
