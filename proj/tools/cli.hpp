#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maris::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Runs the `maris` command line; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Subcommand names in declaration order.
std::vector<std::string> subcommands();

struct FlagDoc {
  std::string name;         // e.g. "--seed"
  std::string description;
};

/// Every flag a subcommand accepts, as registered with the parser.
std::vector<FlagDoc> flags_of(const std::string& subcommand);
/// The --help text of a subcommand.
std::string help_text(const std::string& subcommand);

}  // namespace maris::cli
