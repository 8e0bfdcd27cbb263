#pragma once

#include "ceco/harness.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace ceco::cli {

// One experiment setting, addressable both as a "--flag" and as a
// "key = value" line in a config file.
struct ConfigKey {
    std::string key;
    std::string flag;
    std::string help;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

const std::vector<ConfigKey>& train_config_keys();

// Applies "key = value" lines to cfg. Unknown keys and bad values throw
// ParseError with the line number.
void apply_config_text(TrainConfig& cfg, std::istream& in);

void write_train_config(std::ostream& out, const TrainConfig& cfg);

} // namespace ceco::cli
