#pragma once

#include <map>
#include <string>
#include <vector>

#include "multibreath/errors.hpp"

namespace mb {

// Flat key=value run configuration. Every tunable default lives here; a
// config file (lines `key = value`, # comments) is applied first, then
// command-line overrides. Unknown keys are errors in both paths.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  long get_long(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<long> get_long_list(const std::string& key) const;

  // resolved key=value text; feeding it back reproduces the run
  std::string resolved() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mb
