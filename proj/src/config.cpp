#include "multibreath/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace mb {

namespace {

// the full key registry with defaults; unknown keys are rejected
const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> kDefaults = {
      {"seed", "0"},
      {"threads", "1"},
      {"loss_mode", "multilabel_bce"},

      {"backbone.widths", "64,128,256,512"},
      {"backbone.kernel", "5"},
      {"backbone.pad", "2"},

      {"head.num_heads", "1"},
      {"head.lambda", "0.1"},
      {"head.share_weights", "false"},
      {"head.sum_heads", "false"},
      {"head.tau", "0.5"},

      {"train.learning_rate", "0.001"},
      {"train.batch_size", "64"},
      {"train.epochs", "50"},
      {"train.eta_min", "0"},
      {"train.weight_decay", "0"},
      {"train.grad_clip", "0"},
      {"train.validation_fraction", "0"},

      {"masks.max_time_frames", "20"},
      {"masks.max_freq_bins", "40"},
      {"masks.num_per_axis", "1"},
      {"masks.fill_value", "0"},

      // recorded front-end choices; only the listed values are implemented
      {"mel.fmin_hz", "50"},
      {"mel.fmax_hz", "2000"},
      {"mel.window", "hann"},
      {"mel.edge_padding", "reflect"},
      {"mel.scale", "htk"},

      {"split.mode", "official"},
      {"split.ratio", "0.6"},

      {"synth.per_class_train", "100"},
      {"synth.per_class_test", "50"},
      {"synth.rate_hz", "8000"},
      {"synth.min_duration_s", "1.5"},
      {"synth.max_duration_s", "3.5"},
  };
  return kDefaults;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key: " + key);
  it->second = value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(line_no) +
                       ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const UsageError& e) {
      throw UsageError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key: " + key);
  return it->second;
}

long RunConfig::get_long(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw UsageError("config key " + key + ": '" + v + "' is not an integer");
  }
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw UsageError("config key " + key + ": '" + v + "' is not a number");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config key " + key + ": '" + v + "' is not a boolean");
}

std::vector<long> RunConfig::get_long_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<long> out;
  std::istringstream in(v);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      out.push_back(std::stol(trim(tok)));
    } catch (const std::exception&) {
      throw UsageError("config key " + key + ": '" + v +
                       "' is not a comma-separated integer list");
    }
  }
  if (out.empty())
    throw UsageError("config key " + key + ": empty list");
  return out;
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace mb
