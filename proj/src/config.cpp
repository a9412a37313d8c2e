#include "fiseclip/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fiseclip/error.hpp"

namespace fiseclip {

namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a finite number");
  }
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int i = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int(key, item));
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("seclip.tau must be positive");
  if (!(lambda > 0.0)) throw ConfigError("seclip.lambda must be positive");
  if (ficlip.scales.empty()) throw ConfigError("ficlip.scales must not be empty");
  std::set<int> seen;
  for (int r : ficlip.scales) {
    if (r < 1 || r % 2 == 0) throw ConfigError("ficlip.scales: " + std::to_string(r) + " is not a positive odd size");
    if (!seen.insert(r).second) throw ConfigError("ficlip.scales: duplicate " + std::to_string(r));
  }
  seen.clear();
  for (int i : ficlip.stage_layers) {
    if (!seen.insert(i).second) throw ConfigError("ficlip.stage_layers: duplicate " + std::to_string(i));
  }
  if (!(ficlip.mu >= 0.0 && ficlip.mu <= 1.0)) throw ConfigError("ficlip.mu must lie in [0,1]");
  if (!(ficlip.pool_floor_fraction > 0.0 && ficlip.pool_floor_fraction <= 1.0)) {
    throw ConfigError("ficlip.pool_floor_fraction must lie in (0,1]");
  }
  if (ficlip.threads < 0) throw ConfigError("run.threads must be >= 0");
  if (!(fusion.sigma >= 0.0)) throw ConfigError("fusion.sigma must be >= 0");
  if (!(fusion.weight >= 0.0 && fusion.weight <= 1.0)) throw ConfigError("fusion.fusion_weight must lie in [0,1]");
  if (!(fpr_cap > 0.0 && fpr_cap <= 1.0)) throw ConfigError("metrics.fpr_cap must lie in (0,1]");
  if (batch_size < 0) throw ConfigError("run.batch_size must be >= 0");
}

json RunConfig::to_json() const {
  return {
      {"proxy", {{"attention_source", attention_source}}},
      {"seclip", {{"tau", tau}, {"lambda", lambda}}},
      {"ficlip",
       {{"scales", ficlip.scales},
        {"stage_layers", ficlip.stage_layers},
        {"mu", ficlip.mu},
        {"vote_mode", to_string(ficlip.vote_mode)},
        {"filtering", ficlip.filtering},
        {"pool_floor_fraction", ficlip.pool_floor_fraction},
        {"distance", to_string(ficlip.distance)},
        {"loop_order", to_string(ficlip.loop_order)}}},
      {"fusion", {{"sigma", fusion.sigma}, {"fusion_weight", fusion.weight}}},
      {"metrics", {{"fpr_cap", fpr_cap}}},
      {"run", {{"batch_size", batch_size}, {"threads", ficlip.threads}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    c.attention_source = j.at("proxy").at("attention_source").get<std::string>();
    c.tau = j.at("seclip").at("tau").get<double>();
    c.lambda = j.at("seclip").at("lambda").get<double>();
    const auto& f = j.at("ficlip");
    c.ficlip.scales = f.at("scales").get<std::vector<int>>();
    c.ficlip.stage_layers = f.at("stage_layers").get<std::vector<int>>();
    c.ficlip.mu = f.at("mu").get<double>();
    c.ficlip.vote_mode = parse_vote_mode(f.at("vote_mode").get<std::string>());
    c.ficlip.filtering = f.at("filtering").get<bool>();
    c.ficlip.pool_floor_fraction = f.at("pool_floor_fraction").get<double>();
    c.ficlip.distance = parse_distance(f.at("distance").get<std::string>());
    c.ficlip.loop_order = parse_loop_order(f.at("loop_order").get<std::string>());
    c.fusion.sigma = j.at("fusion").at("sigma").get<double>();
    c.fusion.weight = j.at("fusion").at("fusion_weight").get<double>();
    c.fpr_cap = j.at("metrics").at("fpr_cap").get<double>();
    c.batch_size = j.at("run").at("batch_size").get<int>();
    c.ficlip.threads = j.at("run").at("threads").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed embedded config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  RunConfig c;
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
    for (const auto& [key, node] : keys) {
      const std::string full = section + "." + key;
      const std::string v = trim(node.data());
      if (full == "proxy.attention_source") {
        c.attention_source = v;
      } else if (full == "seclip.tau") {
        c.tau = to_double(full, v);
      } else if (full == "seclip.lambda") {
        c.lambda = to_double(full, v);
      } else if (full == "ficlip.scales") {
        c.ficlip.scales = to_int_list(full, v);
      } else if (full == "ficlip.stage_layers") {
        c.ficlip.stage_layers = to_int_list(full, v);
      } else if (full == "ficlip.mu") {
        c.ficlip.mu = to_double(full, v);
      } else if (full == "ficlip.vote_mode") {
        c.ficlip.vote_mode = parse_vote_mode(v);
      } else if (full == "ficlip.filtering") {
        c.ficlip.filtering = to_bool(full, v);
      } else if (full == "ficlip.pool_floor_fraction") {
        c.ficlip.pool_floor_fraction = to_double(full, v);
      } else if (full == "ficlip.distance") {
        c.ficlip.distance = parse_distance(v);
      } else if (full == "ficlip.loop_order") {
        c.ficlip.loop_order = parse_loop_order(v);
      } else if (full == "fusion.sigma") {
        c.fusion.sigma = to_double(full, v);
      } else if (full == "fusion.fusion_weight") {
        c.fusion.weight = to_double(full, v);
      } else if (full == "metrics.fpr_cap") {
        c.fpr_cap = to_double(full, v);
      } else if (full == "run.batch_size") {
        c.batch_size = to_int(full, v);
      } else if (full == "run.threads") {
        c.ficlip.threads = to_int(full, v);
      } else {
        throw ConfigError("unknown config key '" + full + "'");
      }
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config(text);
}

}  // namespace fiseclip
