// JSON serialization for configuration structs, plus the canonical config
// hash recorded in output file headers.

#pragma once

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "mimorx/link_config.hpp"
#include "mimorx/rng.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

using Json = nlohmann::json;

inline Json link_config_to_json(const LinkConfig& c) {
  return Json{{"F", c.F},
              {"S", c.S},
              {"n_tx", c.n_tx},
              {"n_rx", c.n_rx},
              {"modulation", modulation_to_string(c.modulation)},
              {"pilot_symbols", c.pilot_symbols},
              {"cdm_group_size", c.cdm_group_size},
              {"snr_db_min", c.snr_db_min},
              {"snr_db_max", c.snr_db_max},
              {"profile", c.profile},
              {"delay_spread_s_min", c.delay_spread_s_min},
              {"delay_spread_s_max", c.delay_spread_s_max},
              {"doppler_hz_min", c.doppler_hz_min},
              {"doppler_hz_max", c.doppler_hz_max},
              {"scs_hz", c.scs_hz},
              {"symbol_duration_s", c.symbol_duration_s},
              {"store_h_true", c.store_h_true},
              {"seed", c.seed}};
}

inline LinkConfig link_config_from_json(const Json& j) {
  LinkConfig c;
  try {
    c.F = j.at("F").get<int>();
    c.S = j.at("S").get<int>();
    c.n_tx = j.at("n_tx").get<int>();
    c.n_rx = j.at("n_rx").get<int>();
    c.modulation = modulation_from_string(j.at("modulation").get<std::string>());
    c.pilot_symbols = j.at("pilot_symbols").get<std::vector<int>>();
    c.cdm_group_size = j.value("cdm_group_size", 2);
    c.snr_db_min = j.at("snr_db_min").get<double>();
    c.snr_db_max = j.at("snr_db_max").get<double>();
    c.profile = j.value("profile", std::string("tdl3"));
    c.delay_spread_s_min = j.at("delay_spread_s_min").get<double>();
    c.delay_spread_s_max = j.at("delay_spread_s_max").get<double>();
    c.doppler_hz_min = j.at("doppler_hz_min").get<double>();
    c.doppler_hz_max = j.at("doppler_hz_max").get<double>();
    c.scs_hz = j.at("scs_hz").get<double>();
    c.symbol_duration_s = j.at("symbol_duration_s").get<double>();
    c.store_h_true = j.value("store_h_true", true);
    c.seed = j.value("seed", static_cast<uint64_t>(1));
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad link config: ") + e.what());
  }
  c.validate();
  return c;
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
}

// Canonical text: nlohmann orders object keys, so dump() is stable.
inline std::string canonical_json(const Json& j) { return j.dump(); }

inline std::string config_hash(const Json& j) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash_str(canonical_json(j));
  return os.str();
}

inline constexpr const char* kToolVersion = "0.1.0";

// Streaming FNV-1a over a file's bytes, as 16 hex digits. Ties evaluation
// outputs to the exact dataset file they were computed from.
inline std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for hashing");
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (in) {
    in.read(buf, sizeof(buf));
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace mimorx
