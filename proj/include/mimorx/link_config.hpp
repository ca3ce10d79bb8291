// Link-level simulation parameters for one TTI grid.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mimorx/modulation.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

struct LinkConfig {
  int F = 48;   // subcarriers
  int S = 14;   // OFDM symbols per TTI
  int n_tx = 2;  // transmission layers
  int n_rx = 4;  // receive antennas
  Modulation modulation = Modulation::kQpsk;
  std::vector<int> pilot_symbols = {2};  // 0-based symbol indices
  int cdm_group_size = 2;
  double snr_db_min = -4.0;
  double snr_db_max = 20.0;
  std::string profile = "tdl3";
  double delay_spread_s_min = 10e-9;
  double delay_spread_s_max = 300e-9;
  double doppler_hz_min = 0.0;
  double doppler_hz_max = 100.0;
  double scs_hz = 30e3;            // subcarrier spacing
  double symbol_duration_s = 35.7e-6;
  bool store_h_true = true;        // keep the genie channel in samples/datasets
  uint64_t seed = 1;

  int bits_per_layer_symbol() const { return bits_per_symbol(modulation); }

  void validate() const {
    if (F < 2 || S < 1) throw ConfigError("grid must be at least 2 subcarriers by 1 symbol");
    if (n_tx < 1 || n_rx < 1) throw ConfigError("antenna counts must be positive");
    if (cdm_group_size != 2) throw ConfigError("only cdm_group_size = 2 is supported");
    if (n_tx % cdm_group_size != 0)
      throw ConfigError("layer count must be even so layers pair into CDM groups");
    if (pilot_symbols.empty()) throw ConfigError("at least one pilot symbol required");
    for (int p : pilot_symbols)
      if (p < 0 || p >= S) throw ConfigError("pilot symbol index outside [0, S)");
    for (size_t i = 1; i < pilot_symbols.size(); ++i)
      if (pilot_symbols[i] <= pilot_symbols[i - 1])
        throw ConfigError("pilot symbol indices must be strictly increasing");
    if (static_cast<int>(pilot_symbols.size()) >= S)
      throw ConfigError("pilot symbols must leave at least one data symbol");
    if (snr_db_min > snr_db_max) throw ConfigError("snr_db_min exceeds snr_db_max");
    if (delay_spread_s_min < 0 || delay_spread_s_min > delay_spread_s_max)
      throw ConfigError("invalid delay spread range");
    if (doppler_hz_min < 0 || doppler_hz_min > doppler_hz_max)
      throw ConfigError("invalid Doppler range");
    if (scs_hz <= 0 || symbol_duration_s <= 0)
      throw ConfigError("subcarrier spacing and symbol duration must be positive");
  }
};

}  // namespace mimorx
