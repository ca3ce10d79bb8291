// TTI dataset files, magic "DRXM".
//
// Layout (all integers and floats little-endian):
//   "DRXM" | u32 version | u64 config_len | config JSON | u64 count |
//   u8 store_h_true | per TTI:
//     Y real plane f32[F*S*N_R], Y imag plane f32[F*S*N_R],
//     u8 raw-estimate slot flag (always 0; reserved),
//     tx_bits packed LSB-first, data mask packed LSB-first,
//     f32 snr_db,
//     [H real plane, H imag plane f32[F*S*N_R*N_T] when store_h_true]
//
// Pilot sequences are not stored: they are reproducible from the config
// seed and the TTI's position in the file.

#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mimorx/config_io.hpp"
#include "mimorx/link_config.hpp"
#include "mimorx/tti.hpp"

namespace mimorx {

namespace detail {

inline void write_u32(std::ostream& o, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  o.write(b, 4);
}
inline void write_u64(std::ostream& o, uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  o.write(b, 8);
}
inline void write_f32(std::ostream& o, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  o.write(b, 4);
}
inline uint32_t read_u32(std::istream& i) {
  char b[4];
  i.read(b, 4);
  uint32_t v;
  std::memcpy(&v, b, 4);
  return v;
}
inline uint64_t read_u64(std::istream& i) {
  char b[8];
  i.read(b, 8);
  uint64_t v;
  std::memcpy(&v, b, 8);
  return v;
}
inline float read_f32(std::istream& i) {
  char b[4];
  i.read(b, 4);
  float v;
  std::memcpy(&v, b, 4);
  return v;
}

static_assert(sizeof(float) == 4, "IEEE 754 single precision required");

inline void write_f32_plane(std::ostream& o, const std::vector<float>& v) {
  o.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline void read_f32_plane(std::istream& i, std::vector<float>& v, size_t n) {
  v.resize(n);
  i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
}

inline std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& bits) {
  std::vector<uint8_t> out((bits.size() + 7) / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) out[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  return out;
}

inline std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bytes, size_t n) {
  std::vector<uint8_t> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = (bytes[i / 8] >> (i % 8)) & 1;
  return out;
}

}  // namespace detail

// A TTI as stored on disk (32-bit planes).
struct StoredTti {
  Tensor<float> y;                 // [F, S, N_R]
  std::vector<uint8_t> tx_bits;    // unpacked 0/1, [F*S*N_T*N_b]
  std::vector<uint8_t> data_mask;  // unpacked 0/1, [F*S]
  float snr_db = 0;
  Tensor<float> h_true;            // empty unless stored

  float snr_linear() const { return std::pow(10.0f, snr_db / 10.0f); }
};

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, const LinkConfig& cfg) : cfg_(cfg) {
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open dataset file for writing: " + path);
    out_.write("DRXM", 4);
    detail::write_u32(out_, 1);
    const std::string cj = canonical_json(link_config_to_json(cfg));
    detail::write_u64(out_, cj.size());
    out_.write(cj.data(), static_cast<std::streamsize>(cj.size()));
    count_pos_ = out_.tellp();
    detail::write_u64(out_, 0);
    out_.put(cfg.store_h_true ? 1 : 0);
  }

  void add(const TtiSample& s) {
    auto yf = s.y.cast<float>();
    detail::write_f32_plane(out_, yf.re);
    detail::write_f32_plane(out_, yf.im);
    out_.put(0);  // raw-estimate slot, unused
    auto bits = detail::pack_bits(s.tx_bits);
    out_.write(reinterpret_cast<const char*>(bits.data()),
               static_cast<std::streamsize>(bits.size()));
    auto mask = detail::pack_bits(s.data_mask);
    out_.write(reinterpret_cast<const char*>(mask.data()),
               static_cast<std::streamsize>(mask.size()));
    detail::write_f32(out_, static_cast<float>(s.snr_db));
    if (cfg_.store_h_true) {
      if (!s.h_true.is_complex()) throw IoError("dataset expects H_true but sample lacks it");
      auto hf = s.h_true.cast<float>();
      detail::write_f32_plane(out_, hf.re);
      detail::write_f32_plane(out_, hf.im);
    }
    ++count_;
  }

  void finish() {
    out_.seekp(count_pos_);
    detail::write_u64(out_, count_);
    out_.flush();
    if (!out_) throw IoError("dataset write failed");
    out_.close();
  }

 private:
  LinkConfig cfg_;
  std::ofstream out_;
  std::streampos count_pos_;
  uint64_t count_ = 0;
};

class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw IoError("cannot open dataset file " + path);
    char magic[4];
    in_.read(magic, 4);
    if (!in_ || std::memcmp(magic, "DRXM", 4) != 0)
      throw IoError(path + " is not a dataset file (bad magic)");
    const uint32_t version = detail::read_u32(in_);
    if (version != 1) throw IoError("unsupported dataset version " + std::to_string(version));
    const uint64_t clen = detail::read_u64(in_);
    std::string cj(clen, '\0');
    in_.read(cj.data(), static_cast<std::streamsize>(clen));
    cfg_ = link_config_from_json(Json::parse(cj));
    config_json_ = cj;
    count_ = detail::read_u64(in_);
    store_h_ = in_.get() == 1;
    if (!in_) throw IoError("truncated dataset header in " + path);
  }

  const LinkConfig& config() const { return cfg_; }
  uint64_t count() const { return count_; }
  bool has_h_true() const { return store_h_; }
  const std::string& config_json() const { return config_json_; }

  // Reads the next TTI (sequential access).
  StoredTti next() {
    if (read_ >= count_) throw IoError("dataset read past end");
    StoredTti t;
    const size_t ny = static_cast<size_t>(cfg_.F) * cfg_.S * cfg_.n_rx;
    t.y.shape = {cfg_.F, cfg_.S, cfg_.n_rx};
    detail::read_f32_plane(in_, t.y.re, ny);
    detail::read_f32_plane(in_, t.y.im, ny);
    in_.get();  // raw-estimate slot
    const size_t nbits =
        static_cast<size_t>(cfg_.F) * cfg_.S * cfg_.n_tx * cfg_.bits_per_layer_symbol();
    std::vector<uint8_t> packed((nbits + 7) / 8);
    in_.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    t.tx_bits = detail::unpack_bits(packed, nbits);
    const size_t nmask = static_cast<size_t>(cfg_.F) * cfg_.S;
    std::vector<uint8_t> mpacked((nmask + 7) / 8);
    in_.read(reinterpret_cast<char*>(mpacked.data()),
             static_cast<std::streamsize>(mpacked.size()));
    t.data_mask = detail::unpack_bits(mpacked, nmask);
    t.snr_db = detail::read_f32(in_);
    if (store_h_) {
      const size_t nh = ny * static_cast<size_t>(cfg_.n_tx);
      t.h_true.shape = {cfg_.F, cfg_.S, cfg_.n_rx, cfg_.n_tx};
      detail::read_f32_plane(in_, t.h_true.re, nh);
      detail::read_f32_plane(in_, t.h_true.im, nh);
    }
    if (!in_) throw IoError("truncated dataset record in " + path_);
    ++read_;
    return t;
  }

  std::vector<StoredTti> read_all() {
    std::vector<StoredTti> all;
    all.reserve(count_ - read_);
    while (read_ < count_) all.push_back(next());
    return all;
  }

 private:
  std::string path_;
  std::ifstream in_;
  LinkConfig cfg_;
  std::string config_json_;
  uint64_t count_ = 0;
  bool store_h_ = false;
  uint64_t read_ = 0;
};

}  // namespace mimorx
