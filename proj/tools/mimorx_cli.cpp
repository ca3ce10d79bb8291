// Command-line front end: dataset generation, training, and paired BER
// evaluation. Exit codes: 0 success, 1 configuration error, 2 runtime
// error, 3 training divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mimorx/train.hpp"

namespace fs = std::filesystem;
using namespace mimorx;

namespace {

struct GenerateArgs {
  std::string config_path, out_path;
  int64_t count = -1;
  std::optional<uint64_t> seed;
  std::optional<double> snr_min, snr_max;
  std::optional<std::string> pilot_symbols;
  int workers = 1;
  bool deterministic = false;
};

struct TrainArgs {
  std::string config_path, dataset_path, out_dir;
  std::optional<std::string> transform;
  std::optional<uint64_t> seed;
  std::string resume_base;
  int workers = 1;
  bool deterministic = false;
};

struct EvalArgs {
  std::string dataset_path, out_dir;
  std::vector<std::string> checkpoints;
  double bin_width = 2.0;
  int workers = 1;
  bool deterministic = false;
};

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t pos = 0;
      out.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("cannot parse integer list entry '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

int effective_workers(int requested, bool deterministic, const char* what) {
  if (deterministic && requested > 1) {
    std::cerr << "note: --deterministic forces a single worker\n";
    return 1;
  }
  if (requested > 1) {
    // Synthesis and training are single-threaded; the flag is accepted so
    // scripts carry it uniformly, but extra workers change nothing.
    std::cerr << "note: " << what << " runs single-worker; ignoring --workers "
              << requested << "\n";
    return 1;
  }
  if (requested < 1) throw ConfigError("--workers must be >= 1");
  return 1;
}

std::string pilot_config_label(const LinkConfig& link) {
  std::string s;
  for (size_t i = 0; i < link.pilot_symbols.size(); ++i) {
    if (i) s += '+';
    s += std::to_string(link.pilot_symbols[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------

void cmd_generate(const GenerateArgs& a) {
  if (a.count < 0) throw ConfigError("--count is required and must be >= 0");
  effective_workers(a.workers, a.deterministic, "generate");
  LinkConfig link = link_config_from_json(load_json_file(a.config_path));
  if (a.seed) link.seed = *a.seed;
  if (a.snr_min) link.snr_db_min = *a.snr_min;
  if (a.snr_max) link.snr_db_max = *a.snr_max;
  if (a.pilot_symbols) link.pilot_symbols = parse_int_list(*a.pilot_symbols);
  link.validate();

  auto profile = load_channel_profile(link.profile);
  DatasetWriter writer(a.out_path, link);
  std::map<int64_t, uint64_t> snr_hist;  // 2-dB bins
  for (int64_t i = 0; i < a.count; ++i) {
    TtiSample s = generate_tti(link, profile, static_cast<uint64_t>(i));
    writer.add(s);
    ++snr_hist[std::llround(s.snr_db / 2.0)];
  }
  writer.finish();

  const std::string hash = config_hash(link_config_to_json(link));
  std::printf("wrote %lld TTIs to %s\n", static_cast<long long>(a.count), a.out_path.c_str());
  std::printf("config_hash=%s tool_version=%s\n", hash.c_str(), kToolVersion);
  if (!snr_hist.empty()) {
    std::printf("snr histogram (2 dB bins):\n");
    for (const auto& [k, n] : snr_hist)
      std::printf("  %+6.1f dB: %llu\n", 2.0 * static_cast<double>(k),
                  static_cast<unsigned long long>(n));
  }
}

// ---------------------------------------------------------------------------

void cmd_train(const TrainArgs& a) {
  effective_workers(a.workers, a.deterministic, "train");
  const Json cfg_json = load_json_file(a.config_path);
  TrainConfig tc = train_config_from_json(cfg_json);
  if (a.seed) tc.seed = *a.seed;

  DatasetReader reader(a.dataset_path);
  const LinkConfig& link = reader.config();
  const std::string link_hash = config_hash(Json::parse(reader.config_json()));
  std::vector<StoredTti> data = reader.read_all();

  // Model hyperparameters come from the config's "transform" object (with
  // defaults); link-side dimensions always come from the dataset.
  Json tj = cfg_json.contains("transform") ? cfg_json.at("transform") : Json::object();
  if (a.transform) tj["kind"] = *a.transform;
  if (!tj.contains("kind")) tj["kind"] = "mrc";
  tj["n_tx"] = link.n_tx;
  tj["n_rx"] = link.n_rx;
  tj["n_bits"] = link.bits_per_layer_symbol();
  const TransformConfig transform = transform_config_from_json(tj);

  fs::create_directories(a.out_dir);
  const std::string base =
      (fs::path(a.out_dir) / transform_kind_to_string(transform.kind)).string();

  NeuralReceiver<float> model = NeuralReceiver<float>::init(transform, tc.seed);
  AdamState opt = make_adam_state(model.params);
  int64_t start_step = 0;
  if (!a.resume_base.empty()) {
    CheckpointMeta meta;
    model = load_receiver(a.resume_base, &meta, &opt);
    if (canonical_json(transform_config_to_json(meta.transform)) !=
        canonical_json(transform_config_to_json(transform)))
      throw ConfigError("checkpoint transform does not match the requested configuration");
    if (!meta.link_config_hash.empty() && meta.link_config_hash != link_hash)
      throw ConfigError("checkpoint was trained against a different link config (hash " +
                        meta.link_config_hash + " vs " + link_hash + ")");
    if (meta.train_seed != tc.seed)
      throw ConfigError("checkpoint seed " + std::to_string(meta.train_seed) +
                        " differs from configured seed " + std::to_string(tc.seed));
    start_step = meta.step;
    std::printf("resuming %s from step %lld\n", a.resume_base.c_str(),
                static_cast<long long>(start_step));
  }

  auto save_at = [&](int64_t step) {
    CheckpointMeta meta;
    meta.transform = transform;
    meta.step = step;
    meta.train_seed = tc.seed;
    meta.link_config_hash = link_hash;
    meta.tool_version = kToolVersion;
    save_receiver(base, model, meta, &opt);
  };

  TrainResult res = train(model, opt, data, link, tc, start_step, save_at);
  save_at(res.final_step);

  const std::string trace_path = (fs::path(a.out_dir) / "loss_trace.csv").string();
  std::ofstream trace(trace_path, std::ios::trunc);
  if (!trace) throw IoError("cannot write " + trace_path);
  trace << "# config_hash=" << link_hash << " tool_version=" << kToolVersion << "\n";
  write_loss_trace_csv(trace, res.trace);
  if (!trace) throw IoError("short write to " + trace_path);

  std::printf("trained %s to step %lld (last loss %.6g)\n",
              transform_kind_to_string(transform.kind).c_str(),
              static_cast<long long>(res.final_step),
              res.trace.empty() ? 0.0 : res.trace.back().total);
  std::printf("checkpoint: %s.drxw  trace: %s\n", base.c_str(), trace_path.c_str());
}

// ---------------------------------------------------------------------------

void write_curve_csv(std::ostream& os, const ReceiverCurve& curve, double bin_width,
                     const LinkConfig& link, const std::string& header_comment) {
  os << header_comment;
  write_ber_csv_header(os);
  // Every bin across the configured SNR range appears, zero-filled when the
  // dataset put no bits there, so curves stay aligned across receivers.
  const auto& bins = curve.record.bins();
  const int64_t lo =
      std::min<int64_t>(std::llround(link.snr_db_min / bin_width),
                        bins.empty() ? INT64_MAX : bins.begin()->first);
  const int64_t hi =
      std::max<int64_t>(std::llround(link.snr_db_max / bin_width),
                        bins.empty() ? INT64_MIN : bins.rbegin()->first);
  const std::string pilot = pilot_config_label(link);
  char buf[96];
  for (int64_t k = lo; k <= hi; ++k) {
    auto it = bins.find(k);
    const double center = static_cast<double>(k) * bin_width;
    const uint64_t err = it == bins.end() ? 0 : it->second.bit_errors;
    const uint64_t tot = it == bins.end() ? 0 : it->second.bit_total;
    const double ber = tot ? static_cast<double>(err) / static_cast<double>(tot) : 0.0;
    std::snprintf(buf, sizeof(buf), "%.6g,%llu,%llu,%.10g,", center,
                  static_cast<unsigned long long>(err), static_cast<unsigned long long>(tot), ber);
    os << buf << curve.receiver_id << ',' << pilot << '\n';
  }
}

void cmd_eval(const EvalArgs& a) {
  effective_workers(a.workers, a.deterministic, "eval");
  if (!(a.bin_width > 0)) throw ConfigError("--bin-width must be positive");

  DatasetReader reader(a.dataset_path);
  const LinkConfig link = reader.config();
  const std::string link_hash = config_hash(Json::parse(reader.config_json()));
  const std::string data_hash = file_hash_hex(a.dataset_path);
  std::vector<StoredTti> data = reader.read_all();

  std::vector<NeuralReceiver<float>> loaded;
  std::vector<std::string> ids;
  loaded.reserve(a.checkpoints.size());
  std::set<std::string> used;
  for (const auto& cp : a.checkpoints) {
    std::string base = cp;
    if (base.size() > 5 && base.substr(base.size() - 5) == ".drxw")
      base = base.substr(0, base.size() - 5);
    CheckpointMeta meta;
    loaded.push_back(load_receiver(base, &meta));
    std::string id = fs::path(base).filename().string();
    if (used.count(id)) id = fs::path(base).parent_path().filename().string() + "_" + id;
    int n = 2;
    while (used.count(id)) id = fs::path(base).filename().string() + "_" + std::to_string(n++);
    used.insert(id);
    ids.push_back(id);
  }
  std::vector<std::pair<std::string, const NeuralReceiver<float>*>> models;
  for (size_t i = 0; i < loaded.size(); ++i) models.emplace_back(ids[i], &loaded[i]);

  std::vector<ReceiverCurve> curves = evaluate(data, link, models, a.bin_width);

  fs::create_directories(a.out_dir);
  std::ostringstream hc;
  hc << "# config_hash=" << link_hash << " tool_version=" << kToolVersion
     << " dataset_hash=" << data_hash << "\n";
  const std::string header_comment = hc.str();

  for (const auto& curve : curves) {
    const std::string path = (fs::path(a.out_dir) / (curve.receiver_id + ".csv")).string();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path);
    write_curve_csv(os, curve, a.bin_width, link, header_comment);
    if (!os) throw IoError("short write to " + path);
  }
  const std::string merged_path = (fs::path(a.out_dir) / "comparison.csv").string();
  {
    std::ofstream os(merged_path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + merged_path);
    os << header_comment;
    write_ber_csv_header(os);
    for (const auto& curve : curves) {
      std::ostringstream one;
      write_curve_csv(one, curve, a.bin_width, link, "");
      std::istringstream in(one.str());
      std::string line;
      std::getline(in, line);  // skip the per-curve header
      while (std::getline(in, line)) os << line << '\n';
    }
    if (!os) throw IoError("short write to " + merged_path);
  }

  std::printf("evaluated %llu TTIs with %zu receivers; outputs in %s\n",
              static_cast<unsigned long long>(data.size()), curves.size(), a.out_dir.c_str());
  for (const auto& curve : curves)
    std::printf("  %-18s total BER %.6g\n", curve.receiver_id.c_str(), curve.record.total_ber());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIMO-OFDM receiver laboratory: dataset generation, training, evaluation"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Synthesize a TTI dataset");
  gen->add_option("--config", ga.config_path, "link config JSON")->required();
  gen->add_option("--out", ga.out_path, "output dataset path")->required();
  gen->add_option("--count", ga.count, "number of TTIs")->required();
  gen->add_option("--seed", ga.seed, "override link seed");
  gen->add_option("--snr-min", ga.snr_min, "override minimum SNR (dB)");
  gen->add_option("--snr-max", ga.snr_max, "override maximum SNR (dB)");
  gen->add_option("--pilot-symbols", ga.pilot_symbols, "comma list of pilot symbol indices");
  gen->add_option("--workers", ga.workers, "worker count");
  gen->add_flag("--deterministic", ga.deterministic, "force single-worker mode");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a neural receiver on a dataset");
  tr->add_option("--config", ta.config_path, "train config JSON")->required();
  tr->add_option("--dataset", ta.dataset_path, "dataset file")->required();
  tr->add_option("--out", ta.out_dir, "output directory")->required();
  tr->add_option("--transform", ta.transform, "transform kind: mrc or mult");
  tr->add_option("--seed", ta.seed, "override train seed");
  tr->add_option("--resume", ta.resume_base, "checkpoint base to resume from");
  tr->add_option("--workers", ta.workers, "worker count");
  tr->add_flag("--deterministic", ta.deterministic, "force single-worker mode");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Evaluate receivers on a dataset");
  ev->add_option("--dataset", ea.dataset_path, "dataset file")->required();
  ev->add_option("--out", ea.out_dir, "output directory")->required();
  ev->add_option("--checkpoint", ea.checkpoints, "checkpoint base path (repeatable)");
  ev->add_option("--bin-width", ea.bin_width, "SNR bin width in dB");
  ev->add_option("--workers", ea.workers, "worker count");
  ev->add_flag("--deterministic", ea.deterministic, "force single-worker mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) cmd_generate(ga);
    if (tr->parsed()) cmd_train(ta);
    if (ev->parsed()) cmd_eval(ea);
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
