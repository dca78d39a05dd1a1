#pragma once

// End-to-end run: templates -> d'_E curves -> weights -> <d'> records, with
// every output written atomically under one output directory.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "foviq/detectability.hpp"
#include "foviq/io.hpp"
#include "foviq/stimulus.hpp"
#include "foviq/templates.hpp"
#include "foviq/weighting.hpp"

namespace foviq {

struct RunConfig {
  // Geometry and backgrounds
  double px_per_deg = 36.0;
  std::string bins = "auto";  // start:step:stop, or "auto" for 0..display diagonal in 1 dva steps
  std::size_t volume_w = 256, volume_h = 256, volume_d = 20;
  double noise_mean = 128.0;
  double noise_sd = 25.0;
  double noise_exponent = -2.8;
  double signal_amplitude = 83.0;
  double slice_thickness_px = 8.0;
  std::size_t window = 64;

  // Selections
  std::vector<std::string> models{"fcho", "fnpwe"};
  std::vector<std::string> signals{"mcalc", "mass"};
  std::vector<std::string> modalities{"2d", "3d"};
  std::vector<std::string> schemes{"avg", "dprime", "time"};

  // Methods
  std::string method = "fourier";     // d' route: empirical | analytic | fourier
  std::string covariance = "nps";     // FCHO channel covariance: nps | samples
  std::size_t covariance_samples = 0;  // 0 = ten times the channel count
  std::size_t trials = 1000;           // empirical d' only

  // Search timing
  double fixation_ms_2d = 250.0, response_s_2d = 3.16;
  double fixation_ms_3d = 500.0, response_s_3d = 22.62;
  std::size_t n_slices_3d = 100;
  std::size_t display_w = 0, display_h = 0;  // 0 = volume size

  // Paths and run control
  std::uint64_t seed = 0;
  std::string out_dir = "foviq-out";
  std::string templates_dir;  // load <model>_<signal>_<modality>.tset from here when present
  std::string fixation_log;   // needed by the et scheme
  bool save_templates = false;
  bool timestamp = true;

  Dims volume_dims() const { return {volume_w, volume_h, volume_d}; }
  std::size_t display_width() const { return display_w ? display_w : volume_w; }
  std::size_t display_height() const { return display_h ? display_h : volume_h; }

  std::vector<double> ecc_bins() const {
    return bins == "auto" ? display_bins(display_width(), display_height(), px_per_deg) : parse_bins(bins);
  }

  SearchTimingParams timing(Modality m) const {
    SearchTimingParams p;
    p.median_fixation_time_ms = m == Modality::TwoD ? fixation_ms_2d : fixation_ms_3d;
    p.median_response_time_s = m == Modality::TwoD ? response_s_2d : response_s_3d;
    p.n_slices = m == Modality::TwoD ? 1 : n_slices_3d;
    p.display_w = display_width();
    p.display_h = display_height();
    p.px_per_deg = px_per_deg;
    return p;
  }

  BackgroundModel background() const { return {volume_dims(), noise_mean, noise_sd, noise_exponent}; }

  SignalOptions signal_options() const {
    SignalOptions o;
    o.px_per_deg = px_per_deg;
    o.slice_thickness_px = slice_thickness_px;
    o.amplitude = signal_amplitude;
    return o;
  }

  void validate() const {
    if (!(px_per_deg > 0.0)) throw InvalidArgument("px_per_deg must be positive");
    validate_bins(ecc_bins());
    if (volume_w == 0 || volume_h == 0 || volume_d == 0) throw InvalidArgument("volume dims must be positive");
    if (!(noise_sd > 0.0)) throw InvalidArgument("noise sd must be positive");
    if (!(slice_thickness_px > 0.0)) throw InvalidArgument("slice_thickness_px must be positive");
    for (const auto& m : models) parse_observer_model(m);
    for (const auto& s : signals) parse_signal_kind(s);
    for (const auto& m : modalities) parse_modality(m);
    for (const auto& s : schemes) parse_weight_scheme(s);
    if (models.empty() || signals.empty() || modalities.empty() || schemes.empty())
      throw InvalidArgument("model, signal, modality and scheme selections must be non-empty");
    const DPrimeMethod dm = parse_dprime_method(method);
    if (dm == DPrimeMethod::Empirical && trials < 100) throw InvalidArgument("empirical d' needs trials >= 100");
    if (covariance != "nps" && covariance != "samples")
      throw InvalidArgument("covariance must be nps or samples, got '" + covariance + "'");
    for (Modality m : {Modality::TwoD, Modality::ThreeD}) timing(m).validate();
    if (!templates_dir.empty() && !std::filesystem::is_directory(templates_dir))
      throw InvalidArgument("templates_dir does not exist: " + templates_dir);
    if (!fixation_log.empty() && !std::filesystem::is_regular_file(fixation_log))
      throw InvalidArgument("fixation_log does not exist: " + fixation_log);
  }

  /// Sorted key=value lines of every setting that affects results.
  std::string canonical() const {
    auto list = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
      return s;
    };
    auto num = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    std::ostringstream o;
    o << "bins=" << bins << "\n"
      << "covariance=" << covariance << "\n"
      << "covariance_samples=" << covariance_samples << "\n"
      << "display=" << display_width() << "x" << display_height() << "\n"
      << "fixation_log=" << fixation_log << "\n"
      << "fixation_ms_2d=" << num(fixation_ms_2d) << "\n"
      << "fixation_ms_3d=" << num(fixation_ms_3d) << "\n"
      << "method=" << method << "\n"
      << "modalities=" << list(modalities) << "\n"
      << "models=" << list(models) << "\n"
      << "n_slices_3d=" << n_slices_3d << "\n"
      << "noise=" << num(noise_mean) << "," << num(noise_sd) << "," << num(noise_exponent) << "\n"
      << "px_per_deg=" << num(px_per_deg) << "\n"
      << "response_s_2d=" << num(response_s_2d) << "\n"
      << "response_s_3d=" << num(response_s_3d) << "\n"
      << "schemes=" << list(schemes) << "\n"
      << "seed=" << seed << "\n"
      << "signal_amplitude=" << num(signal_amplitude) << "\n"
      << "signals=" << list(signals) << "\n"
      << "slice_thickness_px=" << num(slice_thickness_px) << "\n"
      << "templates_dir=" << templates_dir << "\n"
      << "trials=" << trials << "\n"
      << "volume=" << volume_dims().str() << "\n"
      << "window=" << window << "\n";
    return o.str();
  }
};

/// 64-bit FNV-1a, hex.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

struct FigureOfMeritRecord {
  std::string model, signal, modality, scheme;
  double dprime = 0.0;
  std::string curve;    // path relative to the output directory
  std::string weights;  // same
  std::string timestamp;
  std::string config_hash;
  std::uint64_t seed = 0;
  friend bool operator==(const FigureOfMeritRecord&, const FigureOfMeritRecord&) = default;
};

inline std::string format_sig6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

enum class TableFormat { Csv, Json };

inline TableFormat parse_table_format(const std::string& s) {
  if (s == "csv") return TableFormat::Csv;
  if (s == "json") return TableFormat::Json;
  throw InvalidArgument("unknown table format '" + s + "' (expected csv|json)");
}

inline const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> cols{"model",       "signal", "modality", "scheme",   "dprime",
                                             "curve",       "weights", "seed",    "config_hash", "timestamp"};
  return cols;
}

inline std::string export_table(const std::vector<FigureOfMeritRecord>& records, TableFormat format) {
  if (records.empty()) throw InvalidArgument("export_table: no records");
  if (format == TableFormat::Csv) {
    std::string out;
    for (std::size_t i = 0; i < table_columns().size(); ++i) out += (i ? "," : "") + table_columns()[i];
    out += "\n";
    for (const auto& r : records)
      out += r.model + "," + r.signal + "," + r.modality + "," + r.scheme + "," + format_sig6(r.dprime) + "," +
             r.curve + "," + r.weights + "," + std::to_string(r.seed) + "," + r.config_hash + "," + r.timestamp +
             "\n";
    return out;
  }
  // Numbers go through the same 6-digit formatting as the CSV.
  std::string out = "[\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["signal"] = r.signal;
    j["modality"] = r.modality;
    j["scheme"] = r.scheme;
    j["dprime"] = std::stod(format_sig6(r.dprime));
    j["curve"] = r.curve;
    j["weights"] = r.weights;
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    j["timestamp"] = r.timestamp;
    out += "  " + j.dump() + (i + 1 < records.size() ? ",\n" : "\n");
  }
  return out + "]\n";
}

inline std::vector<FigureOfMeritRecord> import_table_json(const std::string& text) {
  const json j = parse_json(text, "record table");
  if (!j.is_array()) throw DataError("record table must be a JSON array");
  std::vector<FigureOfMeritRecord> out;
  try {
    for (const auto& r : j)
      out.push_back({r.at("model").get<std::string>(), r.at("signal").get<std::string>(),
                     r.at("modality").get<std::string>(), r.at("scheme").get<std::string>(),
                     r.at("dprime").get<double>(), r.at("curve").get<std::string>(),
                     r.at("weights").get<std::string>(), r.at("timestamp").get<std::string>(),
                     r.at("config_hash").get<std::string>(), r.at("seed").get<std::uint64_t>()});
  } catch (const json::exception& e) {
    throw DataError(std::string("record table: ") + e.what());
  }
  return out;
}

/// Recomputes every record's aggregate from its referenced curve and weights.
inline void verify_records(const std::vector<FigureOfMeritRecord>& records, const fs::path& base) {
  for (const auto& r : records) {
    const auto curve = curve_from_json(load_json(base / r.curve), r.curve);
    const auto weights = weights_from_json(load_json(base / r.weights), r.weights);
    const double d = aggregate_dprime(curve, weights);
    if (std::abs(d - r.dprime) > 1e-9 * std::max(1.0, std::abs(d)))
      throw NumericalFailure("record " + r.model + "/" + r.signal + "/" + r.modality + "/" + r.scheme +
                             " does not match its curve and weights");
  }
}

/// Exclusive hold on an output directory for the life of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".foviq.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f) throw DataError("output directory is in use (remove " + path_.string() + " if stale)");
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
};

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Background statistics for FCHO channel covariance per the config.
inline BackgroundStats template_background(const RunConfig& cfg, const SignalProfile& signal) {
  const BackgroundModel bg = cfg.background();
  if (cfg.covariance == "nps") return bg.nps_for(Modality::TwoD);
  const std::size_t side = template_window_side(signal, cfg.window);
  std::size_t n = cfg.covariance_samples;
  if (n == 0) {
    std::size_t channels = 0;
    for (double e : cfg.ecc_bins()) {
      try {
        channels = std::max(channels, gabor_channel_bank(e, cfg.px_per_deg, {side, side, 1}).size());
      } catch (const EmptyBankError&) {
      }
    }
    n = 10 * channels;
  }
  PatchSampler sampler(bg, {side, side, 1}, child_seed(cfg.seed, 0x7e3));
  std::vector<Volume> patches;
  for (std::size_t i = 0; i < n; ++i) patches.push_back(sampler.next());
  return patches;
}

/// Runs every requested model x signal x modality x scheme combination and
/// writes curves/, weights/, records.json and records.csv under cfg.out_dir.
inline std::vector<FigureOfMeritRecord> run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out(cfg.out_dir);
  DirectoryLock lock(out);
  const std::string hash = fnv1a_hex(cfg.canonical());
  const std::string stamp = cfg.timestamp ? utc_timestamp() : "";
  const auto bins = cfg.ecc_bins();
  const BackgroundModel bg = cfg.background();
  const DPrimeMethod method = parse_dprime_method(cfg.method);

  std::optional<FixationLog> log;
  if (!cfg.fixation_log.empty()) log = load_fixation_log(cfg.fixation_log);

  auto stage = [](const std::string& name, auto&& fn) {
    try {
      return fn();
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(name + ": " + e.what());
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(name + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(name + ": " + e.what());
    }
  };

  std::vector<FigureOfMeritRecord> records;
  for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
    const ObserverModel model = parse_observer_model(cfg.models[mi]);
    for (std::size_t si = 0; si < cfg.signals.size(); ++si) {
      const SignalProfile signal = stage("stimuli", [&] {
        return make_signal(parse_signal_kind(cfg.signals[si]), cfg.signal_options());
      });
      std::optional<BackgroundStats> tbg;
      for (std::size_t di = 0; di < cfg.modalities.size(); ++di) {
        const Modality modality = parse_modality(cfg.modalities[di]);
        const std::string tag = to_string(model) + "_" + to_string(signal.kind) + "_" + to_string(modality);

        const EccentricityTemplateSet set = stage("build-templates", [&] {
          if (!cfg.templates_dir.empty()) {
            const fs::path p = fs::path(cfg.templates_dir) / (tag + ".tset");
            if (fs::exists(p)) {
              auto s = load_template_set(p);
              if (s.ecc_bins != bins) throw DataError(p.string() + " uses different eccentricity bins");
              return s;
            }
          }
          if (!tbg && model == ObserverModel::Fcho) tbg = template_background(cfg, signal);
          TemplateOptions opt;
          opt.px_per_deg = cfg.px_per_deg;
          opt.window = cfg.window;
          auto s = build_template_set(model, signal, modality, model == ObserverModel::Fcho ? *tbg : BackgroundStats{Volume{}},
                                      bins, opt);
          if (cfg.save_templates) save_template_set(out / "templates" / (tag + ".tset"), s);
          return s;
        });

        const DPrimeCurve curve = stage("dprime-curve", [&] {
          const std::uint64_t seed = child_seed(cfg.seed, (mi * 16 + si) * 16 + di);
          return dprime_curve(set, signal, bg, method, cfg.trials, seed);
        });
        const std::string curve_ref = "curves/" + tag + ".json";
        save_json(out / curve_ref, to_json(curve));

        for (const auto& scheme_name : cfg.schemes) {
          const WeightScheme scheme = parse_weight_scheme(scheme_name);
          std::optional<WeightVector> wv = stage("weights", [&]() -> std::optional<WeightVector> {
            switch (scheme) {
              case WeightScheme::Average: return average_weights(bins);
              case WeightScheme::DPrimeWeighted: return dprime_weights(curve);
              case WeightScheme::TimeClosest: return time_closest_fix_weights(cfg.timing(modality), modality, bins);
              case WeightScheme::EtClosest: {
                if (!log) {
                  warn("et scheme skipped for " + tag + ": no fixation log supplied");
                  return std::nullopt;
                }
                FixationLog sub;
                for (const auto& t : log->trials)
                  if (t.modality == modality) sub.trials.push_back(t);
                return et_closest_fix_weights(sub, bins, cfg.px_per_deg);
              }
            }
            return std::nullopt;
          });
          if (!wv) continue;
          const std::string weights_ref = "weights/" + tag + "_" + scheme_name + ".json";
          save_json(out / weights_ref, to_json(*wv));
          records.push_back({to_string(model), to_string(signal.kind), to_string(modality), scheme_name,
                             aggregate_dprime(curve, *wv), curve_ref, weights_ref, stamp, hash, cfg.seed});
        }
      }
    }
  }
  if (records.empty()) throw InvalidArgument("pipeline produced no records");
  stage("fom", [&] {
    verify_records(records, out);
    write_file_atomic(out / "records.csv", export_table(records, TableFormat::Csv));
    write_file_atomic(out / "records.json", export_table(records, TableFormat::Json));
    write_file_atomic(out / "config.txt", cfg.canonical());
    return 0;
  });
  return records;
}

}  // namespace foviq
