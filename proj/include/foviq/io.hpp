#pragma once

// File formats.
//   .vol   one JSON header line, then little-endian float32 or float64 voxels
//          (x fastest). Trial fields in the header are optional.
//   .tset  one JSON manifest line, then each bin's template as float64.
//   curves, weights, fit inputs: JSON; fixation logs and verdicts: JSON Lines.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "foviq/detectability.hpp"
#include "foviq/error.hpp"
#include "foviq/fit.hpp"
#include "foviq/fsm.hpp"
#include "foviq/stimulus.hpp"
#include "foviq/templates.hpp"
#include "foviq/weighting.hpp"

namespace foviq {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Writes via a temporary sibling and renames, so readers never see a partial file.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + what + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Raw voxel blocks

namespace detail {

inline void append_values(std::string& out, std::span<const double> v, bool float64) {
  if (float64) {
    const std::size_t off = out.size();
    out.resize(off + v.size() * 8);
    std::memcpy(out.data() + off, v.data(), v.size() * 8);
  } else {
    const std::size_t off = out.size();
    out.resize(off + v.size() * 4);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v[i]);
      std::memcpy(out.data() + off + 4 * i, &f, 4);
    }
  }
}

inline std::vector<double> read_values(const std::string& bytes, std::size_t& pos, std::size_t n, bool float64,
                                       const std::string& what) {
  const std::size_t width = float64 ? 8 : 4;
  if (bytes.size() < pos + n * width)
    throw DataError(what + ": truncated data (" + std::to_string(bytes.size() - pos) + " bytes for " +
                    std::to_string(n) + " voxels)");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (float64) {
      std::memcpy(&v[i], bytes.data() + pos + 8 * i, 8);
    } else {
      float f;
      std::memcpy(&f, bytes.data() + pos + 4 * i, 4);
      v[i] = f;
    }
  }
  pos += n * width;
  return v;
}

inline bool dtype_is_float64(const std::string& dtype, const std::string& what) {
  if (dtype == "float32") return false;
  if (dtype == "float64") return true;
  throw DataError(what + ": unsupported dtype '" + dtype + "'");
}

inline std::pair<json, std::size_t> split_header(const std::string& bytes, const std::string& what) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError(what + ": missing header line");
  return {parse_json(bytes.substr(0, nl), what), nl + 1};
}

inline json dims_json(Dims d) { return json::array({d.w, d.h, d.d}); }

inline Dims dims_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw DataError(what + ": dims must be [w,h,d]");
  Dims d{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
  if (d.size() == 0) throw DataError(what + ": empty dims");
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Volumes and trials

/// `extra` header fields (e.g. mean, sd, exponent, seed of the background) are
/// written alongside the required ones.
inline std::string encode_trial(const TrialStimulus& t, bool float64 = false, const json& extra = json::object()) {
  json h = extra.is_object() ? extra : json::object();
  h["dims"] = detail::dims_json(t.data.dims());
  h["dtype"] = float64 ? "float64" : "float32";
  h["modality"] = to_string(t.modality);
  h["signal_present"] = t.signal_present;
  if (!t.trial_id.empty()) h["trial_id"] = t.trial_id;
  if (t.signal_location)
    h["signal_xyz"] = json::array({t.signal_location->x, t.signal_location->y, t.signal_location->z});
  std::string out = h.dump() + "\n";
  detail::append_values(out, t.data.values(), float64);
  return out;
}

inline TrialStimulus decode_trial(const std::string& bytes, const std::string& what) {
  auto [h, pos] = detail::split_header(bytes, what);
  TrialStimulus t;
  const Dims dims = detail::dims_from(h.value("dims", json()), what);
  const bool f64 = detail::dtype_is_float64(h.value("dtype", std::string("float32")), what);
  t.data = Volume(dims, detail::read_values(bytes, pos, dims.size(), f64, what));
  if (pos != bytes.size()) throw DataError(what + ": trailing bytes after voxel data");
  t.modality = h.contains("modality") ? parse_modality(h["modality"].get<std::string>())
                                      : (dims.d == 1 ? Modality::TwoD : Modality::ThreeD);
  t.signal_present = h.value("signal_present", false);
  t.trial_id = h.value("trial_id", std::string());
  if (h.contains("signal_xyz")) {
    const auto& s = h["signal_xyz"];
    if (!s.is_array() || s.size() != 3) throw DataError(what + ": signal_xyz must be [x,y,z]");
    t.signal_location = Location{s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::size_t>()};
  }
  if (t.signal_present && !t.signal_location) throw DataError(what + ": signal-present trial without signal_xyz");
  return t;
}

inline void save_trial(const fs::path& path, const TrialStimulus& t, bool float64 = false,
                       const json& extra = json::object()) {
  write_file_atomic(path, encode_trial(t, float64, extra));
}

inline TrialStimulus load_trial(const fs::path& path) { return decode_trial(read_file(path), path.string()); }

/// All .vol files of a directory in lexicographic order.
inline std::vector<fs::path> list_volumes(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".vol") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Template sets

inline json template_manifest(const EccentricityTemplateSet& s) {
  json m;
  m["format"] = "foviq-tset-1";
  m["model"] = to_string(s.model);
  m["signal"] = to_string(s.signal);
  m["modality"] = to_string(s.modality);
  m["ecc_bins"] = s.ecc_bins;
  m["internal_noise_K"] = s.internal_noise_K;
  m["px_per_deg"] = s.px_per_deg;
  m["slice_thickness_px"] = s.slice_thickness_px;
  m["window"] = detail::dims_json(s.window);
  m["template_dims"] = detail::dims_json(s.template_dims());
  m["gabor"] = {{"foveal_freqs", s.gabor.foveal_freqs},
                {"orientations", s.gabor.orientations},
                {"bandwidth_octaves", s.gabor.bandwidth_octaves},
                {"min_freq", s.gabor.min_freq}};
  m["eye"] = {{"alpha", s.eye.alpha}, {"beta", s.eye.beta}, {"gamma", s.eye.gamma}, {"n", s.eye.n}};
  json stats = json::array();
  for (const auto& b : s.bin_stats) stats.push_back({{"mu_n", b.mu_n}, {"sigma_ext", b.sigma_ext}, {"dprime", b.dprime}});
  m["bin_stats"] = stats;
  m["dtype"] = "float64";
  return m;
}

inline std::string encode_template_set(const EccentricityTemplateSet& s) {
  if (s.templates.size() != s.bins()) throw InvalidArgument("template set must hold one template per bin");
  std::string out = template_manifest(s).dump() + "\n";
  for (const auto& t : s.templates) detail::append_values(out, t.values(), true);
  return out;
}

inline EccentricityTemplateSet decode_template_set(const std::string& bytes, const std::string& what) {
  auto [m, pos] = detail::split_header(bytes, what);
  if (m.value("format", std::string()) != "foviq-tset-1") throw DataError(what + ": not a template set");
  try {
    EccentricityTemplateSet s;
    s.model = parse_observer_model(m.at("model").get<std::string>());
    s.signal = parse_signal_kind(m.at("signal").get<std::string>());
    s.modality = parse_modality(m.at("modality").get<std::string>());
    s.ecc_bins = m.at("ecc_bins").get<std::vector<double>>();
    validate_bins(s.ecc_bins);
    s.internal_noise_K = m.at("internal_noise_K").get<double>();
    s.px_per_deg = m.at("px_per_deg").get<double>();
    s.slice_thickness_px = m.at("slice_thickness_px").get<double>();
    s.window = detail::dims_from(m.at("window"), what);
    const Dims td = detail::dims_from(m.at("template_dims"), what);
    const auto& g = m.at("gabor");
    s.gabor.foveal_freqs = g.at("foveal_freqs").get<std::vector<double>>();
    s.gabor.orientations = g.at("orientations").get<int>();
    s.gabor.bandwidth_octaves = g.at("bandwidth_octaves").get<double>();
    s.gabor.min_freq = g.at("min_freq").get<double>();
    const auto& e = m.at("eye");
    s.eye = {e.at("alpha").get<double>(), e.at("beta").get<double>(), e.at("gamma").get<double>(),
             e.at("n").get<double>()};
    for (const auto& b : m.at("bin_stats"))
      s.bin_stats.push_back({b.at("mu_n").get<double>(), b.at("sigma_ext").get<double>(), b.at("dprime").get<double>()});
    if (!s.bin_stats.empty() && s.bin_stats.size() != s.bins())
      throw DataError(what + ": bin_stats length does not match ecc_bins");
    for (std::size_t b = 0; b < s.bins(); ++b)
      s.templates.emplace_back(td, detail::read_values(bytes, pos, td.size(), true, what));
    if (pos != bytes.size()) throw DataError(what + ": trailing bytes after templates");
    return s;
  } catch (const json::exception& ex) {
    throw DataError(what + ": bad manifest: " + ex.what());
  }
}

inline void save_template_set(const fs::path& path, const EccentricityTemplateSet& s) {
  write_file_atomic(path, encode_template_set(s));
}

inline EccentricityTemplateSet load_template_set(const fs::path& path) {
  return decode_template_set(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Curves and weights

inline json to_json(const DPrimeCurve& c) {
  return {{"model", to_string(c.model)},   {"signal", to_string(c.signal)}, {"modality", to_string(c.modality)},
          {"method", to_string(c.method)}, {"bins", c.ecc_bins},            {"dprime", c.dprime},
          {"n_trials", c.n_trials},        {"seed", c.seed}};
}

inline DPrimeCurve curve_from_json(const json& j, const std::string& what) {
  try {
    DPrimeCurve c;
    c.model = parse_observer_model(j.at("model").get<std::string>());
    c.signal = parse_signal_kind(j.at("signal").get<std::string>());
    c.modality = parse_modality(j.at("modality").get<std::string>());
    c.method = parse_dprime_method(j.at("method").get<std::string>());
    c.ecc_bins = (j.contains("bins") ? j.at("bins") : j.at("ecc_bins")).get<std::vector<double>>();
    c.dprime = j.at("dprime").get<std::vector<double>>();
    c.n_trials = j.value("n_trials", std::size_t{0});
    c.seed = j.value("seed", std::uint64_t{0});
    if (c.ecc_bins.size() != c.dprime.size()) throw DataError(what + ": bins and dprime differ in length");
    return c;
  } catch (const json::exception& e) {
    throw DataError(what + ": bad curve: " + e.what());
  }
}

inline json to_json(const WeightVector& w) {
  return {{"scheme", to_string(w.scheme)}, {"ecc_bins", w.ecc_bins}, {"weights", w.weights},
          {"provenance", w.provenance}};
}

inline WeightVector weights_from_json(const json& j, const std::string& what) {
  try {
    WeightVector w;
    w.scheme = parse_weight_scheme(j.at("scheme").get<std::string>());
    w.ecc_bins = j.at("ecc_bins").get<std::vector<double>>();
    w.weights = j.at("weights").get<std::vector<double>>();
    w.provenance = j.value("provenance", std::string());
    if (w.ecc_bins.size() != w.weights.size()) throw DataError(what + ": ecc_bins and weights differ in length");
    return w;
  } catch (const json::exception& e) {
    throw DataError(what + ": bad weights: " + e.what());
  }
}

inline void save_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

inline json load_json(const fs::path& path) { return parse_json(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Fixation logs (JSON Lines, one trial per line)

inline FixationLog parse_fixation_log(const std::string& text, const std::string& what) {
  FixationLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = what + ":" + std::to_string(lineno);
    const json j = parse_json(line, where);
    try {
      FixationTrial t;
      t.trial_id = j.at("trial_id").is_string() ? j.at("trial_id").get<std::string>() : j.at("trial_id").dump();
      t.modality = parse_modality(j.at("modality").get<std::string>());
      t.signal_present = j.at("signal_present").get<bool>();
      if (j.contains("signal_xyz") && !j["signal_xyz"].is_null()) {
        const auto v = j["signal_xyz"].get<std::vector<double>>();
        if (v.size() != 3) throw DataError(where + ": signal_xyz must have 3 entries");
        t.signal_xyz = std::array<double, 3>{v[0], v[1], v[2]};
      }
      for (const auto& f : j.at("fixations")) {
        RecordedFixation r;
        if (f.is_array()) {
          if (f.size() < 2 || f.size() > 4) throw DataError(where + ": fixation must be [x,y,slice,dur_ms]");
          r.x = f[0].get<double>();
          r.y = f[1].get<double>();
          if (f.size() > 2) r.slice = f[2].get<std::size_t>();
          if (f.size() > 3) r.duration_ms = f[3].get<double>();
        } else {
          r.x = f.at("x").get<double>();
          r.y = f.at("y").get<double>();
          r.slice = f.value("slice", std::size_t{0});
          r.duration_ms = f.value("duration_ms", 0.0);
        }
        if (r.x < 0 || r.y < 0) throw DataError(where + ": negative fixation coordinate");
        t.fixations.push_back(r);
      }
      if (t.signal_present && !t.signal_xyz) throw DataError(where + ": signal-present trial without signal_xyz");
      log.trials.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return log;
}

inline FixationLog load_fixation_log(const fs::path& path) {
  return parse_fixation_log(read_file(path), path.string());
}

inline std::string encode_fixation_log(const FixationLog& log) {
  std::string out;
  for (const auto& t : log.trials) {
    json j{{"trial_id", t.trial_id}, {"modality", to_string(t.modality)}, {"signal_present", t.signal_present}};
    j["signal_xyz"] = t.signal_xyz ? json(*t.signal_xyz) : json(nullptr);
    json fx = json::array();
    for (const auto& f : t.fixations)
      fx.push_back(json::array({f.x, f.y, f.slice, f.duration_ms}));
    j["fixations"] = fx;
    out += j.dump() + "\n";
  }
  return out;
}

/// Scanpaths from a fixation log, keyed by trial id.
inline std::map<std::string, Scanpath> scanpaths_from_log(const FixationLog& log) {
  std::map<std::string, Scanpath> out;
  for (const auto& t : log.trials) {
    Scanpath sp;
    for (const auto& f : t.fixations) sp.fixations.push_back({f.x, f.y, f.slice});
    out[t.trial_id] = std::move(sp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verdicts (JSON Lines)

inline std::string encode_verdicts(std::span<const TrialVerdict> verdicts) {
  std::string out;
  for (const auto& v : verdicts) {
    json j{{"trial_id", v.trial_id},
           {"decision", v.decision},
           {"max_lr", v.max_lr},
           {"log_max_lr", v.log_max_lr},
           {"argmax", json::array({v.argmax.x, v.argmax.y, v.argmax.z})},
           {"truth", v.truth}};
    if (!v.per_fixation_trace.empty()) j["per_fixation_trace"] = v.per_fixation_trace;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fit inputs

/// Reference file: {"points": [{"signal","modality","human_dprime","stderr"}, ...]}
inline std::vector<ReferencePoint> references_from_json(const json& j, const std::string& what) {
  std::vector<ReferencePoint> out;
  try {
    for (const auto& p : j.at("points")) {
      ReferencePoint r{parse_signal_kind(p.at("signal").get<std::string>()),
                       parse_modality(p.at("modality").get<std::string>()), p.at("human_dprime").get<double>(),
                       p.at("stderr").get<double>()};
      if (!(r.stderr_ > 0.0)) throw InvalidArgument(what + ": stderr must be positive");
      out.push_back(r);
    }
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
  return out;
}

/// Predictions file: {"points": [{"signal","modality","dprime"}, ...]}
inline std::vector<Prediction> predictions_from_json(const json& j, const std::string& what) {
  std::vector<Prediction> out;
  try {
    for (const auto& p : j.at("points"))
      out.push_back({parse_signal_kind(p.at("signal").get<std::string>()),
                     parse_modality(p.at("modality").get<std::string>()), p.at("dprime").get<double>()});
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
  return out;
}

inline json to_json(const FitResult& r) {
  json terms = json::array();
  for (const auto& t : r.terms)
    terms.push_back({{"label", t.label}, {"human", t.human}, {"stderr", t.stderr_}, {"model", t.model}, {"nll", t.nll}});
  return {{"mode", to_string(r.mode)}, {"terms", terms}, {"total_nll", r.total}};
}

}  // namespace foviq
